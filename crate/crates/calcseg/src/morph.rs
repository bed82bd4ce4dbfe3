//! Connected-component analysis of binary masks and the shape statistics
//! derived from them.
//!
//! A binarized prediction (or an annotation) is partitioned into connected
//! components, each treated as one calcification. Components feed per-image
//! statistics (count, mean area, area spread), size histograms, and
//! follow-up comparisons between two acquisitions of the same patient.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Grid2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based label, assigned in row-major order of first-encountered pixel.
    pub id: u32,
    pub pixel_count: usize,
    /// (min_y, min_x, max_y, max_x), inclusive.
    pub bounding_box: (usize, usize, usize, usize),
    /// Mean pixel coordinate, (y, x).
    pub centroid: (f64, f64),
}

/// A labeling of a binary mask into connected components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    labels: Grid2<u32>,
    components: Vec<Component>,
    pub connectivity: Connectivity,
}

impl ComponentSet {
    /// Label grid: 0 is background, k is the component with id k.
    pub fn labels(&self) -> &Grid2<u32> {
        &self.labels
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Two-pass union-find labeling. Component ids are consecutive from 1 in
/// row-major order of each component's first pixel, so the labeling is
/// deterministic regardless of thread count or platform.
pub fn connected_components(mask: &Grid2<u8>, connectivity: Connectivity) -> ComponentSet {
    let (h, w) = (mask.height(), mask.width());
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0]; // parent[0] unused, label 0 = background

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    fn union(parent: &mut [u32], a: u32, b: u32) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        // Always point the larger root at the smaller so the surviving root
        // is the earliest provisional label.
        if ra < rb {
            parent[rb as usize] = ra;
        } else {
            parent[ra as usize] = rb;
        }
    }

    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let idx = y * w + x;
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            if x > 0 {
                neighbors[n] = provisional[idx - 1];
                n += 1;
            }
            if y > 0 {
                neighbors[n] = provisional[idx - w];
                n += 1;
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbors[n] = provisional[idx - w - 1];
                        n += 1;
                    }
                    if x + 1 < w {
                        neighbors[n] = provisional[idx - w + 1];
                        n += 1;
                    }
                }
            }
            let mut label = 0u32;
            for &nb in &neighbors[..n] {
                if nb != 0 {
                    if label == 0 {
                        label = nb;
                    } else if nb != label {
                        union(&mut parent, label, nb);
                    }
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[idx] = label;
        }
    }

    let mut labels = Grid2::<u32>::new(h, w);
    let mut remap = vec![0u32; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p);
            let id = if remap[root as usize] == 0 {
                let id = components.len() as u32 + 1;
                remap[root as usize] = id;
                components.push(Component {
                    id,
                    pixel_count: 0,
                    bounding_box: (y, x, y, x),
                    centroid: (0.0, 0.0),
                });
                id
            } else {
                remap[root as usize]
            };
            labels.set(y, x, id);
            let c = &mut components[id as usize - 1];
            c.pixel_count += 1;
            let (y0, x0, y1, x1) = c.bounding_box;
            c.bounding_box = (y0.min(y), x0.min(x), y1.max(y), x1.max(x));
            c.centroid.0 += y as f64;
            c.centroid.1 += x as f64;
        }
    }
    for c in &mut components {
        c.centroid.0 /= c.pixel_count as f64;
        c.centroid.1 /= c.pixel_count as f64;
    }
    ComponentSet {
        labels,
        components,
        connectivity,
    }
}

/// Count, mean and spread of calcification areas, in square millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStats {
    pub num_calcifications: usize,
    pub mean_area_mm2: f64,
    pub area_std_mm2: f64,
    /// Per-component areas in component-id order.
    pub areas_mm2: Vec<f64>,
    pub pixel_spacing_mm: f64,
}

/// Converts pixel counts to physical areas. The spread is the sample
/// standard deviation (n - 1 denominator), zero for fewer than two
/// components.
pub fn shape_stats(components: &ComponentSet, pixel_spacing_mm: f64) -> Result<ShapeStats> {
    if !(pixel_spacing_mm > 0.0 && pixel_spacing_mm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel spacing must be positive, got {pixel_spacing_mm}"
        )));
    }
    let area_per_pixel = pixel_spacing_mm * pixel_spacing_mm;
    let areas_mm2: Vec<f64> = components
        .components()
        .iter()
        .map(|c| c.pixel_count as f64 * area_per_pixel)
        .collect();
    Ok(ShapeStats::from_areas(areas_mm2, pixel_spacing_mm))
}

impl ShapeStats {
    pub fn from_areas(areas_mm2: Vec<f64>, pixel_spacing_mm: f64) -> Self {
        let n = areas_mm2.len();
        let mean = if n > 0 {
            areas_mm2.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let std = if n > 1 {
            let ss = areas_mm2.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            num_calcifications: n,
            mean_area_mm2: mean,
            area_std_mm2: std,
            areas_mm2,
            pixel_spacing_mm,
        }
    }

    /// Component sizes in pixels, recovered from the areas.
    pub fn sizes_px(&self) -> Vec<usize> {
        let area_per_pixel = self.pixel_spacing_mm * self.pixel_spacing_mm;
        self.areas_mm2
            .iter()
            .map(|a| (a / area_per_pixel).round() as usize)
            .collect()
    }

    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Calcifications  Mean area [mm^2]  Area STD [mm^2]");
        let _ = writeln!(
            s,
            "{:<16}  {:<16.2}  {:<15.2}",
            self.num_calcifications, self.mean_area_mm2, self.area_std_mm2
        );
        s
    }
}

const STATS_HEADER_PREFIX: &str = "#calcseg-stats v1 pixel_spacing_mm=";

/// Writes the machine-readable stats file: a versioned header carrying the
/// pixel spacing, then one `key<TAB>value` line per field, with areas as a
/// comma-separated list at full precision.
pub fn write_stats(path: &Path, stats: &ShapeStats) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "{STATS_HEADER_PREFIX}{}", stats.pixel_spacing_mm);
    let _ = writeln!(s, "num_calcifications\t{}", stats.num_calcifications);
    let _ = writeln!(s, "mean_area_mm2\t{}", stats.mean_area_mm2);
    let _ = writeln!(s, "area_std_mm2\t{}", stats.area_std_mm2);
    let areas: Vec<String> = stats.areas_mm2.iter().map(|a| a.to_string()).collect();
    let _ = writeln!(s, "areas_mm2\t{}", areas.join(","));
    fs::write(path, s)?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<ShapeStats> {
    let text = fs::read_to_string(path)?;
    let fail = |message: String| Error::FileFormat {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let spacing: f64 = match lines.next().and_then(|l| l.strip_prefix(STATS_HEADER_PREFIX)) {
        Some(rest) => rest
            .parse()
            .map_err(|_| fail(format!("bad pixel spacing {rest:?}")))?,
        None => {
            return Err(fail(format!(
                "missing header, expected a line starting with {STATS_HEADER_PREFIX:?}"
            )))
        }
    };
    let mut areas: Option<Vec<f64>> = None;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| fail(format!("bad record {line:?}")))?;
        if key == "areas_mm2" {
            let parsed: std::result::Result<Vec<f64>, _> = if value.is_empty() {
                Ok(Vec::new())
            } else {
                value.split(',').map(str::parse).collect()
            };
            areas = Some(parsed.map_err(|_| fail(format!("bad areas list {value:?}")))?);
        }
        // num/mean/std are derived from the areas on read.
    }
    let areas = areas.ok_or_else(|| fail("missing areas_mm2 record".into()))?;
    Ok(ShapeStats::from_areas(areas, spacing))
}

/// Side-by-side change between two acquisitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub before: ShapeStats,
    pub after: ShapeStats,
}

impl ComparisonReport {
    pub fn count_delta(&self) -> i64 {
        self.after.num_calcifications as i64 - self.before.num_calcifications as i64
    }

    pub fn mean_area_delta(&self) -> f64 {
        self.after.mean_area_mm2 - self.before.mean_area_mm2
    }

    pub fn area_std_delta(&self) -> f64 {
        self.after.area_std_mm2 - self.before.area_std_mm2
    }

    /// Aligned text table: one row per statistic, columns for the earlier
    /// acquisition, the later one, and the change.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<18}  {:>8}  {:>8}  {:>8}", "", "before", "after", "change");
        let _ = writeln!(
            s,
            "{:<18}  {:>8}  {:>8}  {:>+8}",
            "# Calcifications",
            self.before.num_calcifications,
            self.after.num_calcifications,
            self.count_delta()
        );
        let _ = writeln!(
            s,
            "{:<18}  {:>8.2}  {:>8.2}  {:>+8.2}",
            "Mean area [mm^2]",
            self.before.mean_area_mm2,
            self.after.mean_area_mm2,
            self.mean_area_delta()
        );
        let _ = writeln!(
            s,
            "{:<18}  {:>8.2}  {:>8.2}  {:>+8.2}",
            "Area STD [mm^2]",
            self.before.area_std_mm2,
            self.after.area_std_mm2,
            self.area_std_delta()
        );
        s
    }

    /// Machine-readable records: `statistic<TAB>before<TAB>after<TAB>change`.
    pub fn render_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#calcseg-comparison v1");
        let _ = writeln!(s, "statistic\tbefore\tafter\tchange");
        let _ = writeln!(
            s,
            "num_calcifications\t{}\t{}\t{}",
            self.before.num_calcifications,
            self.after.num_calcifications,
            self.count_delta()
        );
        let _ = writeln!(
            s,
            "mean_area_mm2\t{}\t{}\t{}",
            self.before.mean_area_mm2,
            self.after.mean_area_mm2,
            self.mean_area_delta()
        );
        let _ = writeln!(
            s,
            "area_std_mm2\t{}\t{}\t{}",
            self.before.area_std_mm2,
            self.after.area_std_mm2,
            self.area_std_delta()
        );
        s
    }
}

pub fn compare_followup(before: ShapeStats, after: ShapeStats) -> ComparisonReport {
    ComparisonReport { before, after }
}

/// Counts of component sizes (in pixels) per bin. Bins span consecutive
/// edges half-open, and the last edge opens an unbounded final bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub bin_edges: Vec<usize>,
    pub counts: Vec<u64>,
}

/// Default edges: steps of 10 up to an open-ended bin for sizes of 100
/// pixels and above.
pub fn default_histogram_edges() -> Vec<usize> {
    (0..=10).map(|i| i * 10).collect()
}

/// Bins every component size from every input. Sizes below the first edge
/// are not counted.
pub fn size_histogram(stats: &[ShapeStats], bin_edges: &[usize]) -> Result<SizeHistogram> {
    if bin_edges.is_empty() {
        return Err(Error::InvalidArgument("bin_edges must be non-empty".into()));
    }
    if bin_edges.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidArgument(format!(
            "bin_edges must be strictly increasing, got {bin_edges:?}"
        )));
    }
    let mut counts = vec![0u64; bin_edges.len()];
    for s in stats {
        for size in s.sizes_px() {
            // partition_point gives the first edge > size; the bin index is
            // one less. Sizes below edge 0 fall outside every bin.
            let bin = bin_edges.partition_point(|&e| e <= size);
            if bin > 0 {
                counts[bin - 1] += 1;
            }
        }
    }
    Ok(SizeHistogram {
        bin_edges: bin_edges.to_vec(),
        counts,
    })
}

impl SizeHistogram {
    /// Tab-separated export: `bin_start<TAB>bin_end<TAB>count`, the final
    /// bin with `inf` as its end.
    pub fn render_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#calcseg-histogram v1");
        let _ = writeln!(s, "bin_start\tbin_end\tcount");
        for (i, &count) in self.counts.iter().enumerate() {
            let end = self
                .bin_edges
                .get(i + 1)
                .map_or_else(|| "inf".to_string(), ToString::to_string);
            let _ = writeln!(s, "{}\t{end}\t{count}", self.bin_edges[i]);
        }
        s
    }
}

/// Verifies the two label grids cover the same geometry.
pub fn check_same_grid(a: &ComponentSet, b: &ComponentSet) -> Result<()> {
    let (ah, aw) = (a.labels().height(), a.labels().width());
    let (bh, bw) = (b.labels().height(), b.labels().width());
    if (ah, aw) != (bh, bw) {
        return Err(Error::dim_mismatch(
            "component grids",
            format!("{ah}x{aw}"),
            format!("{bh}x{bw}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Grid2<u8> {
        let h = rows.len();
        let w = rows[0].len();
        let mut mask = Grid2::<u8>::new(h, w);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    mask.set(y, x, 1);
                }
            }
        }
        mask
    }

    #[test]
    fn empty_mask_has_no_components() {
        let set = connected_components(&Grid2::<u8>::new(8, 8), Connectivity::Eight);
        assert!(set.is_empty());
        assert!(set.labels().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn diagonal_pixels_split_by_connectivity() {
        let mask = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&mask, Connectivity::Eight).len(), 1);
        assert_eq!(connected_components(&mask, Connectivity::Four).len(), 2);
    }

    #[test]
    fn ids_follow_row_major_first_encounter() {
        let mask = mask_from(&[
            "..#..#",
            "......",
            "#.....",
        ]);
        let set = connected_components(&mask, Connectivity::Eight);
        assert_eq!(set.len(), 3);
        assert_eq!(set.labels().get(0, 2), 1);
        assert_eq!(set.labels().get(0, 5), 2);
        assert_eq!(set.labels().get(2, 0), 3);
    }

    #[test]
    fn u_shape_merges_into_one_component() {
        // The two arms get distinct provisional labels that must be united
        // at the bottom of the U.
        let mask = mask_from(&[
            "#.#",
            "#.#",
            "###",
        ]);
        let set = connected_components(&mask, Connectivity::Four);
        assert_eq!(set.len(), 1);
        assert_eq!(set.components()[0].pixel_count, 7);
        assert_eq!(set.components()[0].bounding_box, (0, 0, 2, 2));
    }

    #[test]
    fn component_fields_are_consistent() {
        let mask = mask_from(&[
            ".##.",
            ".##.",
            "....",
        ]);
        let set = connected_components(&mask, Connectivity::Eight);
        assert_eq!(set.len(), 1);
        let c = &set.components()[0];
        assert_eq!(c.pixel_count, 4);
        assert_eq!(c.bounding_box, (0, 1, 1, 2));
        assert_eq!(c.centroid, (0.5, 1.5));
    }

    #[test]
    fn four_pixel_component_at_tenth_millimeter_spacing() {
        let mask = mask_from(&["##", "##"]);
        let set = connected_components(&mask, Connectivity::Eight);
        let stats = shape_stats(&set, 0.1).unwrap();
        assert_eq!(stats.num_calcifications, 1);
        assert!((stats.mean_area_mm2 - 0.04).abs() < 1e-12);
        assert_eq!(stats.area_std_mm2, 0.0);
    }

    #[test]
    fn three_component_fixture_matches_hand_arithmetic() {
        // Components of 2, 4 and 6 pixels at 0.5 mm spacing: areas 0.5, 1.0
        // and 1.5 mm^2, mean 1.0, sample std 0.5.
        let mask = mask_from(&[
            "##........",
            "..........",
            "####......",
            "..........",
            "######....",
        ]);
        let set = connected_components(&mask, Connectivity::Eight);
        let stats = shape_stats(&set, 0.5).unwrap();
        assert_eq!(stats.areas_mm2, vec![0.5, 1.0, 1.5]);
        assert!((stats.mean_area_mm2 - 1.0).abs() < 1e-12);
        assert!((stats.area_std_mm2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn summary_table_renders_the_documented_layout() {
        let stats = ShapeStats {
            num_calcifications: 13,
            mean_area_mm2: 1.22,
            area_std_mm2: 0.89,
            areas_mm2: vec![],
            pixel_spacing_mm: 0.1,
        };
        let table = stats.render_table();
        assert!(table.contains("# Calcifications"));
        assert!(table.contains("13"));
        assert!(table.contains("1.22"));
        assert!(table.contains("0.89"));
    }

    #[test]
    fn followup_comparison_renders_values_and_deltas() {
        let before = ShapeStats {
            num_calcifications: 7,
            mean_area_mm2: 0.57,
            area_std_mm2: 0.23,
            areas_mm2: vec![],
            pixel_spacing_mm: 0.1,
        };
        let after = ShapeStats {
            num_calcifications: 11,
            mean_area_mm2: 0.59,
            area_std_mm2: 0.61,
            areas_mm2: vec![],
            pixel_spacing_mm: 0.1,
        };
        let report = compare_followup(before, after);
        assert_eq!(report.count_delta(), 4);
        let table = report.render_table();
        for needle in ["before", "after", "change", "7", "11", "+4", "0.57", "0.61", "+0.02"] {
            assert!(table.contains(needle), "missing {needle:?} in:\n{table}");
        }
    }

    #[test]
    fn identical_stats_compare_with_zero_deltas() {
        let stats = ShapeStats::from_areas(vec![0.5, 1.0], 0.1);
        let report = compare_followup(stats.clone(), stats);
        assert_eq!(report.count_delta(), 0);
        assert_eq!(report.mean_area_delta(), 0.0);
        assert_eq!(report.area_std_delta(), 0.0);
    }

    #[test]
    fn stats_file_round_trips() {
        let stats = ShapeStats::from_areas(vec![0.04, 0.09, 0.25], 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.tsv");
        write_stats(&path, &stats).unwrap();
        assert_eq!(read_stats(&path).unwrap(), stats);

        let empty = ShapeStats::from_areas(vec![], 0.2);
        write_stats(&path, &empty).unwrap();
        assert_eq!(read_stats(&path).unwrap(), empty);
    }

    #[test]
    fn oversized_component_lands_in_the_open_bin() {
        let stats = ShapeStats::from_areas(vec![150.0], 1.0);
        let hist = size_histogram(&[stats], &default_histogram_edges()).unwrap();
        assert_eq!(hist.counts.iter().sum::<u64>(), 1);
        assert_eq!(*hist.counts.last().unwrap(), 1);
        assert!(hist.render_records().contains("100\tinf\t1"));
    }

    #[test]
    fn empty_stats_give_an_all_zero_histogram() {
        let hist = size_histogram(&[], &default_histogram_edges()).unwrap();
        assert!(hist.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn histogram_matches_per_element_binning() {
        let sizes: Vec<usize> = (0..50).map(|i| (i * 37) % 120).collect();
        let areas: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let stats = ShapeStats::from_areas(areas, 1.0);
        let edges = vec![0usize, 5, 25, 60, 100];
        let hist = size_histogram(&[stats], &edges).unwrap();

        let mut expected = vec![0u64; edges.len()];
        for &s in &sizes {
            for (i, &e) in edges.iter().enumerate().rev() {
                if s >= e {
                    expected[i] += 1;
                    break;
                }
            }
        }
        assert_eq!(hist.counts, expected);
    }

    #[test]
    fn unsorted_bin_edges_are_rejected() {
        assert!(size_histogram(&[], &[10, 5]).is_err());
        assert!(size_histogram(&[], &[]).is_err());
        assert!(size_histogram(&[], &[3, 3]).is_err());
    }
}
