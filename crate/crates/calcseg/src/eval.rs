//! Pixel-level and component-level evaluation.
//!
//! Three regimes: ROC with its area for pixel scoring, precision-recall
//! with the average precision score (robust to the overwhelming negative
//! majority), and FROC for detection quality measured in whole
//! calcifications (components) rather than pixels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::infer::ProbabilityMap;
use crate::morph::{check_same_grid, connected_components, ComponentSet, Connectivity};
use crate::tensor::Grid2;

/// Above this many pixels the threshold grid switches from every distinct
/// score to evenly spaced quantiles.
const EXACT_SWEEP_LIMIT: usize = 10_000;
const QUANTILE_GRID: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Roc,
    Pr,
    Froc,
}

impl CurveKind {
    fn name(self) -> &'static str {
        match self {
            CurveKind::Roc => "roc",
            CurveKind::Pr => "pr",
            CurveKind::Froc => "froc",
        }
    }

    fn summary_name(self) -> Option<&'static str> {
        match self {
            CurveKind::Roc => Some("auc"),
            CurveKind::Pr => Some("aps"),
            CurveKind::Froc => None,
        }
    }
}

/// One evaluated curve: points with the thresholds that produced them, and
/// a scalar summary where the regime defines one (AUC, APS).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub kind: CurveKind,
    /// (x, y) pairs: (FPR, TPR) for ROC, (recall, precision) for PR,
    /// (mean false positives per image, sensitivity) for FROC.
    pub points: Vec<(f64, f64)>,
    /// Binarization threshold per point; infinity for the all-negative
    /// starting point of a ROC sweep.
    pub thresholds: Vec<f64>,
    pub summary: Option<f64>,
}

fn collect_scores(
    maps: &[ProbabilityMap],
    masks: &[Grid2<u8>],
) -> Result<(Vec<(f64, bool)>, usize, usize)> {
    if maps.len() != masks.len() {
        return Err(Error::dim_mismatch("map/mask lists", maps.len(), masks.len()));
    }
    let mut scored = Vec::new();
    let (mut positives, mut negatives) = (0usize, 0usize);
    for (map, mask) in maps.iter().zip(masks) {
        if (map.height(), map.width()) != (mask.height(), mask.width()) {
            return Err(Error::dim_mismatch(
                "map vs mask",
                format!("{}x{}", map.height(), map.width()),
                format!("{}x{}", mask.height(), mask.width()),
            ));
        }
        for (&p, &label) in map.grid().data().iter().zip(mask.data()) {
            let positive = label != 0;
            if positive {
                positives += 1;
            } else {
                negatives += 1;
            }
            scored.push((f64::from(p), positive));
        }
    }
    Ok((scored, positives, negatives))
}

/// Descending threshold grid: every distinct score while the input is
/// small, 1024 quantiles (always including the extremes) otherwise.
fn threshold_grid(scored: &[(f64, bool)]) -> Vec<f64> {
    let mut scores: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    if scored.len() <= EXACT_SWEEP_LIMIT || scores.len() <= QUANTILE_GRID {
        return scores;
    }
    let n = scores.len();
    let mut grid: Vec<f64> = (0..QUANTILE_GRID)
        .map(|i| scores[i * (n - 1) / (QUANTILE_GRID - 1)])
        .collect();
    grid.dedup();
    grid
}

/// Sweeps the grid in descending order, yielding cumulative (true positive,
/// false positive) counts at `score >= threshold` for each threshold.
fn sweep(scored: &mut [(f64, bool)], grid: &[f64]) -> Vec<(usize, usize)> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut counts = Vec::with_capacity(grid.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    for &t in grid {
        while i < scored.len() && scored[i].0 >= t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        counts.push((tp, fp));
    }
    counts
}

/// ROC curve over all pixels of all map/mask pairs, with the area under it
/// by trapezoidal integration.
pub fn roc_auc(maps: &[ProbabilityMap], masks: &[Grid2<u8>]) -> Result<EvalCurve> {
    let (mut scored, positives, negatives) = collect_scores(maps, masks)?;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes, got {positives} positive and {negatives} negative pixels"
        )));
    }
    let grid = threshold_grid(&scored);
    let counts = sweep(&mut scored, &grid);

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    for (&t, &(tp, fp)) in grid.iter().zip(&counts) {
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        thresholds.push(t);
    }
    let auc = points
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0)
        .sum();
    Ok(EvalCurve {
        kind: CurveKind::Roc,
        points,
        thresholds,
        summary: Some(auc),
    })
}

/// Precision-recall curve with the average precision score
/// sum_n (R_n - R_{n-1}) * P_n over the descending-threshold sweep.
pub fn precision_recall_aps(maps: &[ProbabilityMap], masks: &[Grid2<u8>]) -> Result<EvalCurve> {
    let (mut scored, positives, _) = collect_scores(maps, masks)?;
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "precision-recall needs at least one positive pixel".into(),
        ));
    }
    let grid = threshold_grid(&scored);
    let counts = sweep(&mut scored, &grid);

    let mut points = Vec::with_capacity(grid.len());
    let mut aps = 0.0;
    let mut recall_prev = 0.0;
    for &(tp, fp) in &counts {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / positives as f64;
        aps += (recall - recall_prev) * precision;
        recall_prev = recall;
        points.push((recall, precision));
    }
    Ok(EvalCurve {
        kind: CurveKind::Pr,
        points,
        thresholds: grid,
        summary: Some(aps),
    })
}

/// Component-level confusion counts between a prediction and the ground
/// truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Qualifying (predicted id, ground-truth id) pairs, sorted.
    pub matched_pairs: Vec<(u32, u32)>,
}

/// When does a predicted component count as hitting a ground-truth one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchRule {
    /// A single shared pixel suffices (the default).
    AnyOverlap,
    /// Intersection over union of the two components must reach this value.
    IouAtLeast(f64),
}

/// Matches with the single-pixel-overlap rule.
pub fn match_components(predicted: &ComponentSet, truth: &ComponentSet) -> Result<MatchResult> {
    match_components_with(predicted, truth, MatchRule::AnyOverlap)
}

/// A ground-truth component is detected when any predicted component
/// qualifies against it; a predicted component qualifying against nothing
/// is one false positive. One predicted component bridging several
/// ground-truth components detects them all.
pub fn match_components_with(
    predicted: &ComponentSet,
    truth: &ComponentSet,
    rule: MatchRule,
) -> Result<MatchResult> {
    check_same_grid(predicted, truth)?;
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &t) in predicted.labels().data().iter().zip(truth.labels().data()) {
        if p != 0 && t != 0 {
            *overlap.entry((p, t)).or_insert(0) += 1;
        }
    }
    let mut matched_pairs = Vec::new();
    for (&(p, t), &inter) in &overlap {
        let qualifies = match rule {
            MatchRule::AnyOverlap => true,
            MatchRule::IouAtLeast(min_iou) => {
                let a = predicted.components()[p as usize - 1].pixel_count;
                let b = truth.components()[t as usize - 1].pixel_count;
                inter as f64 / (a + b - inter) as f64 >= min_iou
            }
        };
        if qualifies {
            matched_pairs.push((p, t));
        }
    }
    let detected: std::collections::BTreeSet<u32> =
        matched_pairs.iter().map(|&(_, t)| t).collect();
    let hitting: std::collections::BTreeSet<u32> =
        matched_pairs.iter().map(|&(p, _)| p).collect();
    Ok(MatchResult {
        true_positives: detected.len(),
        false_positives: predicted.len() - hitting.len(),
        false_negatives: truth.len() - detected.len(),
        matched_pairs,
    })
}

/// FROC: component-level sensitivity against mean false positives per
/// image, swept over the given thresholds in descending order.
pub fn froc(
    maps: &[ProbabilityMap],
    masks: &[Grid2<u8>],
    thresholds: &[f64],
) -> Result<EvalCurve> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("FROC needs at least one image".into()));
    }
    if maps.len() != masks.len() {
        return Err(Error::dim_mismatch("map/mask lists", maps.len(), masks.len()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("FROC threshold grid is empty".into()));
    }
    let truth_sets: Vec<ComponentSet> = masks
        .iter()
        .map(|m| connected_components(m, Connectivity::Eight))
        .collect();
    let total_truth: usize = truth_sets.iter().map(ComponentSet::len).sum();
    if total_truth == 0 {
        return Err(Error::UndefinedMetric(
            "FROC needs at least one ground-truth component".into(),
        ));
    }

    let mut grid = thresholds.to_vec();
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("FROC thresholds must be finite".into()));
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let mut points = Vec::with_capacity(grid.len());
    for &t in &grid {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (map, truth) in maps.iter().zip(&truth_sets) {
            let predicted = connected_components(&map.binarize(t as f32), Connectivity::Eight);
            let result = match_components(&predicted, truth)?;
            tp += result.true_positives;
            fp += result.false_positives;
        }
        points.push((
            fp as f64 / maps.len() as f64,
            tp as f64 / total_truth as f64,
        ));
    }
    Ok(EvalCurve {
        kind: CurveKind::Froc,
        points,
        thresholds: grid,
        summary: None,
    })
}

/// Writes a curve as tab-separated text: a versioned header line carrying
/// the kind and summary, a column line, then one `x y threshold` row per
/// point.
pub fn write_curve_tsv(path: &Path, curve: &EvalCurve) -> Result<()> {
    let mut s = String::new();
    let _ = write!(s, "#calcseg-curve v1 kind={}", curve.kind.name());
    if let (Some(name), Some(value)) = (curve.kind.summary_name(), curve.summary) {
        let _ = write!(s, " {name}={value:.9}");
    }
    s.push('\n');
    let _ = writeln!(s, "x\ty\tthreshold");
    for (i, &(x, y)) in curve.points.iter().enumerate() {
        let t = curve.thresholds.get(i).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{x:.9}\t{y:.9}\t{t:.9}");
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_of(values: Vec<f32>, w: usize) -> ProbabilityMap {
        let h = values.len() / w;
        ProbabilityMap::new(Grid2::from_vec(h, w, values).unwrap(), 0.1, "t")
    }

    fn mask_of(values: Vec<u8>, w: usize) -> Grid2<u8> {
        let h = values.len() / w;
        Grid2::from_vec(h, w, values).unwrap()
    }

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
    fn perfectly_separated_scores_give_auc_one() {
        let map = map_of(vec![0.9, 0.8, 0.2, 0.1], 4);
        let mask = mask_of(vec![1, 1, 0, 0], 4);
        let curve = roc_auc(&[map], &[mask]).unwrap();
        assert!((curve.summary.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_chance_auc() {
        let map = map_of(vec![0.5; 6], 6);
        let mask = mask_of(vec![1, 0, 1, 0, 0, 0], 6);
        let curve = roc_auc(&[map], &[mask]).unwrap();
        assert!((curve.summary.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn six_pixel_roc_matches_hand_computation() {
        // Scores desc: 0.9(+) 0.7(-) 0.6(+) 0.4(+) 0.3(-) 0.1(-)
        // Pair counting: of 9 pos/neg pairs the positive wins 7, so
        // AUC = 7/9.
        let map = map_of(vec![0.9, 0.7, 0.6, 0.4, 0.3, 0.1], 6);
        let mask = mask_of(vec![1, 0, 1, 1, 0, 0], 6);
        let curve = roc_auc(&[map], &[mask]).unwrap();
        assert!((curve.summary.unwrap() - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn roc_requires_both_classes() {
        let map = map_of(vec![0.5; 4], 4);
        assert!(matches!(
            roc_auc(&[map.clone()], &[mask_of(vec![1; 4], 4)]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            roc_auc(&[map], &[mask_of(vec![0; 4], 4)]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn perfect_predictor_gives_aps_one() {
        let map = map_of(vec![0.9, 0.8, 0.2, 0.1], 4);
        let mask = mask_of(vec![1, 1, 0, 0], 4);
        let curve = precision_recall_aps(&[map], &[mask]).unwrap();
        assert!((curve.summary.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_aps_of_the_positive_fraction() {
        let map = map_of(vec![0.5; 8], 8);
        let mask = mask_of(vec![1, 1, 0, 0, 0, 0, 0, 0], 8);
        let curve = precision_recall_aps(&[map], &[mask]).unwrap();
        assert!((curve.summary.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn aps_needs_a_positive_pixel() {
        let map = map_of(vec![0.5; 4], 4);
        assert!(matches!(
            precision_recall_aps(&[map], &[mask_of(vec![0; 4], 4)]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn identical_masks_match_perfectly() {
        let mask = mask_from(&[
            "##...#",
            "......",
            "...##.",
        ]);
        let set = connected_components(&mask, Connectivity::Eight);
        let result = match_components(&set, &set).unwrap();
        assert_eq!(result.true_positives, 3);
        assert_eq!(result.false_positives, 0);
        assert_eq!(result.false_negatives, 0);
    }

    #[test]
    fn empty_prediction_misses_everything() {
        let truth = connected_components(
            &mask_from(&["#.#", "...", "..."]),
            Connectivity::Eight,
        );
        let empty = connected_components(&Grid2::<u8>::new(3, 3), Connectivity::Eight);
        let result = match_components(&empty, &truth).unwrap();
        assert_eq!(result.true_positives, 0);
        assert_eq!(result.false_positives, 0);
        assert_eq!(result.false_negatives, 2);
    }

    #[test]
    fn bridging_blob_detects_both_and_stray_blob_is_one_fp() {
        let truth = mask_from(&[
            "................",
            ".##.........##..",
            ".##.........##..",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
        ]);
        let predicted = mask_from(&[
            "................",
            ".##############.",
            "................",
            "................",
            "................",
            "................",
            "................",
            "......###.......",
            "......###.......",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
            "................",
        ]);
        let result = match_components(
            &connected_components(&predicted, Connectivity::Eight),
            &connected_components(&truth, Connectivity::Eight),
        )
        .unwrap();
        assert_eq!(result.true_positives, 2);
        assert_eq!(result.false_positives, 1);
        assert_eq!(result.false_negatives, 0);
        assert_eq!(result.matched_pairs, vec![(1, 1), (1, 2)]);
    }

    #[test]
    fn iou_rule_is_stricter_than_any_overlap() {
        // Prediction shares one pixel with a 4-pixel truth blob:
        // IoU = 1 / 7.
        let truth = mask_from(&["##..", "##..", "...."]);
        let predicted = mask_from(&["....", ".##.", ".##."]);
        let p = connected_components(&predicted, Connectivity::Eight);
        let t = connected_components(&truth, Connectivity::Eight);
        let loose = match_components_with(&p, &t, MatchRule::AnyOverlap).unwrap();
        assert_eq!(loose.true_positives, 1);
        let strict = match_components_with(&p, &t, MatchRule::IouAtLeast(0.5)).unwrap();
        assert_eq!(strict.true_positives, 0);
        assert_eq!(strict.false_positives, 1);
        assert_eq!(strict.false_negatives, 1);
    }

    #[test]
    fn froc_on_a_perfect_prediction_sits_at_zero_fp_full_sensitivity() {
        let mask = mask_from(&["#...", "...#"]);
        let mut probs = vec![0.0f32; 8];
        probs[0] = 0.9;
        probs[7] = 0.9;
        let map = map_of(probs, 4);
        let curve = froc(&[map], &[mask], &[0.5, 0.7]).unwrap();
        assert_eq!(curve.points, vec![(0.0, 1.0), (0.0, 1.0)]);
    }

    #[test]
    fn froc_on_all_zero_predictions_has_zero_sensitivity() {
        let mask = mask_from(&["#...", "...#"]);
        let map = map_of(vec![0.0; 8], 4);
        let curve = froc(&[map], &[mask], &[0.3, 0.5, 0.7]).unwrap();
        assert!(curve.points.iter().all(|&(_, y)| y == 0.0));
    }

    #[test]
    fn froc_rejects_an_empty_threshold_grid() {
        let mask = mask_from(&["#."]);
        let map = map_of(vec![0.5, 0.5], 2);
        assert!(froc(&[map], &[mask], &[]).is_err());
    }

    #[test]
    fn curve_file_carries_kind_and_summary() {
        let map = map_of(vec![0.9, 0.8, 0.2, 0.1], 4);
        let mask = mask_of(vec![1, 1, 0, 0], 4);
        let curve = roc_auc(&[map], &[mask]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.tsv");
        write_curve_tsv(&path, &curve).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "#calcseg-curve v1 kind=roc auc=1.000000000"
        );
        assert_eq!(lines.next().unwrap(), "x\ty\tthreshold");
        assert_eq!(lines.next().unwrap(), "0.000000000\t0.000000000\tinf");
    }
}
