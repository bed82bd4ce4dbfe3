//! Checks connected-component labeling against a flood-fill reference and
//! the shape statistics against their scaling identity.

mod common;

use calcseg::morph::{connected_components, shape_stats, Connectivity};
use common::{flood_fill_labels, random_mask};

#[test]
fn labeling_matches_flood_fill_on_random_masks() {
    for seed in 0..200u64 {
        let density = 0.15 + (seed % 5) as f64 * 0.15;
        let mask = random_mask(seed, 32, density);
        for connectivity in [Connectivity::Four, Connectivity::Eight] {
            let got = connected_components(&mask, connectivity);
            let want = flood_fill_labels(&mask, connectivity);
            assert_eq!(
                got.labels().data(),
                want.data(),
                "seed {seed} {connectivity:?}: label grids differ"
            );
            let want_count = want.data().iter().copied().max().unwrap_or(0) as usize;
            assert_eq!(got.len(), want_count, "seed {seed} {connectivity:?}");
        }
    }
}

#[test]
fn component_pixel_counts_match_flood_fill() {
    for seed in 200..240u64 {
        let mask = random_mask(seed, 32, 0.35);
        let got = connected_components(&mask, Connectivity::Eight);
        let want = flood_fill_labels(&mask, Connectivity::Eight);
        let mut counts = std::collections::BTreeMap::new();
        for &l in want.data() {
            if l != 0 {
                *counts.entry(l).or_insert(0usize) += 1;
            }
        }
        for comp in got.components() {
            assert_eq!(counts.get(&comp.id), Some(&comp.pixel_count), "seed {seed}");
        }
    }
}

#[test]
fn doubling_pixel_spacing_quadruples_all_areas() {
    let mask = random_mask(7, 48, 0.3);
    let components = connected_components(&mask, Connectivity::Eight);
    let fine = shape_stats(&components, 0.1).unwrap();
    let coarse = shape_stats(&components, 0.2).unwrap();

    assert_eq!(fine.num_calcifications, coarse.num_calcifications);
    assert!((coarse.mean_area_mm2 - 4.0 * fine.mean_area_mm2).abs() < 1e-12);
    assert!((coarse.area_std_mm2 - 4.0 * fine.area_std_mm2).abs() < 1e-12);
    for (c, f) in coarse.areas_mm2.iter().zip(&fine.areas_mm2) {
        assert!((c - 4.0 * f).abs() < 1e-12);
    }
}

#[test]
fn pixel_sizes_survive_the_area_round_trip() {
    // areas are pixel counts times spacing squared, so recovering pixel
    // counts from areas must be exact for any positive spacing.
    let mask = random_mask(9, 40, 0.25);
    let components = connected_components(&mask, Connectivity::Eight);
    for spacing in [0.05, 0.1, 0.34] {
        let stats = shape_stats(&components, spacing).unwrap();
        let want: Vec<usize> = components.components().iter().map(|c| c.pixel_count).collect();
        assert_eq!(stats.sizes_px(), want, "spacing {spacing}");
    }
}
