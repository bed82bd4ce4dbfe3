//! Compares calcification statistics between a baseline exam and a
//! follow-up of the same breast, the report a reader sees when judging
//! interval change.
//!
//! ```text
//! cargo run --release --example followup_comparison
//! ```

use calcseg::data::{generate_synthetic, SyntheticParams};
use calcseg::morph::{compare_followup, connected_components, shape_stats, Connectivity};

fn main() -> calcseg::Result<()> {
    // Two synthetic exams standing in for a prior and a current mammogram.
    // More clusters in the follow-up models interval progression.
    let baseline = generate_synthetic(&SyntheticParams {
        size: 512,
        seed: 31,
        ..SyntheticParams::default()
    })?;
    let followup = generate_synthetic(&SyntheticParams {
        size: 512,
        seed: 32,
        num_isolated: 6,
        num_clusters: 3,
        // Extra blobs push past the default positive-fraction ceiling.
        max_positive_fraction: None,
        ..SyntheticParams::default()
    })?;

    let spacing = f64::from(baseline.record.pixel_spacing_mm);
    let before = shape_stats(
        &connected_components(&baseline.mask, Connectivity::Eight),
        spacing,
    )?;
    let after = shape_stats(
        &connected_components(&followup.mask, Connectivity::Eight),
        spacing,
    )?;

    let report = compare_followup(before, after);
    println!("{}", report.render_table());
    let delta = report.count_delta();
    println!(
        "interval change: {} calcifications ({delta:+})",
        if delta > 0 {
            "more"
        } else if delta < 0 {
            "fewer"
        } else {
            "same number of"
        },
    );
    println!("\nper-quantity detail:");
    println!("{}", report.render_records());
    Ok(())
}
