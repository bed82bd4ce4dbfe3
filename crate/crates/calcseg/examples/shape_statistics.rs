//! Extracts calcification shape statistics from a segmentation: connected
//! components, per-component areas in square millimeters, and a size
//! histogram, printed the way a radiologist-facing report would show them.
//!
//! ```text
//! cargo run --release --example shape_statistics
//! ```

use calcseg::data::{generate_synthetic, SyntheticParams};
use calcseg::morph::{
    connected_components, default_histogram_edges, shape_stats, size_histogram, Connectivity,
};

fn main() -> calcseg::Result<()> {
    let sample = generate_synthetic(&SyntheticParams {
        size: 512,
        seed: 12,
        ..SyntheticParams::default()
    })?;

    let components = connected_components(&sample.mask, Connectivity::Eight);
    println!("found {} calcifications", components.len());
    for component in components.components().iter().take(5) {
        println!(
            "  component {}: {} px, centroid ({:.1}, {:.1})",
            component.id, component.pixel_count, component.centroid.0, component.centroid.1
        );
    }
    if components.len() > 5 {
        println!("  ...");
    }

    let stats = shape_stats(&components, f64::from(sample.record.pixel_spacing_mm))?;
    println!("\n{}", stats.render_table());

    let histogram = size_histogram(std::slice::from_ref(&stats), &default_histogram_edges())?;
    println!("size distribution (component area in px):");
    let edges = &histogram.bin_edges;
    for (i, &count) in histogram.counts.iter().enumerate() {
        let label = if i + 1 < edges.len() {
            format!("{:>3}-{:<3}", edges[i], edges[i + 1])
        } else {
            format!("{:>3}+   ", edges[i])
        };
        println!("  {label} {}", "#".repeat(count as usize));
    }
    Ok(())
}
