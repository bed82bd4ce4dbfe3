//! Generates a small synthetic mammogram dataset on disk: 16-bit grayscale
//! images, binary calcification masks, and a manifest that the training and
//! evaluation entry points consume.
//!
//! ```text
//! cargo run --release --example synthesize_dataset -- [OUT_DIR]
//! ```

use calcseg::data::{emit_dataset, load_dataset, SyntheticParams, ValidationMode};
use calcseg::morph::{connected_components, Connectivity};

fn main() -> calcseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-dataset".into());
    let params = SyntheticParams {
        size: 256,
        seed: 7,
        ..SyntheticParams::default()
    };

    let manifest = emit_dataset(out.as_ref(), &params, 8, "example")?;
    println!("wrote {}", manifest.display());

    let (dataset, report) = load_dataset(&manifest, ValidationMode::FailFast)?;
    println!(
        "loaded {} images tagged {:?} ({} skipped)",
        dataset.len(),
        dataset.tag(),
        report.skipped.len()
    );

    for index in 0..dataset.len() {
        let sample = dataset.load_sample(index)?;
        let positives = sample.mask.data().iter().filter(|&&m| m != 0).count();
        let components = connected_components(&sample.mask, Connectivity::Eight);
        println!(
            "{}: {}x{} px, {} positive pixels in {} calcifications",
            sample.record.image.display(),
            sample.record.width,
            sample.record.height,
            positives,
            components.len()
        );
    }
    Ok(())
}
