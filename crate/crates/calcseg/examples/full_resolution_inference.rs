//! Runs a model over a full-resolution image with overlap tiling, then
//! writes the probability map and the colored heatmap overlay next to it.
//! The tiled pass keeps peak memory flat no matter how large the image is,
//! and its output is identical to running the whole image at once.
//!
//! ```text
//! cargo run --release --example full_resolution_inference -- [OUT_DIR]
//! ```

use calcseg::data::{generate_synthetic, SyntheticParams};
use calcseg::heatmap::render_heatmap;
use calcseg::infer::{predict_full, save_probability_map, TileSpec};
use calcseg::model::{ArchConfig, Model};

fn main() -> calcseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-inference".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out)?;

    // An untrained compact model keeps the example fast; in a real flow the
    // model comes from `calcseg::checkpoint::load_checkpoint`.
    let arch = ArchConfig {
        num_blocks: 2,
        branch_kernels: vec![1, 3, 5, 9],
        branch_width: 8,
        final_kernel: 5,
        ..ArchConfig::default()
    };
    let model = Model::<f32>::build(arch, 5)?;

    let sample = generate_synthetic(&SyntheticParams {
        size: 1024,
        seed: 3,
        ..SyntheticParams::default()
    })?;

    let spec = TileSpec {
        tile_size: 256,
        halo: (model.receptive_field() - 1) / 2,
        strict: true,
    };
    println!(
        "tiling a {}x{} image into {} px tiles with a {} px halo",
        sample.image.height(),
        sample.image.width(),
        spec.tile_size,
        spec.halo
    );
    let map = predict_full(&model, &sample.image, &spec, 0.1, "example-image")?;

    let map_path = out.join("example.cmap");
    save_probability_map(&map_path, &map)?;
    println!("probability map -> {}", map_path.display());

    let heatmap = render_heatmap(&map, &sample.image)?;
    let png_path = out.join("example-heatmap.png");
    heatmap.save(&png_path)?;
    println!("heatmap overlay -> {}", png_path.display());

    let peak = map.grid().data().iter().cloned().fold(0.0f32, f32::max);
    println!("peak probability {peak:.3}");
    Ok(())
}
