//! Checks the memory bound that motivates tiling: peak heap use of tiled
//! inference must stay far below a whole-image forward pass.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use calcseg::infer::{predict_full, predict_single_pass, TileSpec};
use calcseg::model::{ArchConfig, Model};
use calcseg::run_with_threads;
use calcseg::tensor::Grid2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct CountingAllocator;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn note_alloc(size: usize) {
    let live = LIVE.fetch_add(size, Ordering::SeqCst) + size;
    PEAK.fetch_max(live, Ordering::SeqCst);
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            note_alloc(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::SeqCst);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new_ptr = System.realloc(ptr, layout, new_size);
        if !new_ptr.is_null() {
            LIVE.fetch_sub(layout.size(), Ordering::SeqCst);
            note_alloc(new_size);
        }
        new_ptr
    }
}

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

/// Peak heap growth over `f`, relative to the heap level at entry.
fn peak_during(f: impl FnOnce()) -> usize {
    let base = LIVE.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    f();
    PEAK.load(Ordering::SeqCst).saturating_sub(base)
}

#[test]
fn tiled_inference_uses_a_fraction_of_single_pass_memory() {
    let arch = ArchConfig {
        num_blocks: 2,
        branch_kernels: vec![1, 3, 5],
        branch_width: 4,
        final_kernel: 5,
        ..ArchConfig::default()
    };
    let model = Model::<f32>::build(arch, 3).unwrap();
    let halo = (model.receptive_field() - 1) / 2;

    let size = 640usize;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let image = Grid2::from_vec(
        size,
        size,
        (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();

    // One thread so the rayon pool does not interleave other allocations.
    run_with_threads(1, || {
        let single_peak = peak_during(|| {
            let map = predict_single_pass(&model, &image).unwrap();
            assert_eq!(map.height(), size);
        });

        let spec = TileSpec {
            tile_size: 64,
            halo,
            strict: true,
        };
        let tiled_peak = peak_during(|| {
            let map = predict_full(&model, &image, &spec, 0.1, "mem").unwrap();
            assert_eq!(map.height(), size);
        });

        // The output map itself costs size^2 floats; everything beyond that
        // is working memory. Tiling must cut the total peak by a wide margin.
        assert!(
            tiled_peak * 4 < single_peak,
            "tiled peak {tiled_peak} B is not well under single-pass peak {single_peak} B"
        );
    });
}
