//! Reference implementations shared by the integration tests. Everything
//! here trades speed for obviousness so it can serve as an oracle.

#![allow(dead_code)]

use calcseg::infer::ProbabilityMap;
use calcseg::morph::Connectivity;
use calcseg::tensor::Grid2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn map_of(scores: &[f32], width: usize) -> ProbabilityMap {
    let height = scores.len() / width;
    ProbabilityMap::new(
        Grid2::from_vec(height, width, scores.to_vec()).unwrap(),
        0.1,
        "test",
    )
}

pub fn mask_of(labels: &[bool], width: usize) -> Grid2<u8> {
    let height = labels.len() / width;
    Grid2::from_vec(height, width, labels.iter().map(|&l| u8::from(l)).collect()).unwrap()
}

/// Random scores quantized to one decimal so ties occur across classes.
pub fn tied_sample(seed: u64, n: usize) -> (Vec<f32>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n)
        .map(|_| (rng.gen_range(0.0f32..1.0) * 10.0).round() / 10.0)
        .collect();
    let labels = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    (scores, labels)
}

/// Mann-Whitney statistic: fraction of (positive, negative) pairs ranked
/// correctly, ties credited one half.
pub fn mann_whitney(scores: &[f32], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| f64::from(s))
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| f64::from(s))
        .collect();
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    credit / (pos.len() as f64 * neg.len() as f64)
}

/// Average precision recomputed from scratch at every distinct score, with
/// naive quadratic counting per threshold.
pub fn exhaustive_aps(scores: &[f32], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f32> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut aps = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / total_pos;
        aps += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    aps
}

/// Reference labeling: row-major scan, breadth-first flood fill from each
/// unvisited foreground pixel. Assigns ids in discovery order, exactly the
/// convention the union-find implementation promises.
pub fn flood_fill_labels(mask: &Grid2<u8>, connectivity: Connectivity) -> Grid2<u32> {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = Grid2::new(h, w);
    let mut next = 1u32;
    let neighbours: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 || labels.get(y, x) != 0 {
                continue;
            }
            let id = next;
            next += 1;
            let mut queue = std::collections::VecDeque::from([(y, x)]);
            labels.set(y, x, id);
            while let Some((cy, cx)) = queue.pop_front() {
                for &(dy, dx) in neighbours {
                    let ny = cy as isize + dy;
                    let nx = cx as isize + dx;
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask.get(ny, nx) != 0 && labels.get(ny, nx) == 0 {
                        labels.set(ny, nx, id);
                        queue.push_back((ny, nx));
                    }
                }
            }
        }
    }
    labels
}

pub fn random_mask(seed: u64, size: usize, density: f64) -> Grid2<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..size * size)
        .map(|_| u8::from(rng.gen_bool(density)))
        .collect();
    Grid2::from_vec(size, size, data).unwrap()
}
