//! Shared helpers: random inputs and brute-force reference implementations
//! written independently of the library kernels.

#![allow(dead_code)]

pub mod gradients;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Σ over `a` of the distance to the closest point of `b`, by exhaustive search.
pub fn oracle_directed(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (ra, rb) = (rows(a), rows(b));
    ra.iter()
        .map(|p| rb.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum()
}

pub fn oracle_chamfer(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    oracle_directed(a, b) + oracle_directed(b, a)
}

/// Greedy FPS re-derived from its definition: each step takes the point whose
/// minimum distance to the chosen set is largest, lowest index on ties.
pub fn oracle_fps(a: &Array2<f64>, k: usize, start: usize) -> Vec<usize> {
    let pts = rows(a);
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best = (0usize, -1.0f64);
        for (i, p) in pts.iter().enumerate() {
            let d = chosen.iter().map(|&c| dist(p, &pts[c])).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

/// Nearest-source attribute copy, lowest index on ties.
pub fn oracle_transfer(generated: &Array2<f64>, source: &Array2<f32>) -> Array2<f32> {
    let mut out = Array2::zeros((generated.nrows(), 2));
    for (i, g) in generated.outer_iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (j, s) in source.outer_iter().enumerate() {
            let d = (0..3).map(|c| (g[c] - s[c] as f64).powi(2)).sum::<f64>();
            if d < best.1 {
                best = (j, d);
            }
        }
        out[[i, 0]] = source[[best.0, 3]];
        out[[i, 1]] = source[[best.0, 4]];
    }
    out
}

/// Smallest gap between the two closest candidate distances of any query;
/// small gaps mean a near-tie where the nearest-neighbor choice is unstable.
pub fn min_tie_gap(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let rb = rows(b);
    let mut gap = f64::INFINITY;
    for p in rows(a) {
        let mut d: Vec<f64> = rb.iter().map(|q| dist(&p, q)).collect();
        d.sort_by(f64::total_cmp);
        if d.len() > 1 {
            gap = gap.min(d[1] - d[0]);
        }
    }
    gap
}

pub fn tensor(a: &Array2<f64>) -> Tensor {
    let (n, d) = a.dim();
    Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), (1, n, d), &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

/// Central differences of a scalar function over every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error with an absolute floor so near-zero entries compare sensibly.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

/// `[T × K × 3]` random positions in a box around the origin.
pub fn random_positions(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Array3<f32> {
    Array3::from_shape_fn((t, k, 3), |_| rng.random_range(-1.0f32..1.0))
}
