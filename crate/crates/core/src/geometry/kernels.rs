//! Exhaustive point-set kernels over flat coordinate slices.
//!
//! Every kernel takes an [`Exec`] so callers (and the benches) can pick the
//! sequential or the data-parallel path. Both paths return identical results:
//! per-point work is independent and reductions break ties by lowest index.

use num_traits::Float;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Minimum problem size worth splitting across threads.
#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
const PAR_THRESHOLD: usize = 256;

pub(crate) fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if n >= PAR_THRESHOLD => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[inline]
pub fn squared_distance<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// For every query point, the index of its nearest point in `points` and the
/// squared distance to it. Ties resolve to the lowest index.
pub fn nearest<T>(queries: &[T], points: &[T], dim: usize, exec: Exec) -> Vec<(usize, T)>
where
    T: Float + Send + Sync,
{
    let m = points.len() / dim;
    map_range(exec, queries.len() / dim, |i| {
        let q = &queries[i * dim..(i + 1) * dim];
        let mut best = (0usize, T::infinity());
        for j in 0..m {
            let d = squared_distance(q, &points[j * dim..(j + 1) * dim]);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    })
}

/// The `k` nearest points to each query, sorted by (distance, index).
pub fn knn<T>(queries: &[T], points: &[T], dim: usize, k: usize, exec: Exec) -> Vec<Vec<(usize, T)>>
where
    T: Float + Send + Sync,
{
    let m = points.len() / dim;
    let k = k.min(m);
    map_range(exec, queries.len() / dim, |i| {
        let q = &queries[i * dim..(i + 1) * dim];
        let mut best: Vec<(usize, T)> = Vec::with_capacity(k + 1);
        for j in 0..m {
            let d = squared_distance(q, &points[j * dim..(j + 1) * dim]);
            if best.len() == k && d >= best[k - 1].1 {
                continue;
            }
            // Insert after every entry with distance <= d, keeping index order on ties.
            let pos = best.partition_point(|&(_, bd)| bd <= d);
            best.insert(pos, (j, d));
            best.truncate(k);
        }
        best
    })
}

fn argmax_lowest<T: Float + Send + Sync>(values: &[T], exec: Exec) -> (usize, T) {
    let better = |a: (usize, T), b: (usize, T)| {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
            b
        } else {
            a
        }
    };
    let init = (usize::MAX, T::neg_infinity());
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if values.len() >= PAR_THRESHOLD * 4 => values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| (i, v))
            .reduce(|| init, better),
        _ => values
            .iter()
            .enumerate()
            .fold(init, |acc, (i, &v)| better(acc, (i, v))),
    }
}

/// Greedy farthest point sampling starting at `start`.
///
/// Each subsequent pick maximizes the minimum distance to the picks so far,
/// ties broken by lowest index. Panics if `k` exceeds the point count or
/// `start` is out of range; the checked entry points live in the parent module.
pub fn farthest_point_sampling<T>(points: &[T], dim: usize, k: usize, start: usize, exec: Exec) -> Vec<usize>
where
    T: Float + Send + Sync,
{
    let n = points.len() / dim;
    assert!(k <= n && start < n);
    let mut picked = Vec::with_capacity(k);
    if k == 0 {
        return picked;
    }
    let mut min_d = vec![T::infinity(); n];
    let mut current = start;
    for _ in 0..k {
        picked.push(current);
        let c = &points[current * dim..(current + 1) * dim];
        let update = |(j, md): (usize, &mut T)| {
            let d = squared_distance(&points[j * dim..(j + 1) * dim], c);
            if d < *md {
                *md = d;
            }
        };
        match exec {
            #[cfg(feature = "parallel")]
            Exec::Parallel if n >= PAR_THRESHOLD * 4 => min_d.par_iter_mut().enumerate().for_each(update),
            _ => min_d.iter_mut().enumerate().for_each(update),
        }
        // Masked picks never re-win the argmax, even among exact duplicates.
        min_d[current] = T::neg_infinity();
        current = argmax_lowest(&min_d, exec).0;
        if current == usize::MAX {
            break;
        }
    }
    picked
}

/// Sum over `a` of the Euclidean distance to the nearest point of `b`.
pub fn directed_distance_sum<T>(a: &[T], b: &[T], dim: usize, exec: Exec) -> T
where
    T: Float + Send + Sync,
{
    nearest(a, b, dim, exec)
        .into_iter()
        .fold(T::zero(), |acc, (_, d)| acc + d.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_orders_by_distance_then_index() {
        let pts = [0.0f64, 1.0, -1.0, 2.0, 1.0];
        let got = knn(&[0.0], &pts, 1, 4, Exec::Sequential);
        let idx: Vec<usize> = got[0].iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![0, 1, 2, 4]);
    }

    #[test]
    fn fps_handles_duplicates() {
        let pts = [0.0f64, 0.0, 0.0, 1.0];
        let got = farthest_point_sampling(&pts, 1, 4, 0, Exec::Sequential);
        let mut sorted = got.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(got[1], 3);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..3 * 1500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..3 * 1200).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(
            nearest(&a, &b, 3, Exec::Sequential),
            nearest(&a, &b, 3, Exec::Parallel)
        );
        assert_eq!(
            farthest_point_sampling(&a, 3, 200, 5, Exec::Sequential),
            farthest_point_sampling(&a, 3, 200, 5, Exec::Parallel)
        );
        assert_eq!(
            directed_distance_sum(&a, &b, 3, Exec::Sequential),
            directed_distance_sum(&a, &b, 3, Exec::Parallel)
        );
    }
}
