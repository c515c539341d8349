mod common;

use common::*;
use mmhuman_core::geometry::{
    self, chamfer_l2, farthest_from_centroid, farthest_point_sampling, fps_from, kernels, merge_downsample,
    partial_matching, transfer_attributes, Exec, PointSet,
};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn set(a: &Array2<f64>) -> PointSet {
    PointSet::new(a.clone()).unwrap()
}

#[test]
fn distances_match_brute_force() {
    let mut r = rng(11);
    for _ in 0..100 {
        let d = if r.random_bool(0.5) { 2 } else { 3 };
        let (n, m) = (r.random_range(1..=64), r.random_range(1..=64));
        let a = random_points(&mut r, n, d);
        let b = random_points(&mut r, m, d);
        let cd = chamfer_l2(&set(&a), &set(&b)).unwrap();
        let par = partial_matching(&set(&a), &set(&b)).unwrap();
        assert!((cd - oracle_chamfer(&a, &b)).abs() < 1e-6);
        assert!((par - oracle_directed(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn fps_matches_greedy_definition() {
    let mut r = rng(12);
    for _ in 0..100 {
        let n = r.random_range(1..=64);
        let a = random_points(&mut r, n, 3);
        let k = r.random_range(1..=n);
        let start = r.random_range(0..n);
        let got = fps_from(a.as_slice().unwrap(), 3, k, start, Exec::Sequential).unwrap();
        assert_eq!(got, oracle_fps(&a, k, start));
    }
}

#[test]
fn attribute_transfer_matches_brute_force() {
    let mut r = rng(13);
    for _ in 0..100 {
        let src = Array2::from_shape_fn((r.random_range(1..=64), 5), |_| r.random_range(-1.0f32..1.0));
        let m = r.random_range(1..=64);
        let generated = random_points(&mut r, m, 3);
        let got = transfer_attributes(&set(&generated), src.view()).unwrap();
        assert_eq!(got, oracle_transfer(&generated, &src));
    }
}

#[test]
fn duplicate_points_are_never_picked_twice() {
    let a = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let idx = fps_from(a.as_slice().unwrap(), 2, 4, 0, Exec::Sequential).unwrap();
    let mut sorted = idx.clone();
    sorted.sort();
    assert_eq!(sorted, vec![0, 1, 2, 3]);
}

#[test]
fn fps_rejects_oversampling() {
    let a = random_points(&mut rng(1), 5, 3);
    assert!(farthest_point_sampling(&set(&a), 6, 0).is_err());
    assert!(farthest_point_sampling(&set(&a), 0, 0).is_err());
}

#[test]
fn knn_orders_by_distance_then_index() {
    let mut r = rng(14);
    let q = random_points(&mut r, 20, 3);
    let p = random_points(&mut r, 40, 3);
    let got = kernels::knn(q.as_slice().unwrap(), p.as_slice().unwrap(), 3, 5, Exec::Sequential);
    for (row, qi) in got.iter().zip(q.outer_iter()) {
        let mut all: Vec<(usize, f64)> = p
            .outer_iter()
            .enumerate()
            .map(|(j, pj)| (j, (0..3).map(|c| (qi[c] - pj[c]).powi(2)).sum()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let want: Vec<usize> = all[..5].iter().map(|x| x.0).collect();
        assert_eq!(row.iter().map(|x| x.0).collect::<Vec<_>>(), want);
    }
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let mut r = rng(15);
    let a = random_points(&mut r, 3000, 3);
    let b = random_points(&mut r, 1500, 3);
    let (sa, sb) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    assert_eq!(
        kernels::nearest(sa, sb, 3, Exec::Sequential),
        kernels::nearest(sa, sb, 3, Exec::Parallel)
    );
    assert_eq!(
        kernels::farthest_point_sampling(sa, 3, 200, 7, Exec::Sequential),
        kernels::farthest_point_sampling(sa, 3, 200, 7, Exec::Parallel)
    );
    let s = kernels::directed_distance_sum(sa, sb, 3, Exec::Sequential);
    let p = kernels::directed_distance_sum(sa, sb, 3, Exec::Parallel);
    assert!((s - p).abs() < 1e-9 * s);
}

#[test]
fn merge_downsample_keeps_rows_of_either_input() {
    let mut r = rng(16);
    let a = Array2::from_shape_fn((10, 5), |_| r.random_range(-1.0f32..1.0));
    let b = Array2::from_shape_fn((14, 5), |_| r.random_range(-1.0f32..1.0));
    let out = merge_downsample(a.view(), b.view(), 12, 3).unwrap();
    assert_eq!(out.dim(), (12, 5));
    let all = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
    for row in out.outer_iter() {
        assert!(all.outer_iter().any(|x| x == row));
    }
    assert!(merge_downsample(a.view(), b.view(), 25, 3).is_err());
}

#[test]
fn centroid_start_is_permutation_invariant() {
    let a = random_points(&mut rng(17), 30, 3);
    let i = farthest_from_centroid(a.as_slice().unwrap(), 3);
    let rev = a.slice(ndarray::s![..;-1, ..]).as_standard_layout().into_owned();
    let j = farthest_from_centroid(rev.as_slice().unwrap(), 3);
    assert_eq!(a.row(i), rev.row(j));
}

#[test]
fn point_set_rejects_bad_input() {
    assert!(PointSet::new(Array2::zeros((0, 3))).is_err());
    assert!(PointSet::new(Array2::zeros((3, 4))).is_err());
    assert!(PointSet::new(Array2::from_elem((2, 3), f64::NAN)).is_err());
    let a = set(&Array2::zeros((2, 2)));
    let b = set(&Array2::zeros((2, 3)));
    assert!(geometry::chamfer_l2(&a, &b).is_err());
}

fn cloud(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-2.0f64..2.0, n * 3).prop_map(move |v| Array2::from_shape_vec((n, 3), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in cloud(24), b in cloud(24)) {
        let ab = chamfer_l2(&set(&a), &set(&b)).unwrap();
        let ba = chamfer_l2(&set(&b), &set(&a)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer_l2(&set(&a), &set(&a)).unwrap(), 0.0);
    }

    #[test]
    fn partial_never_exceeds_chamfer(a in cloud(24), b in cloud(24)) {
        let par = partial_matching(&set(&a), &set(&b)).unwrap();
        prop_assert!(par <= chamfer_l2(&set(&a), &set(&b)).unwrap() + 1e-12);
    }

    #[test]
    fn chamfer_is_translation_invariant(a in cloud(16), b in cloud(16), t in prop::array::uniform3(-3.0f64..3.0)) {
        let shift = |x: &Array2<f64>| {
            let mut y = x.clone();
            for mut row in y.outer_iter_mut() {
                for c in 0..3 {
                    row[c] += t[c];
                }
            }
            y
        };
        let before = chamfer_l2(&set(&a), &set(&b)).unwrap();
        let after = chamfer_l2(&set(&shift(&a)), &set(&shift(&b))).unwrap();
        prop_assert!((before - after).abs() < 1e-9 * before.max(1.0));
    }

    #[test]
    fn fps_picks_distinct_indices(a in cloud(40), seed in any::<u64>(), frac in 0.0f64..1.0) {
        let k = 1 + ((a.nrows() - 1) as f64 * frac) as usize;
        let idx = farthest_point_sampling(&set(&a), k, seed).unwrap();
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert_eq!(idx.clone(), farthest_point_sampling(&set(&a), k, seed).unwrap());
    }
}
