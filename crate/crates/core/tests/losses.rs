mod common;

use std::collections::BTreeMap;

use common::*;
use mmhuman_core::body::{toy_skeleton, BodyModel, ToyBodyModel};
use mmhuman_core::data::{BodyParams, JointSet, MaskPointSet, SHAPE_COEFFS};
use mmhuman_core::enhance::{enhancement_loss, mask_targets, SeedStages};
use mmhuman_core::metrics::{jitter, limb_errors, mpjpe, mpjre, mpvpe, mte};
use mmhuman_core::recon::{joint_losses, smpl_stage_loss, total_loss_value, LossTerm, Normalizers};
use mmhuman_core::rotation::axis_angle_to_matrix;
use mmhuman_core::PipelineConfig;
use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;
use rand::Rng;

fn mask(rng: &mut rand_chacha::ChaCha8Rng, t: usize, n: usize) -> MaskPointSet {
    let mut p = random_positions(rng, t, n);
    p.slice_mut(ndarray::s![.., .., 2]).fill(0.0);
    MaskPointSet::new(p).unwrap()
}

fn stages_from(targets: &[Array3<f32>; 3]) -> SeedStages {
    SeedStages {
        candidates: targets[0].clone(),
        p0: targets[0].clone(),
        p1: targets[1].clone(),
        p2: targets[2].clone(),
    }
}

#[test]
fn enhancement_loss_vanishes_on_targets() {
    let m = mask(&mut rng(31), 3, 40);
    let targets = mask_targets(&m, [4, 8, 16], 9).unwrap();
    let (loss, terms) = enhancement_loss(&stages_from(&targets), &m, 1.0, 9).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(terms.partial_total(), 0.0);
}

#[test]
fn enhancement_loss_matches_hand_sum() {
    let mut r = rng(32);
    for _ in 0..20 {
        let m = mask(&mut r, 2, 8);
        let pred = |r: &mut rand_chacha::ChaCha8Rng, n| random_positions(r, 2, n);
        let stages = SeedStages { candidates: pred(&mut r, 2), p0: pred(&mut r, 2), p1: pred(&mut r, 4), p2: pred(&mut r, 8) };
        let lambda = r.random_range(0.0..2.0);
        let targets = mask_targets(&m, [2, 4, 8], 5).unwrap();
        let mut want = 0.0;
        for (p, g) in [&stages.p0, &stages.p1, &stages.p2].into_iter().zip(&targets) {
            for f in 0..2 {
                let to64 = |a: &Array3<f32>| a.slice(ndarray::s![f, .., ..]).mapv(|v| v as f64);
                want += oracle_chamfer(&to64(p), &to64(g)) + lambda * oracle_directed(&to64(p), &to64(g));
            }
        }
        let (got, terms) = enhancement_loss(&stages, &m, lambda, 5).unwrap();
        assert!((got - want).abs() < 1e-6 * want.max(1.0));
        let (ablated, _) = enhancement_loss(&stages, &m, 0.0, 5).unwrap();
        assert!((ablated - terms.chamfer_total()).abs() < 1e-12);
    }
}

fn random_params(r: &mut rand_chacha::ChaCha8Rng, t: usize, j: usize) -> BodyParams {
    let mut theta = Array4::zeros((t, j, 3, 3));
    for f in 0..t {
        for k in 0..j {
            let m = axis_angle_to_matrix([0, 1, 2].map(|_| r.random_range(-0.5..0.5)));
            for a in 0..3 {
                for b in 0..3 {
                    theta[[f, k, a, b]] = m[a][b] as f32;
                }
            }
        }
    }
    let beta = Array2::from_shape_fn((t, SHAPE_COEFFS), |_| r.random_range(-1.0f32..1.0));
    let gamma = Array2::from_shape_fn((t, 3), |_| r.random_range(-1.0f32..1.0));
    BodyParams::new(theta, beta, gamma).unwrap()
}

#[test]
fn stage_two_losses_vanish_on_ground_truth() {
    let model = ToyBodyModel::new().unwrap();
    let params = random_params(&mut rng(33), 3, model.joint_count());
    let (joints, verts) = model.forward(&params).unwrap();
    let (total, terms) = smpl_stage_loss(&params, &params, &joints, &joints, &verts, &verts, &PipelineConfig::tiny()).unwrap();
    assert_eq!(total, 0.0);
    assert!(terms.values().all(|v| *v == 0.0));
    let flat = mmhuman_core::data::project_joints_2d(&joints).unwrap();
    assert_eq!(joint_losses(&flat, &joints, &joints).unwrap(), (0.0, 0.0));
}

#[test]
fn unit_weights_give_plain_sum() {
    let mut cfg = PipelineConfig::tiny();
    for t in LossTerm::ALL {
        match t {
            LossTerm::J3d => cfg.weight_j3d = 1.0,
            LossTerm::J2d => cfg.weight_j2d = 1.0,
            LossTerm::Theta => cfg.weight_theta = 1.0,
            LossTerm::Beta => cfg.weight_beta = 1.0,
            LossTerm::Gamma => cfg.weight_gamma = 1.0,
            LossTerm::Joints => cfg.weight_joints = 1.0,
            LossTerm::Vertices => cfg.weight_vertices = 1.0,
        }
    }
    let mut r = rng(34);
    let terms: BTreeMap<LossTerm, f64> = LossTerm::ALL.iter().map(|t| (*t, r.random_range(0.0..5.0))).collect();
    let sum: f64 = terms.values().sum();
    assert!((total_loss_value(&terms, &cfg, &Normalizers::new()) - sum).abs() < 1e-12);

    let model = ToyBodyModel::new().unwrap();
    let (a, b) = (random_params(&mut r, 2, model.joint_count()), random_params(&mut r, 2, model.joint_count()));
    let ((ja, va), (jb, vb)) = (model.forward(&a).unwrap(), model.forward(&b).unwrap());
    let (total, parts) = smpl_stage_loss(&a, &b, &ja, &jb, &va, &vb, &cfg).unwrap();
    assert!((total - parts.values().sum::<f64>()).abs() < 1e-9 * total);
}

fn joints(p: Array3<f32>) -> JointSet {
    JointSet::new(p, toy_skeleton()).unwrap()
}

#[test]
fn metrics_vanish_on_identical_input() {
    let mut r = rng(35);
    let j = toy_skeleton().joint_count();
    let a = joints(random_positions(&mut r, 6, j));
    assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
    assert_eq!(limb_errors(&a, &a).unwrap(), (0.0, 0.0));
    let v = random_positions(&mut r, 6, 50);
    assert_eq!(mpvpe(&v, &v).unwrap(), 0.0);
    let g = Array2::from_shape_fn((6, 3), |_| r.random_range(-1.0f32..1.0));
    assert_eq!(mte(&g, &g).unwrap(), 0.0);
    let p = random_params(&mut r, 6, j);
    assert!(mpjre(&p.theta, &p.theta).unwrap().abs() < 1e-9);
}

#[test]
fn uniform_offset_reads_back_in_centimeters() {
    let mut r = rng(36);
    let j = toy_skeleton().joint_count();
    let gt = random_positions(&mut r, 4, j);
    for dir in [[1.0f32, 0.0, 0.0], [0.6, 0.0, 0.8]] {
        let mut shifted = gt.clone();
        for mut row in shifted.lanes_mut(ndarray::Axis(2)) {
            for c in 0..3 {
                row[c] += 0.05 * dir[c];
            }
        }
        let e = mpjpe(&joints(shifted), &joints(gt.clone())).unwrap();
        assert!((e - 5.0).abs() < 0.01, "{e}");
    }
}

#[test]
fn jitter_of_linear_and_cubic_tracks() {
    let f = 30.0;
    let lin = Array3::from_shape_fn((10, 2, 3), |(t, k, c)| (0.125 * t as f64 + k as f64 + c as f64) as f32);
    let track = JointSet::new(lin, toy_skeleton_small()).unwrap();
    assert!(jitter(&track, f).unwrap().abs() < 1e-9);
    // x = i³ in frame units: the third difference is exactly 6, so jerk is 6·f³ m/s³.
    let cubic = Array3::from_shape_fn((8, 2, 3), |(t, _, c)| if c == 0 { (t as f32).powi(3) } else { 0.0 });
    let track = JointSet::new(cubic, toy_skeleton_small()).unwrap();
    let want = 6.0 * f * f * f / 1000.0;
    let got = jitter(&track, f).unwrap();
    assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
}

fn toy_skeleton_small() -> std::sync::Arc<mmhuman_core::data::Skeleton> {
    std::sync::Arc::new(mmhuman_core::data::Skeleton::from_names(&["a", "b"], &["a"], &["b"]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partial_term_bounded_by_chamfer(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = mask(&mut r, 2, 12);
        let stages = SeedStages {
            candidates: random_positions(&mut r, 2, 3),
            p0: random_positions(&mut r, 2, 3),
            p1: random_positions(&mut r, 2, 6),
            p2: random_positions(&mut r, 2, 12),
        };
        let (_, terms) = enhancement_loss(&stages, &m, 1.0, seed).unwrap();
        for i in 0..3 {
            prop_assert!(terms.partial[i] <= terms.chamfer[i] + 1e-9);
            prop_assert!(terms.partial[i] >= 0.0);
        }
    }

    #[test]
    fn total_loss_is_monotone_in_each_term(seed in any::<u64>(), bump in 0.0f64..3.0) {
        let mut r = rng(seed);
        let cfg = PipelineConfig::tiny();
        let terms: BTreeMap<LossTerm, f64> = LossTerm::ALL.iter().map(|t| (*t, r.random_range(0.0..5.0))).collect();
        let norms: Normalizers = LossTerm::ALL.iter().map(|t| (*t, r.random_range(0.1..5.0))).collect();
        let base = total_loss_value(&terms, &cfg, &norms);
        for t in LossTerm::ALL {
            let mut more = terms.clone();
            *more.get_mut(&t).unwrap() += bump;
            prop_assert!(total_loss_value(&more, &cfg, &norms) >= base);
        }
    }

    #[test]
    fn mpjpe_is_symmetric_and_triangle_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let j = toy_skeleton().joint_count();
        let (a, b, c) = (
            joints(random_positions(&mut r, 3, j)),
            joints(random_positions(&mut r, 3, j)),
            joints(random_positions(&mut r, 3, j)),
        );
        let ab = mpjpe(&a, &b).unwrap();
        prop_assert!((ab - mpjpe(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!(mpjpe(&a, &c).unwrap() <= ab + mpjpe(&b, &c).unwrap() + 1e-6);
    }

    #[test]
    fn geodesic_metric_stays_in_range(seed in any::<u64>()) {
        let mut r = rng(seed);
        let j = toy_skeleton().joint_count();
        let (a, b) = (random_params(&mut r, 2, j), random_params(&mut r, 2, j));
        let e = mpjre(&a.theta, &b.theta).unwrap();
        prop_assert!((0.0..=180.0).contains(&e));
        prop_assert!((e - mpjre(&b.theta, &a.theta).unwrap()).abs() < 1e-6);
    }
}
