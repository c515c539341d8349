//! Analytic gradients against central finite differences of independent
//! host implementations. Each check returns its worst relative error.
//! Near-tie configurations are skipped: there the nearest-neighbor assignment
//! (and so the gradient) is not stable under the finite-difference step.

use std::sync::Arc;

use super::*;
use candle_core::{DType, Device, Tensor, Var};
use mmhuman_core::body::{BodyModel, ToyBodyModel};
use mmhuman_core::data::{JointSet, SHAPE_COEFFS};
use mmhuman_core::geometry::diff;
use mmhuman_core::recon::{
    joint_losses, loss_terms, LossTerm, MotionFeatures, ReconOutput, ReconTargets,
};
use mmhuman_core::rotation::{self, axis_angle_to_matrix, geodesic_angle, Mat3};
use mmhuman_core::PipelineConfig;
use ndarray::{Array2, Array3};
use rand::Rng;

pub const STEP: f64 = 1e-4;

fn check(worst: &mut f64, analytic: &[f64], numeric: &[f64]) {
    *worst = worst.max(rel_err(analytic, numeric));
}

pub fn point_distances(instances: usize) -> f64 {
    let mut worst = 0.0;
    let mut r = rng(21);
    let mut checked = 0;
    while checked < instances {
        let (n, m) = (r.random_range(1..=8), r.random_range(1..=8));
        let a = random_points(&mut r, n, 3);
        let b = random_points(&mut r, m, 3);
        if min_tie_gap(&a, &b) < 1e-2 || min_tie_gap(&b, &a) < 1e-2 {
            continue;
        }
        let va = Var::from_tensor(&tensor(&a)).unwrap();
        let vb = Var::from_tensor(&tensor(&b)).unwrap();
        let from = |x: &[f64], shape: (usize, usize)| Array2::from_shape_vec(shape, x.to_vec()).unwrap();

        let cd = diff::chamfer_l2(va.as_tensor(), vb.as_tensor()).unwrap().sum_all().unwrap();
        let g = cd.backward().unwrap();
        let num_a = central_diff(a.as_slice().unwrap(), STEP, |x| oracle_chamfer(&from(x, (n, 3)), &b));
        let num_b = central_diff(b.as_slice().unwrap(), STEP, |x| oracle_chamfer(&a, &from(x, (m, 3))));
        check(&mut worst, &to_vec(g.get(va.as_tensor()).unwrap()), &num_a);
        check(&mut worst, &to_vec(g.get(vb.as_tensor()).unwrap()), &num_b);

        let par = diff::partial_matching(va.as_tensor(), vb.as_tensor()).unwrap().sum_all().unwrap();
        let g = par.backward().unwrap();
        let num_a = central_diff(a.as_slice().unwrap(), STEP, |x| oracle_directed(&from(x, (n, 3)), &b));
        check(&mut worst, &to_vec(g.get(va.as_tensor()).unwrap()), &num_a);
        checked += 1;
    }
    worst
}

fn names(n: usize) -> Arc<mmhuman_core::data::Skeleton> {
    let owned: Vec<String> = (0..n).map(|i| format!("j{i}")).collect();
    let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    Arc::new(mmhuman_core::data::Skeleton::from_names(&refs, &refs[1..2], &refs[2..3]).unwrap())
}

fn dummy(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape, DType::F64, &Device::Cpu).unwrap()
}

pub fn joint_losses_l1(instances: usize) -> f64 {
    let mut worst = 0.0;
    let mut r = rng(22);
    let mut cfg = PipelineConfig::tiny();
    cfg.joints_only_mode = true;
    for _ in 0..instances {
        let (t, j) = (r.random_range(1..=2), r.random_range(3..=4));
        let sk = names(j);
        let gt = JointSet::new(random_positions(&mut r, t, j), sk.clone()).unwrap();
        let pred3 = random_positions(&mut r, t, j);
        let pred2 = Array3::from_shape_fn((t, j, 2), |_| r.random_range(-1.0f32..1.0));
        let targets = ReconTargets::new(&[&gt], None, None, DType::F64).unwrap();
        let as_t = |a: &Array3<f32>| {
            let (x, y, z) = a.dim();
            Tensor::from_vec(a.iter().map(|v| *v as f64).collect::<Vec<_>>(), (x, y, z), &Device::Cpu).unwrap()
        };
        let v3 = Var::from_tensor(&as_t(&pred3)).unwrap();
        let v2 = Var::from_tensor(&as_t(&pred2)).unwrap();
        let out = ReconOutput {
            motion: MotionFeatures {
                rep_points: dummy(&[t, 1, 3]),
                rep_features: dummy(&[t, 1, 1]),
                embedded_points: dummy(&[t, 1, 4]),
            },
            global: dummy(&[t, 1]),
            f2d: dummy(&[t, 1]),
            f3d: dummy(&[t, 1]),
            joints2d: v2.as_tensor().clone(),
            joints3d: v3.as_tensor().clone(),
            fused: dummy(&[t, 1]),
            attention: vec![],
            theta: None,
            beta: None,
            gamma: dummy(&[t, 3]),
        };
        let terms = loss_terms(&out, &targets, None, &cfg).unwrap();
        let g3 = terms[&LossTerm::J3d].backward().unwrap();
        let g2 = terms[&LossTerm::J2d].backward().unwrap();

        let host = |p2: &[f64], p3: &[f64]| {
            let a2 = Array3::from_shape_vec((t, j, 2), p2.iter().map(|v| *v as f32).collect()).unwrap();
            let a3 = Array3::from_shape_vec((t, j, 3), p3.iter().map(|v| *v as f32).collect()).unwrap();
            joint_losses(&JointSet::new(a2, sk.clone()).unwrap(), &JointSet::new(a3, sk.clone()).unwrap(), &gt).unwrap()
        };
        let p2: Vec<f64> = pred2.iter().map(|v| *v as f64).collect();
        let p3: Vec<f64> = pred3.iter().map(|v| *v as f64).collect();
        // Host losses run in f32, so the step is widened; L1 is piecewise linear
        // and any step short of a sign change gives the exact slope.
        let h = 1e-3;
        let num3 = central_diff(&p3, h, |x| host(&p2, x).0);
        let num2 = central_diff(&p2, h, |x| host(x, &p3).1);
        check(&mut worst, &to_vec(g3.get(v3.as_tensor()).unwrap()), &num3);
        check(&mut worst, &to_vec(g2.get(v2.as_tensor()).unwrap()), &num2);
    }
    worst
}

/// Gram–Schmidt on column pairs, written out per element.
fn host_6d(x: &[f64]) -> Mat3 {
    let norm = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|c| c / n)
    };
    let b1 = norm([x[0], x[1], x[2]]);
    let d = b1[0] * x[3] + b1[1] * x[4] + b1[2] * x[5];
    let b2 = norm([x[3] - d * b1[0], x[4] - d * b1[1], x[5] - d * b1[2]]);
    let b3 = [
        b1[1] * b2[2] - b1[2] * b2[1],
        b1[2] * b2[0] - b1[0] * b2[2],
        b1[0] * b2[1] - b1[1] * b2[0],
    ];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        m[i] = [b1[i], b2[i], b3[i]];
    }
    m
}

fn arccos_angle(a: &Mat3, b: &Mat3) -> f64 {
    let tr: f64 = (0..3).map(|i| (0..3).map(|k| a[i][k] * b[i][k]).sum::<f64>()).sum();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn geodesic(instances: usize) -> f64 {
    let mut worst = 0.0;
    let mut r = rng(23);
    let mut checked = 0;
    while checked < instances {
        let n = r.random_range(1..=8);
        let x: Vec<f64> = (0..n * 6).map(|_| r.random_range(-1.0..1.0)).collect();
        let gt: Vec<Mat3> = (0..n)
            .map(|_| axis_angle_to_matrix([0, 1, 2].map(|_| r.random_range(-1.5..1.5))))
            .collect();
        let angles: Vec<f64> = (0..n).map(|i| geodesic_angle(&host_6d(&x[i * 6..i * 6 + 6]), &gt[i])).collect();
        if angles.iter().any(|a| *a < 0.05 || *a > std::f64::consts::PI - 0.05) {
            continue;
        }
        let vx = Var::from_tensor(&Tensor::from_vec(x.clone(), (n, 6), &Device::Cpu).unwrap()).unwrap();
        let gt_t = Tensor::from_vec(gt.iter().flatten().flatten().copied().collect::<Vec<_>>(), (n, 3, 3), &Device::Cpu)
            .unwrap();
        let loss = rotation::geodesic_angles(&rotation::rotation_from_6d(vx.as_tensor()).unwrap(), &gt_t)
            .unwrap()
            .sum_all()
            .unwrap();
        let g = loss.backward().unwrap();
        let num = central_diff(&x, STEP, |p| {
            (0..n).map(|i| arccos_angle(&host_6d(&p[i * 6..i * 6 + 6]), &gt[i])).sum()
        });
        check(&mut worst, &to_vec(g.get(vx.as_tensor()).unwrap()), &num);
        checked += 1;
    }
    worst
}

pub fn body_forward(instances: usize) -> f64 {
    let mut worst = 0.0;
    let model = ToyBodyModel::new().unwrap();
    let (j, v) = (model.joint_count(), model.vertex_count());
    let mut r = rng(24);
    for _ in 0..instances {
        let rots: Vec<Mat3> = (0..j)
            .map(|_| axis_angle_to_matrix([0, 1, 2].map(|_| r.random_range(-0.8..0.8))))
            .collect();
        let beta: Vec<f64> = (0..SHAPE_COEFFS).map(|_| r.random_range(-1.0..1.0)).collect();
        let gamma: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let wj: Vec<f64> = (0..j * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..v * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = rots.iter().flatten().flatten().copied().collect();

        let scalar = |th: &[f64], be: &[f64], ga: &[f64]| {
            let mats: Vec<Mat3> = th
                .chunks(9)
                .map(|c| [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]])
                .collect();
            let posed = model.pose(&mats, be, [ga[0], ga[1], ga[2]]).unwrap();
            let sj: f64 = posed.joints.iter().flatten().zip(&wj).map(|(a, b)| a * b).sum();
            let sv: f64 = posed.vertices.iter().flatten().zip(&wv).map(|(a, b)| a * b).sum();
            sj + sv
        };

        let dev = Device::Cpu;
        let vt = Var::from_tensor(&Tensor::from_vec(theta.clone(), (1, j, 3, 3), &dev).unwrap()).unwrap();
        let vb = Var::from_tensor(&Tensor::from_vec(beta.clone(), (1, SHAPE_COEFFS), &dev).unwrap()).unwrap();
        let vg = Var::from_tensor(&Tensor::from_vec(gamma.clone(), (1, 3), &dev).unwrap()).unwrap();
        let (joints, verts) = model.forward_tensors(vt.as_tensor(), vb.as_tensor(), vg.as_tensor()).unwrap();
        let wj_t = Tensor::from_vec(wj.clone(), (1, j, 3), &dev).unwrap();
        let wv_t = Tensor::from_vec(wv.clone(), (1, v, 3), &dev).unwrap();
        let s = ((joints * wj_t).unwrap().sum_all().unwrap() + (verts * wv_t).unwrap().sum_all().unwrap()).unwrap();
        let g = s.backward().unwrap();

        check(
            &mut worst,
            &to_vec(g.get(vt.as_tensor()).unwrap()),
            &central_diff(&theta, STEP, |x| scalar(x, &beta, &gamma)),
        );
        check(
            &mut worst,
            &to_vec(g.get(vb.as_tensor()).unwrap()),
            &central_diff(&beta, STEP, |x| scalar(&theta, x, &gamma)),
        );
        check(
            &mut worst,
            &to_vec(g.get(vg.as_tensor()).unwrap()),
            &central_diff(&gamma, STEP, |x| scalar(&theta, &beta, x)),
        );
    }
    worst
}
