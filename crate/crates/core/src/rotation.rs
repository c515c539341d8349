//! Rotation utilities: the continuous 6D parameterization emitted by network
//! heads, a differentiable geodesic distance, and small `f64` helpers.
//!
//! The geodesic angle is evaluated as `2·asin(‖R₁ − R₂‖_F / √8)`, which equals
//! `arccos((tr(R₁R₂ᵀ) − 1) / 2)` on SO(3) but stays exact at zero angle and
//! well conditioned near it.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor, D};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// 6D encoding of the identity: the first two columns of I.
pub const IDENTITY_6D: [f32; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Rodrigues' formula for an axis-angle vector.
pub fn axis_angle_to_matrix(v: [f64; 3]) -> Mat3 {
    let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if angle < 1e-12 {
        return IDENTITY;
    }
    let [x, y, z] = v.map(|c| c / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn geodesic_core(sq_frobenius: f64) -> f64 {
    let s = (sq_frobenius.sqrt() / 8f64.sqrt()).min(1.0);
    2.0 * s.asin()
}

/// Geodesic angle in radians between two rotation matrices.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let mut sq = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            sq += (a[i][j] - b[i][j]).powi(2);
        }
    }
    geodesic_core(sq)
}

/// Largest deviation of `RᵀR` from the identity and of `det R` from one.
pub fn orthonormality_error(r: &[f64]) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k * 3 + i] * r[k * 3 + j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            err = err.max((dot - expect).abs());
        }
    }
    let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
        + r[2] * (r[3] * r[7] - r[4] * r[6]);
    err.max((det - 1.0).abs())
}

/// Checks a flat list of row-major 3×3 matrices.
pub fn check_rotations<T: Copy + Into<f64>>(values: &[T], tol: f64) -> Result<()> {
    if values.len() % 9 != 0 {
        return Err(Error::Shape("rotation data is not a multiple of 9 values".into()));
    }
    for (index, chunk) in values.chunks(9).enumerate() {
        let r: Vec<f64> = chunk.iter().map(|&v| v.into()).collect();
        let error = orthonormality_error(&r);
        if !(error <= tol) {
            return Err(Error::NotARotation { index, error });
        }
    }
    Ok(())
}

fn normalize_last(x: &Tensor) -> candle_core::Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    x.broadcast_div(&norm)
}

fn cross_last(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    let c = |t: &Tensor, i: usize| t.narrow(D::Minus1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    Tensor::cat(
        &[
            ((&a1 * &b2)? - (&a2 * &b1)?)?,
            ((&a2 * &b0)? - (&a0 * &b2)?)?,
            ((&a0 * &b1)? - (&a1 * &b0)?)?,
        ],
        D::Minus1,
    )
}

/// Gram–Schmidt map from `[..., 6]` to rotation matrices `[..., 3, 3]`.
///
/// The two 3-vectors become the first two columns after orthonormalization;
/// the third column is their cross product.
pub fn rotation_from_6d(x: &Tensor) -> candle_core::Result<Tensor> {
    let a1 = x.narrow(D::Minus1, 0, 3)?;
    let a2 = x.narrow(D::Minus1, 3, 3)?;
    let b1 = normalize_last(&a1)?;
    let proj = (&b1 * &a2)?.sum_keepdim(D::Minus1)?;
    let b2 = normalize_last(&(a2 - b1.broadcast_mul(&proj)?)?)?;
    let b3 = cross_last(&b1, &b2)?;
    // Stack as columns: R[..., i, c] = b_c[i].
    Tensor::stack(&[b1, b2, b3], D::Minus1)
}

struct GeodesicAngle;

fn geodesic_forward<T: num_traits::Float>(a: &[T], b: &[T]) -> Vec<T> {
    a.chunks(9)
        .zip(b.chunks(9))
        .map(|(r1, r2)| {
            let sq = r1
                .iter()
                .zip(r2)
                .fold(0.0f64, |acc, (&x, &y)| acc + (x - y).to_f64().unwrap().powi(2));
            T::from(geodesic_core(sq)).unwrap()
        })
        .collect()
}

impl CustomOp2 for GeodesicAngle {
    fn name(&self) -> &'static str {
        "geodesic-angle"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims();
        if l1.shape() != l2.shape() || dims.len() < 2 || dims[dims.len() - 1] != 3 || dims[dims.len() - 2] != 3 {
            candle_core::bail!("geodesic angle expects matching [..., 3, 3] inputs");
        }
        let out_shape = Shape::from(&dims[..dims.len() - 2]);
        let range = |l: &Layout| {
            l.contiguous_offsets()
                .ok_or_else(|| candle_core::Error::Msg("geodesic angle needs contiguous input".into()))
        };
        let (o1, e1) = range(l1)?;
        let (o2, e2) = range(l2)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => CpuStorage::F32(geodesic_forward(&a[o1..e1], &b[o2..e2])),
            (CpuStorage::F64(a), CpuStorage::F64(b)) => CpuStorage::F64(geodesic_forward(&a[o1..e1], &b[o2..e2])),
            _ => candle_core::bail!("geodesic angle expects matching f32 or f64 inputs"),
        };
        Ok((out, out_shape))
    }

    fn bwd(&self, a: &Tensor, b: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let av: Vec<f64> = a.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let bv: Vec<f64> = b.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let gv: Vec<f64> = grad.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let mut ga = vec![0.0; av.len()];
        for (k, g) in gv.iter().enumerate() {
            let diff: Vec<f64> = (0..9).map(|i| av[k * 9 + i] - bv[k * 9 + i]).collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let s = norm / 8f64.sqrt();
            let dtheta_dnorm = 2.0 / (1.0 - s * s).max(1e-12).sqrt() / 8f64.sqrt();
            for i in 0..9 {
                ga[k * 9 + i] = g * dtheta_dnorm * diff[i] / norm;
            }
        }
        let ga = Tensor::from_vec(ga, a.shape(), a.device())?;
        let gb = ga.neg()?.to_dtype(b.dtype())?;
        Ok((Some(ga.to_dtype(a.dtype())?), Some(gb)))
    }
}

/// Differentiable geodesic angles between `[..., 3, 3]` rotation batches.
pub fn geodesic_angles(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    a.contiguous()?.apply_op2(&b.contiguous()?, GeodesicAngle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use std::f64::consts::FRAC_PI_2;

    fn arccos_oracle(a: &Mat3, b: &Mat3) -> f64 {
        let m = mat_mul(a, &transpose(b));
        ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = axis_angle_to_matrix([0.0, 0.0, FRAC_PI_2]);
        assert!((geodesic_angle(&r, &IDENTITY) - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(geodesic_angle(&r, &r), 0.0);
        let v = mat_vec(&r, &[1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_arccos_trace_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut v = || [0; 3].map(|_| rng.random_range(-1.8..1.8));
            let a = axis_angle_to_matrix(v());
            let b = axis_angle_to_matrix(v());
            let got = geodesic_angle(&a, &b);
            assert!((got - arccos_oracle(&a, &b)).abs() < 1e-7);
            assert!((0.0..=std::f64::consts::PI).contains(&got));
            assert_eq!(got, geodesic_angle(&b, &a));
        }
    }

    #[test]
    fn six_d_yields_rotations() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[0.3f32, -1.2, 0.5, 2.0, 0.1, -0.7], IDENTITY_6D], &dev).unwrap();
        let r = rotation_from_6d(&x).unwrap();
        assert_eq!(r.dims(), &[2, 3, 3]);
        let v: Vec<f32> = r.flatten_all().unwrap().to_vec1().unwrap();
        check_rotations(&v, 1e-5).unwrap();
        assert_eq!(&v[9..], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_rotation_detected() {
        let bad = [2.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(check_rotations(&bad, 1e-5), Err(Error::NotARotation { index: 0, .. })));
        let reflection = [-1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(check_rotations(&reflection, 1e-5).is_err());
    }

    #[test]
    fn tensor_geodesic_matches_scalar() {
        let dev = Device::Cpu;
        let a = axis_angle_to_matrix([0.2, -0.4, 0.9]);
        let flat = |m: &Mat3| m.iter().flatten().copied().collect::<Vec<f64>>();
        let ta = Tensor::from_vec(flat(&a), (1, 3, 3), &dev).unwrap();
        let tb = Tensor::from_vec(flat(&IDENTITY), (1, 3, 3), &dev).unwrap();
        let got = geodesic_angles(&ta, &tb).unwrap().to_vec1::<f64>().unwrap();
        assert!((got[0] - geodesic_angle(&a, &IDENTITY)).abs() < 1e-12);
    }
}
