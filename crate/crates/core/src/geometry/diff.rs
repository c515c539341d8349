//! Differentiable point-set distances for training.
//!
//! The forward pass reuses the exhaustive kernels; the backward pass routes
//! each gradient along the nearest-neighbor assignment. Where a point
//! coincides with its neighbor the distance has no gradient and contributes
//! zero.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use super::kernels::{self, Exec};

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("point tensors must be contiguous"),
    }
}

/// Per-batch `Σ_i min_j ‖a_i − b_j‖` for `a: [B, n, d]`, `b: [B, m, d]`.
struct DirectedDistanceSum;

impl DirectedDistanceSum {
    fn dims(l1: &Layout, l2: &Layout) -> candle_core::Result<(usize, usize, usize, usize)> {
        let (b1, n, d1) = l1.shape().dims3()?;
        let (b2, m, d2) = l2.shape().dims3()?;
        if b1 != b2 || d1 != d2 {
            candle_core::bail!("directed distance: incompatible shapes {:?} and {:?}", l1.shape(), l2.shape());
        }
        if n == 0 || m == 0 {
            candle_core::bail!("directed distance: empty point set");
        }
        Ok((b1, n, m, d1))
    }
}

fn batched_forward<T>(a: &[T], b: &[T], batch: usize, n: usize, m: usize, d: usize) -> Vec<T>
where
    T: num_traits::Float + Send + Sync,
{
    (0..batch)
        .map(|k| {
            kernels::directed_distance_sum(
                &a[k * n * d..(k + 1) * n * d],
                &b[k * m * d..(k + 1) * m * d],
                d,
                Exec::default(),
            )
        })
        .collect()
}

impl CustomOp2 for DirectedDistanceSum {
    fn name(&self) -> &'static str {
        "directed-distance-sum"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, n, m, d) = Self::dims(l1, l2)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => CpuStorage::F32(batched_forward(
                contiguous(a, l1)?,
                contiguous(b, l2)?,
                batch,
                n,
                m,
                d,
            )),
            (CpuStorage::F64(a), CpuStorage::F64(b)) => CpuStorage::F64(batched_forward(
                contiguous(a, l1)?,
                contiguous(b, l2)?,
                batch,
                n,
                m,
                d,
            )),
            _ => candle_core::bail!("directed distance: expected matching f32 or f64 inputs"),
        };
        Ok((out, Shape::from(batch)))
    }

    fn bwd(&self, a: &Tensor, b: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (batch, n, d) = a.dims3()?;
        let (_, m, _) = b.dims3()?;
        let av: Vec<f64> = a.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let bv: Vec<f64> = b.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let gv: Vec<f64> = grad.to_dtype(DType::F64)?.to_vec1()?;
        let mut ga = vec![0.0f64; av.len()];
        let mut gb = vec![0.0f64; bv.len()];
        for k in 0..batch {
            let pa = &av[k * n * d..(k + 1) * n * d];
            let pb = &bv[k * m * d..(k + 1) * m * d];
            let nn = kernels::nearest(pa, pb, d, Exec::default());
            for (i, (j, sq)) in nn.into_iter().enumerate() {
                let dist = sq.sqrt();
                if dist == 0.0 {
                    continue;
                }
                let scale = gv[k] / dist;
                for c in 0..d {
                    let diff = (pa[i * d + c] - pb[j * d + c]) * scale;
                    ga[k * n * d + i * d + c] += diff;
                    gb[k * m * d + j * d + c] -= diff;
                }
            }
        }
        let ga = Tensor::from_vec(ga, a.shape(), a.device())?.to_dtype(a.dtype())?;
        let gb = Tensor::from_vec(gb, b.shape(), b.device())?.to_dtype(b.dtype())?;
        Ok((Some(ga), Some(gb)))
    }
}

/// Differentiable `Σ_i min_j ‖a_i − b_j‖` per batch entry; `a: [B, n, d]`, `b: [B, m, d]` → `[B]`.
pub fn directed_distance_sum(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    a.contiguous()?.apply_op2(&b.contiguous()?, DirectedDistanceSum)
}

/// Differentiable Chamfer distance per batch entry.
pub fn chamfer_l2(pred: &Tensor, target: &Tensor) -> candle_core::Result<Tensor> {
    directed_distance_sum(pred, target)? + directed_distance_sum(target, pred)?
}

/// Differentiable partial matching distance (prediction → target) per batch entry.
pub fn partial_matching(pred: &Tensor, target: &Tensor) -> candle_core::Result<Tensor> {
    directed_distance_sum(pred, target)
}
