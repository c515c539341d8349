//! Deterministic geometric kernels shared by both stages.
//!
//! Chamfer distance here follows the unsquared, summed form: for every point
//! of one set, the Euclidean distance to its nearest neighbor in the other
//! set, summed over the set and over both directions. Many libraries square
//! and average instead; magnitudes are therefore not comparable with those.

pub mod diff;
pub mod kernels;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
pub use kernels::Exec;

/// A finite, non-empty `[n × d]` point set with d ∈ {2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Array2<f64>,
}

impl PointSet {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        let (n, d) = coords.dim();
        if n == 0 {
            return Err(Error::SampleCount { requested: 1, available: 0 });
        }
        if d != 2 && d != 3 {
            return Err(Error::Shape(format!("point sets must be 2D or 3D, got {d}D")));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("point set contains non-finite values".into()));
        }
        Ok(Self {
            coords: coords.as_standard_layout().into_owned(),
        })
    }

    /// Takes the first `dims` channels of an `f32` frame.
    pub fn from_frame(frame: ArrayView2<'_, f32>, dims: usize) -> Result<Self> {
        if frame.ncols() < dims {
            return Err(Error::Shape(format!("frame has {} channels, need {dims}", frame.ncols())));
        }
        let coords = Array2::from_shape_fn((frame.nrows(), dims), |(i, k)| frame[[i, k]] as f64);
        Self::new(coords)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice().expect("standard layout")
    }
}

fn check_dims(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "dimensionality mismatch: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Seeded farthest point sampling: the first index comes from `seed`, every
/// later one maximizes the minimum distance to those already chosen.
pub fn farthest_point_sampling(set: &PointSet, k: usize, seed: u64) -> Result<Vec<usize>> {
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..set.len());
    fps_from(set.as_slice(), set.dims(), k, start, Exec::default())
}

/// Farthest point sampling from an explicit starting index.
pub fn fps_from<T>(coords: &[T], dim: usize, k: usize, start: usize, exec: Exec) -> Result<Vec<usize>>
where
    T: num_traits::Float + Send + Sync,
{
    let n = coords.len() / dim;
    if k == 0 || k > n {
        return Err(Error::SampleCount { requested: k, available: n });
    }
    if start >= n {
        return Err(Error::Invalid(format!("start index {start} out of range for {n} points")));
    }
    Ok(kernels::farthest_point_sampling(coords, dim, k, start, exec))
}

/// Index of the point farthest from the set's centroid (lowest index on ties).
///
/// Used as a permutation-invariant FPS start inside the networks.
pub fn farthest_from_centroid<T: num_traits::Float>(coords: &[T], dim: usize) -> usize {
    let n = coords.len() / dim;
    let mut centroid = vec![T::zero(); dim];
    for p in coords.chunks(dim) {
        for (c, &v) in centroid.iter_mut().zip(p) {
            *c = *c + v;
        }
    }
    let inv = T::from(n).unwrap().recip();
    centroid.iter_mut().for_each(|c| *c = *c * inv);
    let mut best = (0usize, T::neg_infinity());
    for (i, p) in coords.chunks(dim).enumerate() {
        let d = kernels::squared_distance(p, &centroid);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Symmetric summed nearest-neighbor distance.
pub fn chamfer_l2(pred: &PointSet, target: &PointSet) -> Result<f64> {
    check_dims(pred, target)?;
    let exec = Exec::default();
    let d = pred.dims();
    Ok(kernels::directed_distance_sum(pred.as_slice(), target.as_slice(), d, exec)
        + kernels::directed_distance_sum(target.as_slice(), pred.as_slice(), d, exec))
}

/// The prediction-to-target half of [`chamfer_l2`].
pub fn partial_matching(pred: &PointSet, target: &PointSet) -> Result<f64> {
    check_dims(pred, target)?;
    Ok(kernels::directed_distance_sum(
        pred.as_slice(),
        target.as_slice(),
        pred.dims(),
        Exec::default(),
    ))
}

/// Copies velocity and intensity (channels 3 and 4) from the nearest source
/// point by 3D distance, lowest index on ties. Returns `[m × 2]`.
pub fn transfer_attributes(generated: &PointSet, source: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    if source.nrows() == 0 {
        return Err(Error::DegenerateFrame { frame: 0 });
    }
    if generated.dims() != 3 || source.ncols() < 5 {
        return Err(Error::Shape("attribute transfer needs 3D points and a 5-channel source".into()));
    }
    let src = PointSet::from_frame(source, 3)?;
    let nn = kernels::nearest(generated.as_slice(), src.as_slice(), 3, Exec::default());
    let mut out = Array2::<f32>::zeros((generated.len(), 2));
    for (i, (j, _)) in nn.into_iter().enumerate() {
        out[[i, 0]] = source[[j, 3]];
        out[[i, 1]] = source[[j, 4]];
    }
    Ok(out)
}

/// Concatenates two 5-channel frames and keeps `target` rows chosen by seeded
/// farthest point sampling on the coordinates.
pub fn merge_downsample<'a>(
    a: ArrayView2<'a, f32>,
    b: ArrayView2<'a, f32>,
    target: usize,
    seed: u64,
) -> Result<Array2<f32>> {
    if a.ncols() != 5 || b.ncols() != 5 {
        return Err(Error::Shape("merge_downsample needs 5-channel frames".into()));
    }
    let total = a.nrows() + b.nrows();
    if total < target {
        return Err(Error::SampleCount {
            requested: target,
            available: total,
        });
    }
    let merged = ndarray::concatenate(Axis(0), &[a, b]).expect("same width");
    let set = PointSet::from_frame(merged.view(), 3)?;
    let idx = farthest_point_sampling(&set, target, seed)?;
    Ok(merged.select(Axis(0), &idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set(v: Array2<f64>) -> PointSet {
        PointSet::new(v).unwrap()
    }

    #[test]
    fn fps_square_diagonal() {
        let s = set(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let idx = fps_from(s.as_slice(), 2, 2, 0, Exec::Sequential).unwrap();
        assert_eq!(idx, vec![0, 3]);
        let all = farthest_point_sampling(&s, 4, 7).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(matches!(
            farthest_point_sampling(&s, 5, 0),
            Err(Error::SampleCount { .. })
        ));
    }

    #[test]
    fn chamfer_examples() {
        let a = set(array![[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&a, &a).unwrap(), 0.0);
        let b = set(array![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&b, &a).unwrap(), 2.0);
        let two = set(array![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let one = set(array![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&two, &one).unwrap(), 3.0);
        assert_eq!(partial_matching(&two, &one).unwrap(), 2.0);
        assert_eq!(partial_matching(&two, &two).unwrap(), 0.0);
        let flat = set(array![[1.0, 0.0]]);
        assert!(chamfer_l2(&flat, &one).is_err());
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(PointSet::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn transfer_examples() {
        let raw = array![[0.0f32, 0.0, 0.0, 0.5, 0.9], [1.0, 1.0, 1.0, -0.2, 0.1]];
        let gen = set(array![[1.0, 1.0, 1.0], [0.1, 0.0, 0.0]]);
        let attrs = transfer_attributes(&gen, raw.view()).unwrap();
        assert_eq!(attrs, array![[-0.2f32, 0.1], [0.5, 0.9]]);
        let single = raw.slice(ndarray::s![0..1, ..]);
        let attrs = transfer_attributes(&gen, single).unwrap();
        assert_eq!(attrs, array![[0.5f32, 0.9], [0.5, 0.9]]);
    }

    #[test]
    fn merge_examples() {
        let a = array![
            [0.0f32, 0.0, 0.0, 1.0, 1.0],
            [1.0, 0.0, 0.0, 2.0, 1.0],
            [0.0, 1.0, 0.0, 3.0, 1.0],
            [0.0, 0.0, 1.0, 4.0, 1.0]
        ];
        let out = merge_downsample(a.view(), a.view(), 4, 1).unwrap();
        assert_eq!(out.nrows(), 4);
        for row in out.rows() {
            assert!(a.rows().into_iter().any(|r| r == row));
        }
        let far = a.mapv(|v| v + 100.0);
        let six_a = a.slice(ndarray::s![0..3, ..]);
        let six_b = far.slice(ndarray::s![0..3, ..]);
        let out = merge_downsample(six_a, six_b, 6, 3).unwrap();
        assert_eq!(out.nrows(), 6);
        assert!(merge_downsample(six_a, six_b, 7, 3).is_err());
    }
}
