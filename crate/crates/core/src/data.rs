//! Tensor-shaped domain objects and the per-frame normalization used by the
//! enhancement stage.
//!
//! Point arrays are `[frames × points × channels]` with channels ordered
//! `x, y, z, radial velocity, intensity`.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::geometry::{fps_from, Exec};

pub const RADAR_CHANNELS: usize = 5;
pub const SHAPE_COEFFS: usize = 10;
/// Channel layout tag written into interchange files.
pub const CHANNEL_LAYOUT: &[u8; 5] = b"xyzvi";

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f32>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} contains non-finite values")))
    }
}

/// T frames of N radar returns with five channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarSequence {
    points: Array3<f32>,
    frame_rate_hz: f64,
}

impl RadarSequence {
    pub fn new(points: Array3<f32>, frame_rate_hz: f64) -> Result<Self> {
        let (t, n, c) = points.dim();
        if c != RADAR_CHANNELS {
            return Err(Error::Shape(format!("radar frames need 5 channels, got {c}")));
        }
        if t == 0 {
            return Err(Error::Shape("radar sequence has no frames".into()));
        }
        if n == 0 {
            return Err(Error::DegenerateFrame { frame: 0 });
        }
        if !(frame_rate_hz > 0.0) || !frame_rate_hz.is_finite() {
            return Err(Error::Invalid(format!("frame rate must be positive, got {frame_rate_hz}")));
        }
        check_finite(points.iter(), "radar sequence")?;
        if points.slice(s![.., .., 4]).iter().any(|&i| i < 0.0) {
            return Err(Error::Invalid("radar intensity must be nonnegative".into()));
        }
        Ok(Self { points, frame_rate_hz })
    }

    pub fn points(&self) -> &Array3<f32> {
        &self.points
    }

    pub fn into_points(self) -> Array3<f32> {
        self.points
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> usize {
        self.points.dim().0
    }

    pub fn points_per_frame(&self) -> usize {
        self.points.dim().1
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f32> {
        self.points.index_axis(Axis(0), t)
    }
}

/// Silhouette samples lifted to the camera plane; z is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPointSet {
    points: Array3<f32>,
}

impl MaskPointSet {
    pub fn new(points: Array3<f32>) -> Result<Self> {
        let (t, n, c) = points.dim();
        if c != 3 {
            return Err(Error::Shape(format!("mask points need 3 channels, got {c}")));
        }
        if t == 0 || n == 0 {
            return Err(Error::Shape("mask point set is empty".into()));
        }
        check_finite(points.iter(), "mask")?;
        if points.slice(s![.., .., 2]).iter().any(|&z| z != 0.0) {
            return Err(Error::Invalid("mask z channel must be exactly 0".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &Array3<f32> {
        &self.points
    }

    pub fn frames(&self) -> usize {
        self.points.dim().0
    }

    pub fn points_per_frame(&self) -> usize {
        self.points.dim().1
    }
}

/// Densified radar frames, same channel semantics as [`RadarSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedSequence {
    points: Array3<f32>,
}

impl EnhancedSequence {
    pub fn new(points: Array3<f32>) -> Result<Self> {
        let (t, n, c) = points.dim();
        if c != RADAR_CHANNELS {
            return Err(Error::Shape(format!("enhanced frames need 5 channels, got {c}")));
        }
        if t == 0 || n == 0 {
            return Err(Error::Shape("enhanced sequence is empty".into()));
        }
        check_finite(points.iter(), "enhanced sequence")?;
        Ok(Self { points })
    }

    pub fn points(&self) -> &Array3<f32> {
        &self.points
    }

    pub fn frames(&self) -> usize {
        self.points.dim().0
    }

    pub fn points_per_frame(&self) -> usize {
        self.points.dim().1
    }
}

/// Per-frame centroids subtracted by [`normalize_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTransform {
    centroids: Array2<f64>,
}

impl NormalizationTransform {
    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn frames(&self) -> usize {
        self.centroids.dim().0
    }
}

/// Centers the coordinate channels of every frame. Velocity and intensity are untouched.
pub fn normalize_sequence(seq: &RadarSequence) -> Result<(RadarSequence, NormalizationTransform)> {
    let (t, n, _) = seq.points.dim();
    if n == 0 {
        return Err(Error::DegenerateFrame { frame: 0 });
    }
    let mut centroids = Array2::<f64>::zeros((t, 3));
    let mut out = seq.points.clone();
    for f in 0..t {
        let frame = seq.points.index_axis(Axis(0), f);
        for c in 0..3 {
            let mean = frame.column(c).iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            centroids[[f, c]] = mean;
            for p in 0..n {
                out[[f, p, c]] = (frame[[p, c]] as f64 - mean) as f32;
            }
        }
    }
    let normalized = RadarSequence {
        points: out,
        frame_rate_hz: seq.frame_rate_hz,
    };
    Ok((normalized, NormalizationTransform { centroids }))
}

/// Re-adds each frame's centroid to channels 0..3 of a `[T × n × c]` array, `c ≥ 3`.
pub fn denormalize_points(points: &Array3<f32>, transform: &NormalizationTransform) -> Result<Array3<f32>> {
    let (t, n, c) = points.dim();
    if t != transform.frames() {
        return Err(Error::Shape(format!(
            "transform covers {} frames, points have {t}",
            transform.frames()
        )));
    }
    if c < 3 {
        return Err(Error::Shape(format!("need at least 3 coordinate channels, got {c}")));
    }
    let mut out = points.clone();
    for f in 0..t {
        for p in 0..n {
            for k in 0..3 {
                out[[f, p, k]] = (points[[f, p, k]] as f64 + transform.centroids[[f, k]]) as f32;
            }
        }
    }
    Ok(out)
}

/// Named joints with the limb subsets used by the upper/lower limb metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    names: Vec<String>,
    upper: Vec<usize>,
    lower: Vec<usize>,
}

impl Skeleton {
    pub fn new(names: Vec<String>, upper: Vec<usize>, lower: Vec<usize>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Invalid("skeleton has no joints".into()));
        }
        if upper.iter().chain(lower.iter()).any(|&i| i >= n) {
            return Err(Error::Invalid("limb index out of range".into()));
        }
        if upper.iter().any(|i| lower.contains(i)) {
            return Err(Error::Invalid("upper and lower limb sets overlap".into()));
        }
        Ok(Self { names, upper, lower })
    }

    /// Resolves limb subsets by joint name.
    pub fn from_names(names: &[&str], upper: &[&str], lower: &[&str]) -> Result<Self> {
        let find = |name: &str| {
            names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Invalid(format!("unknown joint `{name}`")))
        };
        let upper = upper.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        let lower = lower.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        Self::new(names.iter().map(|s| s.to_string()).collect(), upper, lower)
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn upper_limbs(&self) -> &[usize] {
        &self.upper
    }

    pub fn lower_limbs(&self) -> &[usize] {
        &self.lower
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Joint positions `[T × N_J × D]`, D ∈ {2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    positions: Array3<f32>,
    skeleton: Arc<Skeleton>,
}

impl JointSet {
    pub fn new(positions: Array3<f32>, skeleton: Arc<Skeleton>) -> Result<Self> {
        let (t, j, d) = positions.dim();
        if d != 2 && d != 3 {
            return Err(Error::Shape(format!("joint dimensionality must be 2 or 3, got {d}")));
        }
        if t == 0 {
            return Err(Error::Shape("joint set has no frames".into()));
        }
        if j != skeleton.joint_count() {
            return Err(Error::Shape(format!(
                "{j} joints but skeleton names {}",
                skeleton.joint_count()
            )));
        }
        check_finite(positions.iter(), "joint set")?;
        Ok(Self { positions, skeleton })
    }

    pub fn positions(&self) -> &Array3<f32> {
        &self.positions
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn dims(&self) -> usize {
        self.positions.dim().2
    }

    pub fn frames(&self) -> usize {
        self.positions.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.positions.dim().1
    }
}

/// Orthographic projection onto the x–y plane.
pub fn project_joints_2d(joints: &JointSet) -> Result<JointSet> {
    if joints.dims() != 3 {
        return Err(Error::Shape(format!("projection needs 3D joints, got {}D", joints.dims())));
    }
    let positions = joints.positions.slice(s![.., .., 0..2]).to_owned();
    JointSet::new(positions, joints.skeleton.clone())
}

/// Pose rotations, shape coefficients and root translation for T frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    /// `[T × J × 3 × 3]` rotation matrices.
    pub theta: Array4<f32>,
    /// `[T × 10]`.
    pub beta: Array2<f32>,
    /// `[T × 3]` meters.
    pub gamma: Array2<f32>,
}

pub const ROTATION_TOLERANCE: f64 = 1e-5;

impl BodyParams {
    pub fn new(theta: Array4<f32>, beta: Array2<f32>, gamma: Array2<f32>) -> Result<Self> {
        let (t, _, r, c) = theta.dim();
        if r != 3 || c != 3 {
            return Err(Error::Shape("theta must hold 3x3 matrices".into()));
        }
        if beta.dim() != (t, SHAPE_COEFFS) || gamma.dim() != (t, 3) {
            return Err(Error::Shape(format!(
                "beta {:?} / gamma {:?} do not match {t} frames",
                beta.dim(),
                gamma.dim()
            )));
        }
        check_finite(theta.iter().chain(beta.iter()).chain(gamma.iter()), "body params")?;
        let params = Self { theta, beta, gamma };
        params.check_rotations(ROTATION_TOLERANCE)?;
        Ok(params)
    }

    pub fn frames(&self) -> usize {
        self.theta.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.theta.dim().1
    }

    pub fn check_rotations(&self, tol: f64) -> Result<()> {
        let flat = self.theta.as_standard_layout();
        let values = flat.as_slice().expect("standard layout");
        crate::rotation::check_rotations(values, tol)
    }

    /// Identity pose, zero shape and zero translation.
    pub fn rest(frames: usize, joints: usize) -> Self {
        let mut theta = Array4::<f32>::zeros((frames, joints, 3, 3));
        for f in 0..frames {
            for j in 0..joints {
                for k in 0..3 {
                    theta[[f, j, k, k]] = 1.0;
                }
            }
        }
        Self {
            theta,
            beta: Array2::zeros((frames, SHAPE_COEFFS)),
            gamma: Array2::zeros((frames, 3)),
        }
    }
}

/// Resamples a `[n × c]` frame to exactly `target` rows.
///
/// Larger frames are thinned by seeded farthest point sampling on the
/// coordinates. Smaller frames keep every row once and are topped up by seeded
/// sampling with replacement.
pub fn resample_frame(points: ArrayView2<'_, f32>, target: usize, seed: u64) -> Result<Array2<f32>> {
    use rand::{Rng, SeedableRng};

    let (n, c) = points.dim();
    if n == 0 {
        return Err(Error::DegenerateFrame { frame: 0 });
    }
    if c < 3 {
        return Err(Error::Shape(format!("frame needs coordinate channels, got {c}")));
    }
    let indices: Vec<usize> = if n >= target {
        let coords: Vec<f32> = points
            .rows()
            .into_iter()
            .flat_map(|r| [r[0], r[1], r[2]])
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let start = rng.random_range(0..n);
        fps_from(&coords, 3, target, start, Exec::default())?
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).chain((n..target).map(|_| rng.random_range(0..n))).collect()
    };
    Ok(points.select(Axis(0), &indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq_from(points: Array3<f32>) -> RadarSequence {
        RadarSequence::new(points, 10.0).unwrap()
    }

    #[test]
    fn normalize_two_points() {
        let pts = array![[[1.0f32, 1.0, 1.0, 0.5, 0.1], [3.0, 3.0, 3.0, -0.5, 0.2]]];
        let (norm, tf) = normalize_sequence(&seq_from(pts)).unwrap();
        assert_eq!(
            norm.points(),
            &array![[[-1.0f32, -1.0, -1.0, 0.5, 0.1], [1.0, 1.0, 1.0, -0.5, 0.2]]]
        );
        assert_eq!(tf.centroids(), &array![[2.0, 2.0, 2.0]]);
    }

    #[test]
    fn normalize_fixed_point() {
        let pts = array![[[-1.0f32, 2.0, 0.0, 0.0, 1.0], [1.0, -2.0, 0.0, 0.0, 1.0]]];
        let seq = seq_from(pts);
        let (norm, tf) = normalize_sequence(&seq).unwrap();
        assert_eq!(norm.points(), seq.points());
        assert_eq!(tf.centroids(), &Array2::<f64>::zeros((1, 3)));
    }

    #[test]
    fn empty_frame_rejected() {
        let err = RadarSequence::new(Array3::zeros((2, 0, 5)), 10.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateFrame { .. }));
    }

    #[test]
    fn denormalize_examples() {
        let centered = array![[[-1.0f32, 0.0, 0.0], [1.0, 0.0, 0.0]]];
        let tf = NormalizationTransform {
            centroids: array![[5.0, 0.0, 0.0]],
        };
        assert_eq!(
            denormalize_points(&centered, &tf).unwrap(),
            array![[[4.0f32, 0.0, 0.0], [6.0, 0.0, 0.0]]]
        );
        let zero = NormalizationTransform {
            centroids: Array2::zeros((1, 3)),
        };
        assert_eq!(denormalize_points(&centered, &zero).unwrap(), centered);
    }

    #[test]
    fn denormalize_shape_mismatch() {
        let tf = NormalizationTransform {
            centroids: Array2::zeros((2, 3)),
        };
        assert!(matches!(
            denormalize_points(&Array3::zeros((3, 4, 3)), &tf),
            Err(Error::Shape(_))
        ));
    }

    fn skeleton(n: usize) -> Arc<Skeleton> {
        Arc::new(Skeleton::new((0..n).map(|i| format!("j{i}")).collect(), vec![], vec![]).unwrap())
    }

    #[test]
    fn projection_drops_depth() {
        let j = JointSet::new(array![[[1.0f32, 2.0, 3.0]]], skeleton(1)).unwrap();
        let p = project_joints_2d(&j).unwrap();
        assert_eq!(p.positions(), &array![[[1.0f32, 2.0]]]);
        assert_eq!(p.skeleton(), j.skeleton());
        let zero = JointSet::new(Array3::zeros((2, 1, 3)), skeleton(1)).unwrap();
        assert_eq!(project_joints_2d(&zero).unwrap().positions(), &Array3::<f32>::zeros((2, 1, 2)));
        assert!(project_joints_2d(&p).is_err());
    }

    #[test]
    fn skeleton_rejects_overlap() {
        assert!(Skeleton::new(vec!["a".into(), "b".into()], vec![0], vec![0]).is_err());
        assert!(Skeleton::new(vec!["a".into()], vec![3], vec![]).is_err());
    }

    #[test]
    fn resample_keeps_small_sets() {
        let pts = array![[0.0f32, 0.0, 0.0, 1.0, 1.0], [1.0, 0.0, 0.0, 2.0, 2.0], [0.0, 1.0, 0.0, 3.0, 3.0], [0.0, 0.0, 1.0, 4.0, 4.0]];
        let out = resample_frame(pts.view(), 4, 9).unwrap();
        let mut got: Vec<_> = out.rows().into_iter().map(|r| r[3] as i32).collect();
        got.sort();
        assert_eq!(got, vec![1, 2, 3, 4]);

        let two = pts.slice(s![0..2, ..]).to_owned();
        let up = resample_frame(two.view(), 4, 9).unwrap();
        assert_eq!(up.nrows(), 4);
        for row in up.rows() {
            assert!(two.rows().into_iter().any(|r| r == row));
        }
        assert!(resample_frame(Array2::<f32>::zeros((0, 5)).view(), 4, 0).is_err());
    }

    #[test]
    fn body_params_validate_rotations() {
        let mut p = BodyParams::rest(1, 2);
        assert!(BodyParams::new(p.theta.clone(), p.beta.clone(), p.gamma.clone()).is_ok());
        p.theta[[0, 1, 0, 0]] = 2.0;
        assert!(matches!(
            BodyParams::new(p.theta, p.beta, p.gamma),
            Err(Error::NotARotation { .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            frames in 1usize..4,
            n in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts = Array3::from_shape_fn((frames, n, 5), |(_, _, c)| {
                if c == 4 { rng.random_range(0.0..1.0) } else { rng.random_range(-5.0f32..5.0) }
            });
            let seq = seq_from(pts.clone());
            let (norm, tf) = normalize_sequence(&seq).unwrap();
            // Velocity and intensity are untouched.
            prop_assert_eq!(norm.points().slice(s![.., .., 3..]), pts.slice(s![.., .., 3..]));
            for f in 0..frames {
                for c in 0..3 {
                    let mean: f64 = norm.points().slice(s![f, .., c]).iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                    prop_assert!(mean.abs() < 1e-5);
                }
            }
            let back = denormalize_points(norm.points(), &tf).unwrap();
            for (a, b) in back.iter().zip(pts.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn projection_matches_first_two_channels(vals in proptest::collection::vec(-10.0f32..10.0, 2 * 3 * 3)) {
            let pos = Array3::from_shape_vec((2, 3, 3), vals).unwrap();
            let j = JointSet::new(pos.clone(), skeleton(3)).unwrap();
            let p = project_joints_2d(&j).unwrap();
            for t in 0..2 { for k in 0..3 { for d in 0..2 {
                prop_assert_eq!(p.positions()[[t, k, d]], pos[[t, k, d]]);
            }}}
        }

        #[test]
        fn resample_rows_come_from_input(n in 1usize..40, target in 1usize..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0f32..1.0));
            let out = resample_frame(pts.view(), target, seed).unwrap();
            prop_assert_eq!(out.nrows(), target);
            for row in out.rows() {
                prop_assert!(pts.rows().into_iter().any(|r| r == row));
            }
        }
    }
}
