//! Evaluation metrics. Positions are meters in, centimeters out; MPJPE is
//! on absolute positions (no root alignment).

use std::fmt::Write as _;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::JointSet;
use crate::error::{Error, Result};
use crate::rotation::{geodesic_angle, Mat3};

fn same_shape<A: PartialEq + std::fmt::Debug>(a: A, b: A) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("prediction {a:?} vs ground truth {b:?}")));
    }
    Ok(())
}

/// Mean Euclidean distance over the last axis of `[T × K × 3]` arrays, in meters.
fn mean_point_error(pred: &Array3<f32>, gt: &Array3<f32>) -> Result<f64> {
    same_shape(pred.dim(), gt.dim())?;
    let (t, k, _) = pred.dim();
    if t * k == 0 {
        return Err(Error::Shape("no points to compare".into()));
    }
    let mut sum = 0.0;
    for (p, g) in pred.lanes(Axis(2)).into_iter().zip(gt.lanes(Axis(2))) {
        sum += p
            .iter()
            .zip(g.iter())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    Ok(sum / (t * k) as f64)
}

pub fn mpjpe(pred: &JointSet, gt: &JointSet) -> Result<f64> {
    if pred.dims() != 3 || gt.dims() != 3 {
        return Err(Error::Shape("MPJPE needs 3D joints".into()));
    }
    Ok(100.0 * mean_point_error(pred.positions(), gt.positions())?)
}

pub fn mpvpe(pred: &Array3<f32>, gt: &Array3<f32>) -> Result<f64> {
    Ok(100.0 * mean_point_error(pred, gt)?)
}

/// Mean root-translation error, `[T × 3]` inputs.
pub fn mte(pred: &Array2<f32>, gt: &Array2<f32>) -> Result<f64> {
    let p = pred.view().insert_axis(Axis(1)).to_owned();
    let g = gt.view().insert_axis(Axis(1)).to_owned();
    Ok(100.0 * mean_point_error(&p, &g)?)
}

/// Mean geodesic angle in degrees over `[T × J × 3 × 3]` rotations.
pub fn mpjre(pred: &Array4<f32>, gt: &Array4<f32>) -> Result<f64> {
    same_shape(pred.dim(), gt.dim())?;
    for r in [pred, gt] {
        let flat = r.as_standard_layout();
        crate::rotation::check_rotations(flat.as_slice().unwrap(), crate::data::ROTATION_TOLERANCE)?;
    }
    let (t, j, _, _) = pred.dim();
    let mat = |a: &Array4<f32>, f: usize, k: usize| -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = a[[f, k, r, c]] as f64;
            }
        }
        m
    };
    let mut sum = 0.0;
    for f in 0..t {
        for k in 0..j {
            sum += geodesic_angle(&mat(pred, f, k), &mat(gt, f, k));
        }
    }
    Ok((sum / (t * j) as f64).to_degrees())
}

/// `(MPULE, MPLLE)` over the skeleton's arm and leg joint subsets.
pub fn limb_errors(pred: &JointSet, gt: &JointSet) -> Result<(f64, f64)> {
    same_shape(pred.positions().dim(), gt.positions().dim())?;
    let sk = gt.skeleton();
    let subset = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::Invalid("skeleton has no limb joints".into()));
        }
        let p = pred.positions().select(Axis(1), idx);
        let g = gt.positions().select(Axis(1), idx);
        Ok(100.0 * mean_point_error(&p, &g)?)
    };
    Ok((subset(sk.upper_limbs())?, subset(sk.lower_limbs())?))
}

/// Mean jerk magnitude in km/s³ from the stencil
/// `(x[t+2] − 3x[t+1] + 3x[t] − x[t−1])·f³` over frames 1..T−2.
pub fn jitter(joints: &JointSet, frame_rate_hz: f64) -> Result<f64> {
    let pos = joints.positions();
    let (t, j, d) = pos.dim();
    if t < 4 {
        return Err(Error::Shape(format!("jitter needs at least 4 frames, got {t}")));
    }
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Invalid("frame rate must be positive".into()));
    }
    let f3 = frame_rate_hz.powi(3);
    let mut sum = 0.0;
    for f in 1..t - 2 {
        for k in 0..j {
            let mut sq = 0.0;
            for c in 0..d {
                let x = |i: usize| pos[[i, k, c]] as f64;
                let jerk = (x(f + 2) - 3.0 * x(f + 1) + 3.0 * x(f) - x(f - 1)) * f3;
                sq += jerk * jerk;
            }
            sum += sq.sqrt();
        }
    }
    Ok(sum / ((t - 3) * j) as f64 / 1000.0)
}

/// Aggregated evaluation metrics. `None` marks a metric that does not apply
/// (no vertices or rotations in joints-only mode, too few frames for jitter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame_count: usize,
    pub mpjpe_cm: f64,
    pub mpvpe_cm: Option<f64>,
    pub mte_cm: f64,
    pub mpjre_deg: Option<f64>,
    pub mpule_cm: f64,
    pub mplle_cm: f64,
    pub jitter_km_s3: Option<f64>,
}

/// Column order of [`EvalReport::csv_row`].
pub const REPORT_COLUMNS: [&str; 8] = [
    "frame_count",
    "mpjpe_cm",
    "mpvpe_cm",
    "mte_cm",
    "mpjre_deg",
    "mpule_cm",
    "mplle_cm",
    "jitter_km_s3",
];

/// Prediction and ground truth of one window, as consumed by [`EvalReport::compute`].
pub struct EvalInput<'a> {
    pub pred_joints: &'a JointSet,
    pub gt_joints: &'a JointSet,
    pub pred_gamma: &'a Array2<f32>,
    pub gt_gamma: &'a Array2<f32>,
    pub vertices: Option<(&'a Array3<f32>, &'a Array3<f32>)>,
    pub rotations: Option<(&'a Array4<f32>, &'a Array4<f32>)>,
    pub frame_rate_hz: f64,
}

impl EvalReport {
    pub fn compute(input: &EvalInput<'_>) -> Result<Self> {
        let (mpule_cm, mplle_cm) = limb_errors(input.pred_joints, input.gt_joints)?;
        let jitter_km_s3 = if input.pred_joints.frames() >= 4 {
            Some(jitter(input.pred_joints, input.frame_rate_hz)?)
        } else {
            None
        };
        Ok(Self {
            frame_count: input.gt_joints.frames(),
            mpjpe_cm: mpjpe(input.pred_joints, input.gt_joints)?,
            mpvpe_cm: input.vertices.map(|(p, g)| mpvpe(p, g)).transpose()?,
            mte_cm: mte(input.pred_gamma, input.gt_gamma)?,
            mpjre_deg: input.rotations.map(|(p, g)| mpjre(p, g)).transpose()?,
            mpule_cm,
            mplle_cm,
            jitter_km_s3,
        })
    }

    /// Frame-weighted mean of per-window reports.
    pub fn aggregate(reports: &[EvalReport]) -> Result<Self> {
        let total: usize = reports.iter().map(|r| r.frame_count).sum();
        if total == 0 {
            return Err(Error::Invalid("no frames to aggregate".into()));
        }
        let mean = |get: &dyn Fn(&EvalReport) -> f64| {
            reports.iter().map(|r| get(r) * r.frame_count as f64).sum::<f64>() / total as f64
        };
        let mean_opt = |get: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            let present: Vec<(f64, usize)> = reports
                .iter()
                .filter_map(|r| get(r).map(|v| (v, r.frame_count)))
                .collect();
            if present.len() != reports.len() {
                return None;
            }
            Some(present.iter().map(|(v, n)| v * *n as f64).sum::<f64>() / total as f64)
        };
        Ok(Self {
            frame_count: total,
            mpjpe_cm: mean(&|r| r.mpjpe_cm),
            mpvpe_cm: mean_opt(&|r| r.mpvpe_cm),
            mte_cm: mean(&|r| r.mte_cm),
            mpjre_deg: mean_opt(&|r| r.mpjre_deg),
            mpule_cm: mean(&|r| r.mpule_cm),
            mplle_cm: mean(&|r| r.mplle_cm),
            jitter_km_s3: mean_opt(&|r| r.jitter_km_s3),
        })
    }

    fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.frame_count as f64),
            Some(self.mpjpe_cm),
            self.mpvpe_cm,
            Some(self.mte_cm),
            self.mpjre_deg,
            Some(self.mpule_cm),
            Some(self.mplle_cm),
            self.jitter_km_s3,
        ]
    }

    /// `key = value` lines; absent metrics read `absent`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_COLUMNS.iter().zip(self.values()) {
            match (k, v) {
                (&"frame_count", _) => writeln!(out, "{k} = {}", self.frame_count),
                (_, Some(v)) => writeln!(out, "{k} = {v:.6}"),
                (_, None) => writeln!(out, "{k} = absent"),
            }
            .expect("string write");
        }
        out
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    /// One CSV row in [`REPORT_COLUMNS`] order; absent metrics are empty cells.
    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .enumerate()
            .map(|(i, v)| match (i, v) {
                (0, _) => self.frame_count.to_string(),
                (_, Some(v)) => format!("{v:.6}"),
                (_, None) => String::new(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}
