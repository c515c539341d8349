//! Dataset ingestion, mask alignment, synthetic scenes and file formats.
//!
//! A dataset directory holds a `manifest.toml` that names every frame file.
//! Example:
//!
//! ```toml
//! layout = "parametric"        # or "joints_only"
//! frame_rate_hz = 10.0
//! joint_count = 22
//! units = "meters"
//! coordinate_frame = "camera"  # x right, y up, z away from the sensor
//!
//! [mask_alignment]
//! principal_point = [320.0, 240.0]
//! scale = 0.005                 # meters per pixel
//!
//! [[frames]]
//! radar = "radar/000000.txt"
//! joints = "joints/000000.txt"
//! params = "params/000000.txt"  # parametric layout only
//! mask = "mask/000000.txt"      # optional
//! ```

pub mod enhanced;
pub mod synth;
pub mod text;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::body::{skeleton_17, toy_skeleton};
use crate::config::PipelineConfig;
use crate::data::{resample_frame, BodyParams, JointSet, MaskPointSet, RadarSequence, Skeleton, SHAPE_COEFFS};
use crate::error::{Error, Result};

pub use enhanced::{load_enhanced, save_enhanced};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Body-model parameters and joints per frame.
    Parametric,
    /// 3D joints only.
    JointsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskAlignment {
    pub principal_point: [f64; 2],
    pub scale: f64,
}

impl MaskAlignment {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Invalid(format!("mask scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub radar: PathBuf,
    pub joints: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub layout: Layout,
    pub frame_rate_hz: f64,
    pub joint_count: usize,
    pub units: String,
    pub coordinate_frame: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_alignment: Option<MaskAlignment>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Dataset {
            path: path.clone(),
            message: format!("cannot read manifest: {e}"),
        })?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Dataset {
            path: path.clone(),
            message: e.to_string(),
        })?;
        m.validate(&path)?;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |m: String| Error::Dataset {
            path: path.to_path_buf(),
            message: m,
        };
        if !(self.frame_rate_hz > 0.0) {
            return Err(bad("frame_rate_hz must be positive".into()));
        }
        if self.units != "meters" {
            return Err(bad(format!("unsupported units `{}`", self.units)));
        }
        if self.frames.is_empty() {
            return Err(bad("manifest lists no frames".into()));
        }
        if let Some(a) = &self.mask_alignment {
            a.validate()?;
        }
        let has_mask = self.frames.iter().any(|f| f.mask.is_some());
        if has_mask && self.mask_alignment.is_none() {
            return Err(bad("mask files require a [mask_alignment] table".into()));
        }
        match self.layout {
            Layout::Parametric if self.frames.iter().any(|f| f.params.is_none()) => {
                Err(bad("parametric layout needs a params file for every frame".into()))
            }
            Layout::JointsOnly if self.frames.iter().any(|f| f.params.is_some()) => {
                Err(bad("joints_only layout must not list params files".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn skeleton(&self) -> Result<Arc<Skeleton>> {
        match self.joint_count {
            22 => Ok(toy_skeleton()),
            17 => Ok(skeleton_17()),
            n => Err(Error::Config(format!("no skeleton definition for {n} joints"))),
        }
    }
}

/// Maps pixel coordinates `[n × 2]` to metric camera-plane points
/// `x = (u − u₀)·s`, `y = −(v − v₀)·s`, `z = 0`, then subtracts the centroid.
/// Returns the points and the removed centroid.
pub fn align_mask(pixels: &Array2<f32>, cfg: &MaskAlignment) -> Result<(Array2<f32>, [f64; 2])> {
    cfg.validate()?;
    if pixels.ncols() != 2 || pixels.nrows() == 0 {
        return Err(Error::Shape("mask pixels must be a non-empty [n × 2] array".into()));
    }
    let [u0, v0] = cfg.principal_point;
    let metric: Vec<[f64; 2]> = pixels
        .rows()
        .into_iter()
        .map(|r| [(r[0] as f64 - u0) * cfg.scale, -(r[1] as f64 - v0) * cfg.scale])
        .collect();
    let n = metric.len() as f64;
    let cx = metric.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = metric.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut out = Array2::<f32>::zeros((metric.len(), 3));
    for (i, p) in metric.iter().enumerate() {
        out[[i, 0]] = (p[0] - cx) as f32;
        out[[i, 1]] = (p[1] - cy) as f32;
    }
    Ok((out, [cx, cy]))
}

/// Inverse of [`align_mask`] given the removed centroid.
pub fn unalign_mask(points: &Array2<f32>, centroid: [f64; 2], cfg: &MaskAlignment) -> Result<Array2<f32>> {
    cfg.validate()?;
    let [u0, v0] = cfg.principal_point;
    let mut out = Array2::<f32>::zeros((points.nrows(), 2));
    for (i, r) in points.rows().into_iter().enumerate() {
        out[[i, 0]] = ((r[0] as f64 + centroid[0]) / cfg.scale + u0) as f32;
        out[[i, 1]] = (v0 - (r[1] as f64 + centroid[1]) / cfg.scale) as f32;
    }
    Ok(out)
}

/// T consecutive frames with their supervision.
#[derive(Debug, Clone)]
pub struct DatasetWindow {
    pub start_frame: usize,
    pub radar: RadarSequence,
    pub mask: Option<MaskPointSet>,
    pub gt_params: Option<BodyParams>,
    pub gt_joints: JointSet,
}

impl DatasetWindow {
    pub fn frames(&self) -> usize {
        self.radar.frames()
    }
}

/// One loaded frame before windowing.
#[derive(Debug, Clone)]
pub struct FrameData {
    /// `[N × 5]`, already resampled.
    pub radar: Array2<f32>,
    /// `[M × 3]` centered camera-plane points, already resampled.
    pub mask: Option<Array2<f32>>,
    /// `[J × 3]`.
    pub joints: Array2<f32>,
    pub params: Option<crate::io::text::FrameParams>,
}

/// Number of sliding windows of length `t` with `stride` over `frames`.
pub fn window_count(frames: usize, t: usize, stride: usize) -> usize {
    if frames < t || stride == 0 {
        0
    } else {
        (frames - t) / stride + 1
    }
}

/// Cuts sliding windows out of loaded frames.
pub fn make_windows(frames: &[FrameData], skeleton: Arc<Skeleton>, frame_rate_hz: f64, cfg: &PipelineConfig) -> Result<Vec<DatasetWindow>> {
    let t = cfg.frames_per_window;
    let count = window_count(frames.len(), t, cfg.window_stride);
    if count == 0 {
        return Err(Error::Invalid(format!(
            "{} frames cannot fill a {t}-frame window",
            frames.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * cfg.window_stride;
        let span = &frames[start..start + t];
        let stack = |get: &dyn Fn(&FrameData) -> ndarray::ArrayView2<'_, f32>| -> Result<Array3<f32>> {
            let views: Vec<_> = span.iter().map(|f| get(f).insert_axis(Axis(0))).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
        };
        let radar = RadarSequence::new(stack(&|f| f.radar.view())?, frame_rate_hz)?;
        let gt_joints = JointSet::new(stack(&|f| f.joints.view())?, skeleton.clone())?;
        let mask = if span.iter().all(|f| f.mask.is_some()) {
            Some(MaskPointSet::new(stack(&|f| f.mask.as_ref().unwrap().view())?)?)
        } else {
            None
        };
        let gt_params = if span.iter().all(|f| f.params.is_some()) {
            let j = span[0].params.as_ref().unwrap().2.len();
            let mut theta = Array4::<f32>::zeros((t, j, 3, 3));
            let mut beta = Array2::<f32>::zeros((t, SHAPE_COEFFS));
            let mut gamma = Array2::<f32>::zeros((t, 3));
            for (i, f) in span.iter().enumerate() {
                let (g, b, th) = f.params.as_ref().unwrap();
                if th.len() != j {
                    return Err(Error::Shape("frames disagree on joint count".into()));
                }
                gamma.row_mut(i).assign(&ndarray::ArrayView1::from(&g[..]));
                beta.row_mut(i).assign(&ndarray::ArrayView1::from(&b[..]));
                for (k, r) in th.iter().enumerate() {
                    for e in 0..9 {
                        theta[[i, k, e / 3, e % 3]] = r[e];
                    }
                }
            }
            Some(BodyParams::new(theta, beta, gamma)?)
        } else {
            None
        };
        out.push(DatasetWindow {
            start_frame: start,
            radar,
            mask,
            gt_params,
            gt_joints,
        });
    }
    Ok(out)
}

fn frame_seed(cfg: &PipelineConfig, index: usize, salt: u64) -> u64 {
    cfg.seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt)
        .wrapping_add(index as u64)
}

/// Reads and resamples one radar frame file.
pub fn read_radar_frame(path: &Path, index: usize, cfg: &PipelineConfig) -> Result<Array2<f32>> {
    let raw = text::read_table(path, 5)?;
    if raw.nrows() == 0 {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            message: "radar frame has no points".into(),
        });
    }
    resample_frame(raw.view(), cfg.raw_points, frame_seed(cfg, index, 1))
}

/// A loaded dataset directory.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub skeleton: Arc<Skeleton>,
    pub frames: Vec<FrameData>,
}

impl Dataset {
    /// Loads every frame listed in the manifest. Masks are read only when
    /// `with_masks` is set.
    pub fn load(root: &Path, cfg: &PipelineConfig, with_masks: bool) -> Result<Self> {
        let manifest = Manifest::load(root)?;
        let skeleton = manifest.skeleton()?;
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for (i, entry) in manifest.frames.iter().enumerate() {
            let radar = read_radar_frame(&root.join(&entry.radar), i, cfg)?;
            let joints = text::read_table(&root.join(&entry.joints), 3)?;
            if joints.nrows() != manifest.joint_count {
                return Err(Error::Dataset {
                    path: root.join(&entry.joints),
                    message: format!("{} joints, manifest declares {}", joints.nrows(), manifest.joint_count),
                });
            }
            let params = entry
                .params
                .as_ref()
                .map(|p| text::read_params(&root.join(p), manifest.joint_count))
                .transpose()?;
            let mask = match (&entry.mask, with_masks) {
                (Some(p), true) => {
                    let pixels = text::read_table(&root.join(p), 2)?;
                    let align = manifest.mask_alignment.as_ref().expect("validated");
                    let (pts, _) = align_mask(&pixels, align)?;
                    Some(resample_frame(pts.view(), cfg.mask_points, frame_seed(cfg, i, 2))?)
                }
                _ => None,
            };
            frames.push(FrameData {
                radar,
                mask,
                joints,
                params,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            skeleton,
            frames,
        })
    }

    pub fn windows(&self, cfg: &PipelineConfig) -> Result<Vec<DatasetWindow>> {
        if cfg.joint_count != self.manifest.joint_count {
            return Err(Error::Config(format!(
                "config supervises {} joints, dataset has {}",
                cfg.joint_count, self.manifest.joint_count
            )));
        }
        make_windows(&self.frames, self.skeleton.clone(), self.manifest.frame_rate_hz, cfg)
    }
}

/// Loads the radar frames of a dataset directory and nothing else.
pub fn load_radar_only(root: &Path, cfg: &PipelineConfig) -> Result<(RadarSequence, Manifest)> {
    let manifest = Manifest::load(root)?;
    let frames = manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, e)| read_radar_frame(&root.join(&e.radar), i, cfg).map(|a| a.insert_axis(Axis(0))))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = frames.iter().map(|a| a.view()).collect();
    let points = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((RadarSequence::new(points, manifest.frame_rate_hz)?, manifest))
}

/// Radar windows over a full sequence (used by inference).
pub fn radar_windows(seq: &RadarSequence, t: usize) -> Result<Vec<(usize, RadarSequence)>> {
    if seq.frames() < t {
        return Err(Error::Invalid(format!("{} frames cannot fill a {t}-frame window", seq.frames())));
    }
    // Non-overlapping windows, with a final window aligned to the end.
    let mut starts: Vec<usize> = (0..=seq.frames() - t).step_by(t).collect();
    if *starts.last().unwrap() + t < seq.frames() {
        starts.push(seq.frames() - t);
    }
    starts
        .into_iter()
        .map(|s0| {
            let pts = seq.points().slice(s![s0..s0 + t, .., ..]).to_owned();
            Ok((s0, RadarSequence::new(pts, seq.frame_rate_hz())?))
        })
        .collect()
}
