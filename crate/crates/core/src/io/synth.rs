//! Synthetic scenes: the toy body model animated through smooth seeded pose
//! trajectories, observed by a virtual radar at a configurable origin and by
//! an orthographic silhouette camera.

use std::path::Path;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::text::{self, FrameParams};
use super::{align_mask, make_windows, DatasetWindow, FrameData, FrameEntry, Layout, Manifest, MaskAlignment};
use crate::body::{skeleton_17, toy_skeleton, BodyModel, ToyBodyModel, JOINTS17_FROM_TOY, TOY_JOINT_NAMES};
use crate::config::PipelineConfig;
use crate::data::{resample_frame, BodyParams, SHAPE_COEFFS};
use crate::error::{Error, Result};
use crate::rotation::axis_angle_to_matrix;

pub const DEFAULT_ALIGNMENT: MaskAlignment = MaskAlignment {
    principal_point: [320.0, 240.0],
    scale: 0.005,
};

/// Relative swing amplitude per toy joint.
fn joint_amplitude(name: &str) -> f64 {
    if name.contains("hip") || name.contains("shoulder") || name.contains("knee") || name.contains("elbow") {
        1.0
    } else if name.contains("spine") || name == "neck" || name.contains("collar") {
        0.25
    } else {
        0.0
    }
}

/// A generated scene, kept at full (unresampled) resolution.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub frame_rate_hz: f64,
    pub layout: Layout,
    pub alignment: MaskAlignment,
    /// Per frame `[n_t × 5]`; n_t varies around the configured N.
    pub radar: Vec<Array2<f32>>,
    /// Per frame `[M × 2]` pixel coordinates.
    pub mask_pixels: Vec<Array2<f32>>,
    /// Per frame `[J × 3]`.
    pub joints: Vec<Array2<f32>>,
    /// Generating parameters for every frame (always present, also in joints-only scenes).
    pub params: BodyParams,
    /// `[T × V × 3]` posed mesh vertices.
    pub vertices: Array3<f32>,
}

fn frame_params(params: &BodyParams, f: usize) -> FrameParams {
    let j = params.joint_count();
    let gamma = [0, 1, 2].map(|c| params.gamma[[f, c]]);
    let beta: [f32; 10] = std::array::from_fn(|c| params.beta[[f, c]]);
    let theta = (0..j)
        .map(|k| std::array::from_fn(|e| params.theta[[f, k, e / 3, e % 3]]))
        .collect();
    (gamma, beta, theta)
}

/// Animates the toy model and renders radar and silhouette observations.
pub fn generate_synthetic_scene(seed: u64, cfg: &PipelineConfig) -> Result<SyntheticScene> {
    let model = ToyBodyModel::new()?;
    let frames = cfg.synth_frames;
    if frames == 0 {
        return Err(Error::Config("synth_frames must be positive".into()));
    }
    let rate = cfg.synth_frame_rate_hz;
    let j = model.joint_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Pose trajectories: two sinusoids per axis per animated joint.
    let waves: Vec<[[(f64, f64, f64); 2]; 3]> = (0..j)
        .map(|_| {
            std::array::from_fn(|_| {
                std::array::from_fn(|h| {
                    let freq = rng.random_range(0.15..0.6) * (h + 1) as f64;
                    let amp = rng.random_range(0.3..1.0) / (h + 1) as f64;
                    (freq, amp, rng.random_range(0.0..std::f64::consts::TAU))
                })
            })
        })
        .collect();
    let beta_scene: Vec<f32> = (0..SHAPE_COEFFS)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|v: f64| v as f32)
        .collect();
    let drift: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(0.05..0.2), rng.random_range(0.0..std::f64::consts::TAU)));

    let mut theta = Array4::<f32>::zeros((frames, j, 3, 3));
    let mut beta = Array2::<f32>::zeros((frames, SHAPE_COEFFS));
    let mut gamma = Array2::<f32>::zeros((frames, 3));
    for f in 0..frames {
        let time = f as f64 / rate;
        for k in 0..j {
            let scale = cfg.synth_pose_amplitude * if k == 0 { 0.3 } else { joint_amplitude(TOY_JOINT_NAMES[k]) };
            let aa: [f64; 3] = std::array::from_fn(|c| {
                waves[k][c]
                    .iter()
                    .map(|(fr, a, ph)| a * (std::f64::consts::TAU * fr * time + ph).sin())
                    .sum::<f64>()
                    * scale
            });
            let r = axis_angle_to_matrix(aa);
            for a in 0..3 {
                for b in 0..3 {
                    theta[[f, k, a, b]] = r[a][b] as f32;
                }
            }
        }
        for (c, b) in beta_scene.iter().enumerate() {
            beta[[f, c]] = *b;
        }
        let sway = |i: usize, amp: f64| amp * (std::f64::consts::TAU * drift[i].0 * time + drift[i].1).sin();
        gamma[[f, 0]] = (cfg.synth_sensor_origin[0] + sway(0, 0.15)) as f32;
        gamma[[f, 1]] = (cfg.synth_sensor_origin[1] + sway(1, 0.03)) as f32;
        gamma[[f, 2]] = (cfg.synth_sensor_origin[2] + cfg.synth_subject_depth + sway(2, 0.2)) as f32;
    }
    let params = BodyParams::new(theta, beta, gamma)?;

    let posed: Vec<_> = (0..frames)
        .map(|f| {
            let rots = crate::body::theta_to_mats(&params.theta, f);
            let b: Vec<f64> = params.beta.row(f).iter().map(|&v| v as f64).collect();
            let g = [0, 1, 2].map(|c| params.gamma[[f, c]] as f64);
            model.pose(&rots, &b, g)
        })
        .collect::<Result<_>>()?;
    let (joint_set, vertices) = model.forward(&params)?;

    // Surface neighbors of every vertex in the rest pose, for in-between samples.
    let rest = model.pose(&vec![crate::rotation::IDENTITY; j], &[0.0; SHAPE_COEFFS], [0.0; 3])?;
    let nv = rest.vertices.len();
    let neighbors: Vec<Vec<usize>> = (0..nv)
        .map(|a| {
            let mut d: Vec<(f64, usize)> = (0..nv)
                .filter(|&b| b != a)
                .map(|b| {
                    let dist: f64 = (0..3).map(|c| (rest.vertices[a][c] - rest.vertices[b][c]).powi(2)).sum();
                    (dist, b)
                })
                .collect();
            d.sort_by(|x, y| x.partial_cmp(y).unwrap());
            d.into_iter().take(3).map(|(_, b)| b).collect()
        })
        .collect();

    let sensor = cfg.synth_sensor_origin;
    let noise = Normal::new(0.0, cfg.synth_noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut radar = Vec::with_capacity(frames);
    for f in 0..frames {
        let cur = &posed[f];
        let (a_idx, b_idx, dt) = if frames == 1 {
            (f, f, 1.0)
        } else if f == 0 {
            (1, 0, 1.0)
        } else {
            (f, f - 1, 1.0)
        };
        let visible: Vec<usize> = (0..nv)
            .filter(|&v| {
                let to_sensor: Vec<f64> = (0..3).map(|c| sensor[c] - cur.vertices[v][c]).collect();
                (0..3).map(|c| cur.normals[v][c] * to_sensor[c]).sum::<f64>() > 0.0
            })
            .collect();
        if visible.is_empty() {
            return Err(Error::DegenerateFrame { frame: f });
        }
        let n = cfg.raw_points;
        let count = rng.random_range((3 * n / 4).max(1)..=(5 * n / 4).max(1));
        let mut pts = Array2::<f32>::zeros((count, 5));
        for i in 0..count {
            let a = visible[rng.random_range(0..visible.len())];
            let b = neighbors[a][rng.random_range(0..neighbors[a].len())];
            let u: f64 = rng.random_range(0.0..0.5);
            let lerp = |verts: &Vec<[f64; 3]>| -> [f64; 3] { std::array::from_fn(|c| verts[a][c] + u * (verts[b][c] - verts[a][c])) };
            let surf = lerp(&cur.vertices);
            let vel: [f64; 3] = {
                let p1 = lerp(&posed[a_idx].vertices);
                let p0 = lerp(&posed[b_idx].vertices);
                std::array::from_fn(|c| (p1[c] - p0[c]) * rate / dt)
            };
            let p: [f64; 3] = std::array::from_fn(|c| surf[c] + noise.sample(&mut rng));
            let los: [f64; 3] = std::array::from_fn(|c| p[c] - sensor[c]);
            let len = (los.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-9);
            let radial: f64 = (0..3).map(|c| vel[c] * los[c] / len).sum();
            let cos: f64 = -(0..3).map(|c| cur.normals[a][c] * los[c] / len).sum::<f64>();
            let intensity = rng.random_range(0.3..1.0) * cos.abs();
            for c in 0..3 {
                pts[[i, c]] = p[c] as f32;
            }
            pts[[i, 3]] = radial as f32;
            pts[[i, 4]] = intensity as f32;
        }
        radar.push(pts);
    }

    let spec = model.spec();
    let mut mask_pixels = Vec::with_capacity(frames);
    for cur in &posed {
        let bones: Vec<(usize, usize, f64)> = (1..j)
            .map(|c| {
                let p = spec.parents[c] as usize;
                let r = match TOY_JOINT_NAMES[c] {
                    n if n.contains("spine") => 0.13,
                    n if n.contains("knee") || n.contains("ankle") => 0.07,
                    n if n.contains("hip") => 0.09,
                    n if n.contains("elbow") || n.contains("wrist") => 0.045,
                    _ => 0.05,
                };
                (p, c, r)
            })
            .collect();
        let weights: Vec<f64> = bones
            .iter()
            .map(|&(p, c, r)| {
                let len = (0..2).map(|d| (cur.joints[p][d] - cur.joints[c][d]).powi(2)).sum::<f64>().sqrt();
                (len + r) * r
            })
            .chain(std::iter::once(0.1 * 0.1 * 3.0))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut px = Array2::<f32>::zeros((cfg.mask_points, 2));
        for i in 0..cfg.mask_points {
            let mut pick = rng.random_range(0.0..total);
            let mut which = weights.len() - 1;
            for (w, &wt) in weights.iter().enumerate() {
                if pick < wt {
                    which = w;
                    break;
                }
                pick -= wt;
            }
            let disk = |rng: &mut ChaCha8Rng, r: f64| {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let rad = r * rng.random::<f64>().sqrt();
                [rad * ang.cos(), rad * ang.sin()]
            };
            let xy: [f64; 2] = if which == bones.len() {
                let h = cur.joints[15];
                let o = disk(&mut rng, 0.1);
                [h[0] + o[0], h[1] + 0.1 + o[1]]
            } else {
                let (p, c, r) = bones[which];
                let (a, b) = (cur.joints[p], cur.joints[c]);
                let s: f64 = rng.random();
                let d = [b[0] - a[0], b[1] - a[1]];
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let center = [a[0] + s * d[0], a[1] + s * d[1]];
                if len < 1e-3 {
                    let o = disk(&mut rng, r);
                    [center[0] + o[0], center[1] + o[1]]
                } else {
                    let off = rng.random_range(-r..r);
                    [center[0] - d[1] / len * off, center[1] + d[0] / len * off]
                }
            };
            px[[i, 0]] = (xy[0] / DEFAULT_ALIGNMENT.scale + DEFAULT_ALIGNMENT.principal_point[0]) as f32;
            px[[i, 1]] = (DEFAULT_ALIGNMENT.principal_point[1] - xy[1] / DEFAULT_ALIGNMENT.scale) as f32;
        }
        mask_pixels.push(px);
    }
    let layout = if cfg.joints_only_mode {
        Layout::JointsOnly
    } else {
        Layout::Parametric
    };
    let joints = (0..frames)
        .map(|f| {
            let all = joint_set.positions().slice(ndarray::s![f, .., ..]);
            match layout {
                Layout::Parametric => all.to_owned(),
                Layout::JointsOnly => all.select(ndarray::Axis(0), &JOINTS17_FROM_TOY),
            }
        })
        .collect();
    Ok(SyntheticScene {
        frame_rate_hz: rate,
        layout,
        alignment: DEFAULT_ALIGNMENT,
        radar,
        mask_pixels,
        joints,
        params,
        vertices,
    })
}

impl SyntheticScene {
    pub fn frame_count(&self) -> usize {
        self.radar.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joints[0].nrows()
    }

    /// Frames resampled exactly as the directory loader would.
    pub fn frames(&self, cfg: &PipelineConfig) -> Result<Vec<FrameData>> {
        (0..self.frame_count())
            .map(|i| {
                let radar = resample_frame(self.radar[i].view(), cfg.raw_points, super::frame_seed(cfg, i, 1))?;
                let (pts, _) = align_mask(&self.mask_pixels[i], &self.alignment)?;
                let mask = resample_frame(pts.view(), cfg.mask_points, super::frame_seed(cfg, i, 2))?;
                Ok(FrameData {
                    radar,
                    mask: Some(mask),
                    joints: self.joints[i].clone(),
                    params: (self.layout == Layout::Parametric).then(|| frame_params(&self.params, i)),
                })
            })
            .collect()
    }

    pub fn windows(&self, cfg: &PipelineConfig) -> Result<Vec<DatasetWindow>> {
        let skeleton = match self.layout {
            Layout::Parametric => toy_skeleton(),
            Layout::JointsOnly => skeleton_17(),
        };
        make_windows(&self.frames(cfg)?, skeleton, self.frame_rate_hz, cfg)
    }

    /// Writes a dataset directory readable by [`super::Dataset::load`].
    pub fn write(&self, root: &Path) -> Result<()> {
        for sub in ["radar", "joints", "params", "mask"] {
            if sub == "params" && self.layout == Layout::JointsOnly {
                continue;
            }
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut entries = Vec::with_capacity(self.frame_count());
        for i in 0..self.frame_count() {
            let name = format!("{i:06}.txt");
            let entry = FrameEntry {
                radar: Path::new("radar").join(&name),
                joints: Path::new("joints").join(&name),
                params: (self.layout == Layout::Parametric).then(|| Path::new("params").join(&name)),
                mask: Some(Path::new("mask").join(&name)),
            };
            text::write_table(&root.join(&entry.radar), self.radar[i].view())?;
            text::write_table(&root.join(&entry.joints), self.joints[i].view())?;
            text::write_table(&root.join(entry.mask.as_ref().unwrap()), self.mask_pixels[i].view())?;
            if let Some(p) = &entry.params {
                text::write_params(&root.join(p), &frame_params(&self.params, i))?;
            }
            entries.push(entry);
        }
        let manifest = Manifest {
            layout: self.layout,
            frame_rate_hz: self.frame_rate_hz,
            joint_count: self.joint_count(),
            units: "meters".into(),
            coordinate_frame: "camera".into(),
            mask_alignment: Some(self.alignment),
            frames: entries,
        };
        manifest.save(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_are_planar_and_deterministic() {
        let cfg = PipelineConfig::tiny();
        let a = generate_synthetic_scene(4, &cfg).unwrap();
        let b = generate_synthetic_scene(4, &cfg).unwrap();
        assert_eq!(a.radar, b.radar);
        assert_eq!(a.mask_pixels, b.mask_pixels);
        let w = a.windows(&cfg).unwrap();
        assert_eq!(w.len(), cfg.synth_frames - cfg.frames_per_window + 1);
        let mask = w[0].mask.as_ref().unwrap();
        assert!(mask.points().slice(ndarray::s![.., .., 2]).iter().all(|&z| z == 0.0));
        assert!(w[0].radar.points().slice(ndarray::s![.., .., 4]).iter().all(|&i| i >= 0.0));
    }
}
