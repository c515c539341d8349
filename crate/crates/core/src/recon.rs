//! Stage two: body reconstruction from raw plus enhanced clouds.
//!
//! A point-convolution backbone over space and time yields representing
//! points P_e with features F_e. The global motion feature is
//! `I = FFN(pool(W·P′_e + F_e))` where P′_e appends the time index to P_e.
//! Linear encoders split I into 2D and 3D local features that regress joints
//! in parallel, a small transformer fuses (I_2d, I_3d, I) into I′, and a
//! decoder maps I′ to pose (6D per joint), shape and translation.

use std::collections::BTreeMap;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use ndarray::{Array2, Array3, Array4};

use crate::body::BodyModel;
use crate::config::{PipelineConfig, Pooling};
use crate::data::{project_joints_2d, BodyParams, EnhancedSequence, JointSet, RadarSequence, Skeleton, SHAPE_COEFFS};
use crate::error::{Error, Result};
use crate::geometry::{farthest_from_centroid, kernels, Exec};
use crate::nn::{AttentionBlock, Init, Linear, Mlp, ParamStore};
use crate::rotation::{self, geodesic_angle, rotation_from_6d, Mat3};

/// Constant backbone input for a batch of windows.
pub struct ReconInput {
    batch: usize,
    frames: usize,
    /// `[B·T, N_e, K·k, 6]`: (Δxyz / r, Δt, velocity, intensity).
    grouped: Tensor,
    /// `[B·T, N_e, 4]`: anchor xyz relative to `origin`, plus time index.
    embedded: Tensor,
    /// `[B·T, 3]`: centroid of the window's raw cloud, repeated per frame.
    origin: Tensor,
}

impl ReconInput {
    /// `enhanced` is `None` for the no-enhancement ablation.
    pub fn new(raw: &[&RadarSequence], enhanced: Option<&[&EnhancedSequence]>, cfg: &PipelineConfig, dtype: DType) -> Result<Self> {
        let first = raw.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let t = first.frames();
        if let Some(enh) = enhanced {
            if enh.len() != raw.len() {
                return Err(Error::Shape("raw and enhanced batches differ in size".into()));
            }
            if let Some(bad) = enh.iter().find(|e| e.frames() != t) {
                return Err(Error::Shape(format!("raw has {t} frames, enhanced has {}", bad.frames())));
            }
        }
        if raw.iter().any(|r| r.frames() != t) {
            return Err(Error::Shape("batch windows differ in frame count".into()));
        }
        let half = (cfg.temporal_kernel / 2) as isize;
        let inv_r = (1.0 / cfg.backbone_radius) as f32;
        let ne = cfg.representing_points;
        let mut grouped_all = Vec::new();
        let mut embedded = Vec::with_capacity(raw.len() * t * ne * 4);
        let mut group_width = 0;
        let mut origins = Vec::with_capacity(raw.len() * t * 3);
        for (w, seq) in raw.iter().enumerate() {
            let pts = seq.points();
            let count = (pts.dim().0 * pts.dim().1) as f64;
            let origin: [f32; 3] =
                std::array::from_fn(|c| (pts.slice(ndarray::s![.., .., c]).iter().map(|&v| v as f64).sum::<f64>() / count) as f32);
            for _ in 0..t {
                origins.extend_from_slice(&origin);
            }
            // Per-frame concatenated cloud, 5 channels, row-major.
            let clouds: Vec<Vec<f32>> = (0..t)
                .map(|f| {
                    let mut c: Vec<f32> = seq.frame(f).iter().copied().collect();
                    if let Some(enh) = enhanced {
                        c.extend(enh[w].points().slice(ndarray::s![f, .., ..]).iter().copied());
                    }
                    c
                })
                .collect();
            let xyz: Vec<Vec<f32>> = clouds
                .iter()
                .map(|c| c.chunks(5).flat_map(|p| [p[0], p[1], p[2]]).collect())
                .collect();
            for f in 0..t {
                let n = xyz[f].len() / 3;
                if ne > n {
                    return Err(Error::SampleCount { requested: ne, available: n });
                }
                let k = cfg.backbone_neighbors.min(n);
                let start = farthest_from_centroid(&xyz[f], 3);
                let idx = kernels::farthest_point_sampling(&xyz[f], 3, ne, start, Exec::default());
                let anchors: Vec<f32> = idx.iter().flat_map(|&i| xyz[f][i * 3..i * 3 + 3].to_vec()).collect();
                let mut per_anchor: Vec<Vec<f32>> = vec![Vec::new(); ne];
                for o in -half..=half {
                    let src = (f as isize + o).clamp(0, t as isize - 1) as usize;
                    let nbrs = kernels::knn(&anchors, &xyz[src], 3, k.min(xyz[src].len() / 3), Exec::default());
                    for (a, row) in nbrs.iter().enumerate() {
                        let c = &anchors[a * 3..a * 3 + 3];
                        for &(j, _) in row {
                            let p = &clouds[src][j * 5..j * 5 + 5];
                            per_anchor[a].extend_from_slice(&[
                                (p[0] - c[0]) * inv_r,
                                (p[1] - c[1]) * inv_r,
                                (p[2] - c[2]) * inv_r,
                                o as f32,
                                p[3],
                                p[4],
                            ]);
                        }
                    }
                }
                let width = per_anchor[0].len() / 6;
                if group_width == 0 {
                    group_width = width;
                } else if group_width != width {
                    return Err(Error::Shape("backbone neighborhoods differ in size".into()));
                }
                for (a, feats) in per_anchor.into_iter().enumerate() {
                    grouped_all.extend(feats);
                    embedded.extend((0..3).map(|c| anchors[a * 3 + c] - origin[c]));
                    embedded.push(f as f32);
                }
            }
        }
        let bt = raw.len() * t;
        let dev = Device::Cpu;
        Ok(Self {
            batch: raw.len(),
            frames: t,
            grouped: Tensor::from_vec(grouped_all, (bt, ne, group_width, 6), &dev)?.to_dtype(dtype)?,
            embedded: Tensor::from_vec(embedded, (bt, ne, 4), &dev)?.to_dtype(dtype)?,
            origin: Tensor::from_vec(origins, (bt, 3), &dev)?.to_dtype(dtype)?,
        })
    }

    /// Joins prepared inputs into one batch.
    pub fn concat(parts: &[&ReconInput]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
        if parts.iter().any(|p| p.frames != first.frames) {
            return Err(Error::Shape("batch inputs differ in frame count".into()));
        }
        let grouped: Vec<&Tensor> = parts.iter().map(|p| &p.grouped).collect();
        let embedded: Vec<&Tensor> = parts.iter().map(|p| &p.embedded).collect();
        let origin: Vec<&Tensor> = parts.iter().map(|p| &p.origin).collect();
        Ok(Self {
            batch: parts.iter().map(|p| p.batch).sum(),
            frames: first.frames,
            grouped: Tensor::cat(&grouped, 0)?,
            embedded: Tensor::cat(&embedded, 0)?,
            origin: Tensor::cat(&origin, 0)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

/// Representing points and their features, batched over `B·T` frames.
pub struct MotionFeatures {
    /// `[B·T, N_e, 3]`.
    pub rep_points: Tensor,
    /// `[B·T, N_e, C_e]`.
    pub rep_features: Tensor,
    /// `[B·T, N_e, 4]`.
    pub embedded_points: Tensor,
}

/// Every intermediate of one stage-two forward pass.
pub struct ReconOutput {
    pub motion: MotionFeatures,
    /// I, `[B·T, C_g]`.
    pub global: Tensor,
    pub f2d: Tensor,
    pub f3d: Tensor,
    /// `[B·T, N_J, 2]` and `[B·T, N_J, 3]`.
    pub joints2d: Tensor,
    pub joints3d: Tensor,
    /// I′, `[B·T, C_g]`.
    pub fused: Tensor,
    /// Per block, `[B·T, heads, 3, 3]`.
    pub attention: Vec<Tensor>,
    /// `[B·T, J, 3, 3]`; absent in joints-only mode.
    pub theta: Option<Tensor>,
    /// `[B·T, 10]`; absent in joints-only mode.
    pub beta: Option<Tensor>,
    /// `[B·T, 3]`.
    pub gamma: Tensor,
}

/// The stage-two network.
pub struct ReconstructionNet {
    cfg: PipelineConfig,
    store: ParamStore,
    body_joints: usize,
    backbone: Mlp,
    embed: Linear,
    aggregate: Mlp,
    enc2d: Linear,
    enc3d: Linear,
    dec2d: Mlp,
    dec3d: Mlp,
    token_type: Tensor,
    blocks: Vec<AttentionBlock>,
    head_hidden: Linear,
    head_pose: Option<Linear>,
    head_shape: Option<Linear>,
    head_trans: Linear,
}

impl ReconstructionNet {
    /// `body_joints` is the body model's joint count (ignored in joints-only mode).
    pub fn new(cfg: &PipelineConfig, body_joints: usize, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(cfg.seed.wrapping_add(1), dtype);
        let root = store.root().pp("reconstructor");
        let (ce, cg, nj) = (cfg.motion_feature_dim, cfg.fused_feature_dim, cfg.joint_count);
        let parametric = !cfg.joints_only_mode;
        let backbone = Mlp::new(&root.pp("backbone"), &[6, ce, ce], true)?;
        let embed = Linear::no_bias(&root.pp("embed"), 4, ce)?;
        let aggregate = Mlp::new(&root.pp("aggregate"), &[ce, cg, cg], false)?;
        let enc2d = Linear::new(&root.pp("enc2d"), cg, cg)?;
        let enc3d = Linear::new(&root.pp("enc3d"), cg, cg)?;
        let dec2d = Mlp::new(&root.pp("dec2d"), &[cg, cg, nj * 2], false)?;
        let dec3d = Mlp::new(&root.pp("dec3d"), &[cg, cg, nj * 3], false)?;
        let token_type = root.get("token_type", &[3, cg], Init::Uniform(0.1))?;
        let blocks = (0..cfg.fusion_blocks)
            .map(|i| AttentionBlock::new(&root.pp(format!("fusion{i}")), cg, cfg.fusion_heads, 2 * cg))
            .collect::<Result<Vec<_>>>()?;
        let head_hidden = Linear::new(&root.pp("head_hidden"), cg, cg)?;
        let head_pose = parametric
            .then(|| Linear::new(&root.pp("head_pose"), cg, body_joints * 6))
            .transpose()?;
        let head_shape = parametric
            .then(|| Linear::new(&root.pp("head_shape"), cg, SHAPE_COEFFS))
            .transpose()?;
        let head_trans = Linear::new(&root.pp("head_trans"), cg, 3)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            body_joints,
            backbone,
            embed,
            aggregate,
            enc2d,
            enc3d,
            dec2d,
            dec3d,
            token_type,
            blocks,
            head_hidden,
            head_pose,
            head_shape,
            head_trans,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn body_joints(&self) -> usize {
        self.body_joints
    }

    /// Backbone plus the `I = FFN(pool(W·P′_e + F_e))` aggregation.
    pub fn extract_motion_features(&self, input: &ReconInput) -> Result<(MotionFeatures, Tensor)> {
        let rep_features = self.backbone.forward(&input.grouped)?.max(2)?; // [BT, N_e, C_e]
        let projected = (self.embed.forward(&input.embedded)? + &rep_features)?;
        let pooled = match self.cfg.backbone_pooling {
            Pooling::Max => projected.max(1)?,
            Pooling::Mean => projected.mean(1)?,
        };
        let global = self.aggregate.forward(&pooled)?;
        let rep_points = input.embedded.narrow(D::Minus1, 0, 3)?.broadcast_add(&input.origin.unsqueeze(1)?)?;
        Ok((
            MotionFeatures {
                rep_points,
                rep_features,
                embedded_points: input.embedded.clone(),
            },
            global,
        ))
    }

    /// Returns `(f2d, f3d, Ĵ_2d, Ĵ_3d)`.
    pub fn regress_joints(&self, global: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let bt = global.dim(0)?;
        let nj = self.cfg.joint_count;
        let f2d = self.enc2d.forward(global)?;
        let f3d = self.enc3d.forward(global)?;
        let j2d = self.dec2d.forward(&f2d)?.reshape((bt, nj, 2))?;
        let j3d = self.dec3d.forward(&f3d)?.reshape((bt, nj, 3))?;
        Ok((f2d, f3d, j2d, j3d))
    }

    /// Self-attention over the token triple (f2d, f3d, I); returns I′ and the
    /// attention weights of every block.
    pub fn fuse_features(&self, f2d: &Tensor, f3d: &Tensor, global: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut x = Tensor::stack(&[f2d, f3d, global], 1)?.broadcast_add(&self.token_type.unsqueeze(0)?)?;
        let mut weights = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, w) = block.forward(&x)?;
            x = y;
            weights.push(w);
        }
        Ok((x.narrow(1, 2, 1)?.squeeze(1)?, weights))
    }

    /// Decodes I′ into `(θ, β, γ)`; θ and β are `None` in joints-only mode.
    pub fn regress_body_params(&self, fused: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
        let bt = fused.dim(0)?;
        let h = self.head_hidden.forward(fused)?.relu()?;
        let theta = match &self.head_pose {
            Some(head) => {
                let identity = Tensor::new(&rotation::IDENTITY_6D, fused.device())?.to_dtype(fused.dtype())?;
                let six = head
                    .forward(&h)?
                    .reshape((bt, self.body_joints, 6))?
                    .broadcast_add(&identity)?;
                Some(rotation_from_6d(&six)?)
            }
            None => None,
        };
        let beta = self.head_shape.as_ref().map(|l| l.forward(&h)).transpose()?;
        let gamma = self.head_trans.forward(&h)?;
        Ok((theta, beta, gamma))
    }

    /// Positions (Ĵ_2d, Ĵ_3d, γ̂) are regressed relative to the window's raw
    /// centroid and shifted back here.
    pub fn forward(&self, input: &ReconInput) -> Result<ReconOutput> {
        let (motion, global) = self.extract_motion_features(input)?;
        let (f2d, f3d, joints2d, joints3d) = self.regress_joints(&global)?;
        let (fused, attention) = self.fuse_features(&f2d, &f3d, &global)?;
        let (theta, beta, gamma) = self.regress_body_params(&fused)?;
        let origin = input.origin.to_dtype(gamma.dtype())?;
        let joints3d = joints3d.broadcast_add(&origin.unsqueeze(1)?)?;
        let joints2d = joints2d.broadcast_add(&origin.narrow(1, 0, 2)?.unsqueeze(1)?)?;
        let gamma = (gamma + origin)?;
        Ok(ReconOutput {
            motion,
            global,
            f2d,
            f3d,
            joints2d,
            joints3d,
            fused,
            attention,
            theta,
            beta,
            gamma,
        })
    }
}

/// Host-side prediction for one window.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Body parameters; `None` in joints-only mode.
    pub params: Option<BodyParams>,
    /// The reported joints: body-model joints in parametric mode, Ĵ_3d otherwise.
    pub joints: JointSet,
    /// Ĵ_3d straight from the joint decoder.
    pub regressed_joints: JointSet,
    /// `[T × V × 3]`, parametric mode only.
    pub vertices: Option<Array3<f32>>,
    /// `[T × 3]`.
    pub gamma: Array2<f32>,
}

fn host_array(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
}

impl ReconOutput {
    /// Converts a single-window output to host arrays.
    pub fn to_prediction(&self, skeleton: Arc<Skeleton>, body: Option<&dyn BodyModel>) -> Result<Prediction> {
        let (t, nj, _) = self.joints3d.dims3()?;
        let j3d = Array3::from_shape_vec((t, nj, 3), host_array(&self.joints3d)?).expect("sizes match");
        let regressed = JointSet::new(j3d, skeleton.clone())?;
        let gamma = Array2::from_shape_vec((t, 3), host_array(&self.gamma)?).expect("sizes match");
        match (&self.theta, &self.beta, body) {
            (Some(theta), Some(beta), Some(body)) => {
                let jb = theta.dim(1)?;
                let theta = Array4::from_shape_vec((t, jb, 3, 3), host_array(theta)?).expect("sizes match");
                let beta = Array2::from_shape_vec((t, SHAPE_COEFFS), host_array(beta)?).expect("sizes match");
                let params = BodyParams::new(theta, beta, gamma.clone())?;
                let (joints, vertices) = body.forward(&params)?;
                Ok(Prediction {
                    params: Some(params),
                    joints,
                    regressed_joints: regressed,
                    vertices: Some(vertices),
                    gamma,
                })
            }
            _ => Ok(Prediction {
                params: None,
                joints: regressed.clone(),
                regressed_joints: regressed,
                vertices: None,
                gamma,
            }),
        }
    }
}

/// Names of the stage-two loss terms, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossTerm {
    J3d,
    J2d,
    Theta,
    Beta,
    Gamma,
    Joints,
    Vertices,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::J3d,
        LossTerm::J2d,
        LossTerm::Theta,
        LossTerm::Beta,
        LossTerm::Gamma,
        LossTerm::Joints,
        LossTerm::Vertices,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossTerm::J3d => "j3d",
            LossTerm::J2d => "j2d",
            LossTerm::Theta => "theta",
            LossTerm::Beta => "beta",
            LossTerm::Gamma => "gamma",
            LossTerm::Joints => "joints",
            LossTerm::Vertices => "vertices",
        }
    }

    pub fn weight(self, cfg: &PipelineConfig) -> f64 {
        match self {
            LossTerm::J3d => cfg.weight_j3d,
            LossTerm::J2d => cfg.weight_j2d,
            LossTerm::Theta => cfg.weight_theta,
            LossTerm::Beta => cfg.weight_beta,
            LossTerm::Gamma => cfg.weight_gamma,
            LossTerm::Joints => cfg.weight_joints,
            LossTerm::Vertices => cfg.weight_vertices,
        }
    }

    /// Whether the term belongs to the body-parameter objective.
    pub fn is_smpl(self) -> bool {
        !matches!(self, LossTerm::J3d | LossTerm::J2d)
    }

    /// Terms active under the given modes.
    pub fn active(cfg: &PipelineConfig) -> Vec<LossTerm> {
        Self::ALL
            .into_iter()
            .filter(|t| match t {
                LossTerm::J2d => cfg.supervise_2d,
                LossTerm::Theta | LossTerm::Beta | LossTerm::Joints | LossTerm::Vertices => !cfg.joints_only_mode,
                _ => true,
            })
            .collect()
    }
}

/// Summed absolute difference.
fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("L1 operands {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.sum_all()?)
}

/// Constant supervision tensors for a batch, each with leading `B·T`.
pub struct ReconTargets {
    pub batch: usize,
    pub joints: Tensor,
    pub joints2d: Tensor,
    pub theta: Option<Tensor>,
    pub beta: Option<Tensor>,
    pub gamma: Tensor,
    pub vertices: Option<Tensor>,
}

impl ReconTargets {
    /// `params` must be given for every window or for none. Without params the
    /// translation target is the root joint.
    pub fn new(
        joints: &[&JointSet],
        params: Option<&[&BodyParams]>,
        body: Option<&dyn BodyModel>,
        dtype: DType,
    ) -> Result<Self> {
        let dev = Device::Cpu;
        let cat = |parts: Vec<&[f32]>, shape: Vec<usize>| -> Result<Tensor> {
            let data: Vec<f32> = parts.into_iter().flatten().copied().collect();
            Ok(Tensor::from_vec(data, shape, &dev)?.to_dtype(dtype)?)
        };
        let (t, nj, _) = joints[0].positions().dim();
        let bt = joints.len() * t;
        let std_joints: Vec<Array3<f32>> = joints.iter().map(|j| j.positions().as_standard_layout().into_owned()).collect();
        let joints_t = cat(std_joints.iter().map(|a| a.as_slice().unwrap()).collect(), vec![bt, nj, 3])?;
        let joints2d = joints_t.narrow(D::Minus1, 0, 2)?.contiguous()?;
        let root: Vec<f32> = std_joints
            .iter()
            .flat_map(|a| (0..t).flat_map(move |f| [a[[f, 0, 0]], a[[f, 0, 1]], a[[f, 0, 2]]]))
            .collect();
        let (theta, beta, gamma, vertices) = match params {
            Some(ps) => {
                let jb = ps[0].joint_count();
                let th: Vec<Array4<f32>> = ps.iter().map(|p| p.theta.as_standard_layout().into_owned()).collect();
                let be: Vec<Array2<f32>> = ps.iter().map(|p| p.beta.as_standard_layout().into_owned()).collect();
                let ga: Vec<Array2<f32>> = ps.iter().map(|p| p.gamma.as_standard_layout().into_owned()).collect();
                let vertices = match body {
                    Some(model) => {
                        let vs = ps.iter().map(|p| model.forward(p).map(|(_, v)| v)).collect::<Result<Vec<_>>>()?;
                        let v = model.vertex_count();
                        Some(cat(vs.iter().map(|a| a.as_slice().unwrap()).collect(), vec![bt, v, 3])?)
                    }
                    None => None,
                };
                (
                    Some(cat(th.iter().map(|a| a.as_slice().unwrap()).collect(), vec![bt, jb, 3, 3])?),
                    Some(cat(be.iter().map(|a| a.as_slice().unwrap()).collect(), vec![bt, SHAPE_COEFFS])?),
                    cat(ga.iter().map(|a| a.as_slice().unwrap()).collect(), vec![bt, 3])?,
                    vertices,
                )
            }
            None => (None, None, Tensor::from_vec(root, (bt, 3), &dev)?.to_dtype(dtype)?, None),
        };
        Ok(Self {
            batch: joints.len(),
            joints: joints_t,
            joints2d,
            theta,
            beta,
            gamma,
            vertices,
        })
    }
}

impl ReconTargets {
    /// Joins per-window targets into one batch.
    pub fn concat(parts: &[&ReconTargets]) -> Result<Self> {
        let cat = |ts: Vec<&Tensor>| -> Result<Tensor> { Ok(Tensor::cat(&ts, 0)?) };
        let opt = |f: &dyn Fn(&ReconTargets) -> Option<&Tensor>| -> Result<Option<Tensor>> {
            let present: Vec<&Tensor> = parts.iter().filter_map(|p| f(p)).collect();
            match present.len() {
                0 => Ok(None),
                n if n == parts.len() => Ok(Some(Tensor::cat(&present, 0)?)),
                _ => Err(Error::Invalid("batch mixes windows with and without body parameters".into())),
            }
        };
        Ok(Self {
            batch: parts.iter().map(|p| p.batch).sum(),
            joints: cat(parts.iter().map(|p| &p.joints).collect())?,
            joints2d: cat(parts.iter().map(|p| &p.joints2d).collect())?,
            theta: opt(&|p| p.theta.as_ref())?,
            beta: opt(&|p| p.beta.as_ref())?,
            gamma: cat(parts.iter().map(|p| &p.gamma).collect())?,
            vertices: opt(&|p| p.vertices.as_ref())?,
        })
    }
}

/// Raw (unnormalized, unweighted) stage-two terms, each averaged over windows.
pub fn loss_terms(
    out: &ReconOutput,
    targets: &ReconTargets,
    body: Option<&dyn BodyModel>,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<LossTerm, Tensor>> {
    let per_window = 1.0 / targets.batch as f64;
    let mut terms = BTreeMap::new();
    let active = LossTerm::active(cfg);
    terms.insert(LossTerm::J3d, (l1(&out.joints3d, &targets.joints)? * per_window)?);
    if active.contains(&LossTerm::J2d) {
        terms.insert(LossTerm::J2d, (l1(&out.joints2d, &targets.joints2d)? * per_window)?);
    }
    terms.insert(LossTerm::Gamma, (l1(&out.gamma, &targets.gamma)? * per_window)?);
    if !cfg.joints_only_mode {
        let missing = || Error::Invalid("parametric mode needs body-parameter targets and a body model".into());
        let (theta, beta) = (out.theta.as_ref().ok_or_else(missing)?, out.beta.as_ref().ok_or_else(missing)?);
        let (gt_theta, gt_beta) = (targets.theta.as_ref().ok_or_else(missing)?, targets.beta.as_ref().ok_or_else(missing)?);
        let body = body.ok_or_else(missing)?;
        let gt_vertices = targets.vertices.as_ref().ok_or_else(missing)?;
        terms.insert(LossTerm::Theta, rotation::geodesic_angles(theta, gt_theta)?.mean_all()?);
        terms.insert(LossTerm::Beta, (l1(beta, gt_beta)? * per_window)?);
        let (joints, vertices) = body.forward_tensors(theta, beta, &out.gamma)?;
        if joints.dims() == targets.joints.dims() {
            terms.insert(LossTerm::Joints, (l1(&joints, &targets.joints)? * per_window)?);
        } else {
            return Err(Error::Shape("body-model joints do not match the supervised joint set".into()));
        }
        terms.insert(LossTerm::Vertices, (l1(&vertices, gt_vertices)? * per_window)?);
    }
    Ok(terms)
}

/// Per-term normalization constants; a term is divided by its constant.
pub type Normalizers = BTreeMap<LossTerm, f64>;

/// `Σ weight · term / norm` over the given terms. Missing constants count as 1.
pub fn total_loss(terms: &BTreeMap<LossTerm, Tensor>, cfg: &PipelineConfig, norms: &Normalizers) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (term, value) in terms {
        let scale = term.weight(cfg) / norms.get(term).copied().unwrap_or(1.0);
        let v = (value * scale)?;
        total = Some(match total {
            None => v,
            Some(acc) => (acc + v)?,
        });
    }
    total.ok_or_else(|| Error::Invalid("no loss terms".into()))
}

/// Scalar version of [`total_loss`].
pub fn total_loss_value(terms: &BTreeMap<LossTerm, f64>, cfg: &PipelineConfig, norms: &Normalizers) -> f64 {
    terms
        .iter()
        .map(|(t, v)| t.weight(cfg) * v / norms.get(t).copied().unwrap_or(1.0))
        .sum()
}

pub fn terms_to_f64(terms: &BTreeMap<LossTerm, Tensor>) -> Result<BTreeMap<LossTerm, f64>> {
    terms
        .iter()
        .map(|(k, v)| Ok((*k, v.to_dtype(DType::F64)?.to_scalar::<f64>()?)))
        .collect()
}

fn l1_host(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum()
}

/// Host-side joint losses `(L_J3d, L_J2d)`: summed absolute errors against
/// `gt` and its orthographic projection.
pub fn joint_losses(pred2d: &JointSet, pred3d: &JointSet, gt: &JointSet) -> Result<(f64, f64)> {
    if gt.dims() != 3 || pred3d.positions().dim() != gt.positions().dim() {
        return Err(Error::Shape("3D prediction and ground truth differ in shape".into()));
    }
    let gt2d = project_joints_2d(gt)?;
    if pred2d.positions().dim() != gt2d.positions().dim() {
        return Err(Error::Shape("2D prediction does not match projected ground truth".into()));
    }
    let flat = |a: &Array3<f32>| a.iter().copied().collect::<Vec<_>>();
    Ok((
        l1_host(&flat(pred3d.positions()), &flat(gt.positions())),
        l1_host(&flat(pred2d.positions()), &flat(gt2d.positions())),
    ))
}

/// Host-side body-parameter objective: `Σ weight · term` over θ (mean
/// geodesic), β, γ, model joints and vertices (summed L1).
pub fn smpl_stage_loss(
    pred: &BodyParams,
    gt: &BodyParams,
    pred_joints: &JointSet,
    gt_joints: &JointSet,
    pred_vertices: &Array3<f32>,
    gt_vertices: &Array3<f32>,
    cfg: &PipelineConfig,
) -> Result<(f64, BTreeMap<LossTerm, f64>)> {
    if pred.theta.dim() != gt.theta.dim() || pred_vertices.dim() != gt_vertices.dim() {
        return Err(Error::Shape("body-parameter prediction and target differ in shape".into()));
    }
    if pred_joints.positions().dim() != gt_joints.positions().dim() {
        return Err(Error::Shape("joint sets differ in shape".into()));
    }
    pred.check_rotations(crate::data::ROTATION_TOLERANCE)?;
    gt.check_rotations(crate::data::ROTATION_TOLERANCE)?;
    let (t, j) = (pred.frames(), pred.joint_count());
    let mat = |p: &BodyParams, f: usize, k: usize| -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = p.theta[[f, k, r, c]] as f64;
            }
        }
        m
    };
    let mut angle = 0.0;
    for f in 0..t {
        for k in 0..j {
            angle += geodesic_angle(&mat(pred, f, k), &mat(gt, f, k));
        }
    }
    let flat = |a: ndarray::ArrayViewD<'_, f32>| a.iter().copied().collect::<Vec<_>>();
    let mut terms = BTreeMap::new();
    terms.insert(LossTerm::Theta, angle / (t * j) as f64);
    terms.insert(LossTerm::Beta, l1_host(&flat(pred.beta.view().into_dyn()), &flat(gt.beta.view().into_dyn())));
    terms.insert(LossTerm::Gamma, l1_host(&flat(pred.gamma.view().into_dyn()), &flat(gt.gamma.view().into_dyn())));
    terms.insert(
        LossTerm::Joints,
        l1_host(&flat(pred_joints.positions().view().into_dyn()), &flat(gt_joints.positions().view().into_dyn())),
    );
    terms.insert(
        LossTerm::Vertices,
        l1_host(&flat(pred_vertices.view().into_dyn()), &flat(gt_vertices.view().into_dyn())),
    );
    let total = terms.iter().map(|(k, v)| k.weight(cfg) * v).sum();
    Ok((total, terms))
}
