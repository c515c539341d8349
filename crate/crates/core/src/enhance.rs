//! Stage one: densifies normalized radar frames into an enhanced cloud.
//!
//! Per-frame set abstraction feeds a bidirectional GRU (F), a refined global
//! code F′ joins F to form G, point-wise splitting of G regresses candidate
//! points, farthest point sampling over candidates and raw points gives the
//! seed P_0, and two factor-2 deconvolution stages produce P_1 and P_2.

use candle_core::{DType, Device, IndexOp, Tensor, D};
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::data::{denormalize_points, normalize_sequence, EnhancedSequence, MaskPointSet, RadarSequence};
use crate::error::{Error, Result};
use crate::geometry::{self, diff, farthest_from_centroid, kernels, Exec, PointSet};
use crate::nn::{ForwardCtx, Init, Linear, Mlp, ParamStore, Scope, BiGru};

/// Intermediate clouds of one sequence, all in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedStages {
    pub candidates: Array3<f32>,
    pub p0: Array3<f32>,
    pub p1: Array3<f32>,
    pub p2: Array3<f32>,
}

/// Batched stage tensors; every cloud is `[B·T, n, 3]`.
pub struct StageTensors {
    /// `[B, T, C]`.
    pub feature: Tensor,
    /// `[B, T, C + C′]`.
    pub integrated: Tensor,
    pub candidates: Tensor,
    pub p0: Tensor,
    pub p1: Tensor,
    pub p2: Tensor,
}

impl StageTensors {
    pub fn stages(&self) -> [&Tensor; 3] {
        [&self.p0, &self.p1, &self.p2]
    }

    /// Splits the batched tensors back into per-sequence arrays.
    pub fn to_seed_stages(&self, batch: usize) -> Result<Vec<SeedStages>> {
        let conv = |t: &Tensor| -> Result<Vec<Array3<f32>>> {
            let (bt, n, _) = t.dims3()?;
            let frames = bt / batch;
            let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            Ok((0..batch)
                .map(|b| {
                    let chunk = v[b * frames * n * 3..(b + 1) * frames * n * 3].to_vec();
                    Array3::from_shape_vec((frames, n, 3), chunk).expect("sizes match")
                })
                .collect())
        };
        let (c, p0, p1, p2) = (conv(&self.candidates)?, conv(&self.p0)?, conv(&self.p1)?, conv(&self.p2)?);
        Ok(c.into_iter()
            .zip(p0)
            .zip(p1)
            .zip(p2)
            .map(|(((candidates, p0), p1), p2)| SeedStages { candidates, p0, p1, p2 })
            .collect())
    }
}

/// Precomputed, constant network input for a batch of normalized sequences.
pub struct EnhancerInput {
    batch: usize,
    frames: usize,
    points: usize,
    /// `[B·T, S, K, 5]` neighbor features relative to each center.
    grouped: Tensor,
    /// `[B·T, S, 3]`.
    centers: Tensor,
    /// `[B·T·N, 3]` raw coordinates, plus the same values on the host.
    raw: Tensor,
    raw_host: Vec<f32>,
}

impl EnhancerInput {
    /// Groups every frame. Sequences must already be normalized and share T and N.
    pub fn new(seqs: &[&RadarSequence], cfg: &PipelineConfig, dtype: DType) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let (t, n) = (first.frames(), first.points_per_frame());
        if t < 1 {
            return Err(Error::Shape("sequence has no frames".into()));
        }
        if seqs.iter().any(|s| s.frames() != t || s.points_per_frame() != n) {
            return Err(Error::Shape("batch sequences differ in shape".into()));
        }
        let (centers_n, k) = (cfg.sa_centers.min(n), cfg.sa_neighbors.min(n));
        let inv_r = (1.0 / cfg.sa_radius) as f32;
        let frames = seqs.len() * t;
        let mut grouped = Vec::with_capacity(frames * centers_n * k * 5);
        let mut centers = Vec::with_capacity(frames * centers_n * 3);
        let mut raw_host = Vec::with_capacity(frames * n * 3);
        for seq in seqs {
            for f in 0..t {
                let frame = seq.frame(f);
                let xyz: Vec<f32> = frame.rows().into_iter().flat_map(|r| [r[0], r[1], r[2]]).collect();
                let start = farthest_from_centroid(&xyz, 3);
                let idx = kernels::farthest_point_sampling(&xyz, 3, centers_n, start, Exec::default());
                let queries: Vec<f32> = idx.iter().flat_map(|&i| xyz[i * 3..i * 3 + 3].to_vec()).collect();
                let nbrs = kernels::knn(&queries, &xyz, 3, k, Exec::default());
                for (ci, row) in nbrs.iter().enumerate() {
                    let c = &queries[ci * 3..ci * 3 + 3];
                    for &(j, _) in row {
                        for d in 0..3 {
                            grouped.push((frame[[j, d]] - c[d]) * inv_r);
                        }
                        grouped.push(frame[[j, 3]]);
                        grouped.push(frame[[j, 4]]);
                    }
                }
                centers.extend_from_slice(&queries);
                raw_host.extend_from_slice(&xyz);
            }
        }
        let dev = Device::Cpu;
        Ok(Self {
            batch: seqs.len(),
            frames: t,
            points: n,
            grouped: Tensor::from_vec(grouped, (frames, centers_n, k, 5), &dev)?.to_dtype(dtype)?,
            centers: Tensor::from_vec(centers, (frames, centers_n, 3), &dev)?.to_dtype(dtype)?,
            raw: Tensor::from_vec(raw_host.clone(), (frames * n, 3), &dev)?.to_dtype(dtype)?,
            raw_host,
        })
    }

    /// Joins prepared inputs into one batch.
    pub fn concat(parts: &[&EnhancerInput]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
        if parts.iter().any(|p| p.frames != first.frames || p.points != first.points) {
            return Err(Error::Shape("batch inputs differ in shape".into()));
        }
        let cat = |f: &dyn Fn(&EnhancerInput) -> &Tensor| -> Result<Tensor> {
            Ok(Tensor::cat(&parts.iter().map(|p| f(p)).collect::<Vec<_>>(), 0)?)
        };
        Ok(Self {
            batch: parts.iter().map(|p| p.batch).sum(),
            frames: first.frames,
            points: first.points,
            grouped: cat(&|p| &p.grouped)?,
            centers: cat(&|p| &p.centers)?,
            raw: cat(&|p| &p.raw)?,
            raw_host: parts.iter().flat_map(|p| p.raw_host.iter().copied()).collect(),
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

/// FPS-downsampled mask targets for the three stages, `[T, N_i, 3]` each.
pub fn mask_targets(mask: &MaskPointSet, counts: [usize; 3], seed: u64) -> Result<[Array3<f32>; 3]> {
    let (t, m) = (mask.frames(), mask.points_per_frame());
    let mut out: Vec<Array3<f32>> = counts.iter().map(|&c| Array3::zeros((t, c, 3))).collect();
    for f in 0..t {
        let frame = mask.points().slice(s![f, .., ..]);
        let set = PointSet::from_frame(frame, 3)?;
        for (stage, &c) in counts.iter().enumerate() {
            if c > m {
                return Err(Error::SampleCount { requested: c, available: m });
            }
            let idx = geometry::farthest_point_sampling(&set, c, seed.wrapping_add(f as u64))?;
            for (row, &i) in idx.iter().enumerate() {
                for d in 0..3 {
                    out[stage][[f, row, d]] = frame[[i, d]];
                }
            }
        }
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Per-term sums of the enhancement objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnhanceTerms {
    pub chamfer: [f64; 3],
    pub partial: [f64; 3],
}

impl EnhanceTerms {
    pub fn chamfer_total(&self) -> f64 {
        self.chamfer.iter().sum()
    }

    pub fn partial_total(&self) -> f64 {
        self.partial.iter().sum()
    }

    pub fn total(&self, lambda_par: f64) -> f64 {
        self.chamfer_total() + lambda_par * self.partial_total()
    }
}

/// Stage/target loss on host arrays: Σ stages Σ frames (chamfer + λ·partial).
pub fn enhancement_loss(
    stages: &SeedStages,
    mask: &MaskPointSet,
    lambda_par: f64,
    seed: u64,
) -> Result<(f64, EnhanceTerms)> {
    let counts = [stages.p0.dim().1, stages.p1.dim().1, stages.p2.dim().1];
    let targets = mask_targets(mask, counts, seed)?;
    let mut terms = EnhanceTerms::default();
    for (i, (pred, target)) in [&stages.p0, &stages.p1, &stages.p2].iter().zip(&targets).enumerate() {
        if pred.dim().0 != target.dim().0 {
            return Err(Error::Shape("stage and mask frame counts differ".into()));
        }
        for f in 0..pred.dim().0 {
            let p = PointSet::from_frame(pred.slice(s![f, .., ..]), 3)?;
            let g = PointSet::from_frame(target.slice(s![f, .., ..]), 3)?;
            terms.chamfer[i] += geometry::chamfer_l2(&p, &g)?;
            terms.partial[i] += geometry::partial_matching(&p, &g)?;
        }
    }
    Ok((terms.total(lambda_par), terms))
}

/// Batched differentiable objective. `targets[i]` is `[B·T, N_i, 3]`; the
/// result is averaged over the B windows.
pub fn enhancement_loss_tensor(
    stages: &StageTensors,
    targets: &[Tensor; 3],
    lambda_par: f64,
    batch: usize,
) -> Result<(Tensor, EnhanceTerms)> {
    let mut total: Option<Tensor> = None;
    let mut terms = EnhanceTerms::default();
    for (i, (pred, target)) in stages.stages().into_iter().zip(targets).enumerate() {
        let cd = diff::chamfer_l2(pred, target)?.sum_all()?;
        let par = diff::partial_matching(pred, target)?.sum_all()?;
        terms.chamfer[i] = cd.to_dtype(DType::F64)?.to_scalar::<f64>()? / batch as f64;
        terms.partial[i] = par.to_dtype(DType::F64)?.to_scalar::<f64>()? / batch as f64;
        let term = if lambda_par == 0.0 { cd } else { (cd + (par * lambda_par)?)? };
        total = Some(match total {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok(((total.expect("three stages") / batch as f64)?, terms))
}

/// Stacks per-window targets into batched tensors.
pub fn batch_targets(per_window: &[&[Array3<f32>; 3]], dtype: DType) -> Result<[Tensor; 3]> {
    let build = |stage: usize| -> Result<Tensor> {
        let mut data = Vec::new();
        let mut rows = 0;
        let mut n = 0;
        for w in per_window {
            let a = &w[stage];
            rows += a.dim().0;
            n = a.dim().1;
            data.extend(a.iter().copied());
        }
        Ok(Tensor::from_vec(data, (rows, n, 3), &Device::Cpu)?.to_dtype(dtype)?)
    };
    Ok([build(0)?, build(1)?, build(2)?])
}

struct SpdStage {
    point_mlp: Mlp,
    global_proj: Linear,
    fuse: Mlp,
    split: Linear,
    disp: Linear,
}

impl SpdStage {
    fn new(scope: &Scope<'_>, c: usize, d: usize, zero_disp: bool) -> Result<Self> {
        Ok(Self {
            point_mlp: Mlp::new(&scope.pp("point"), &[3, d, d], true)?,
            global_proj: Linear::new(&scope.pp("global"), c, d)?,
            fuse: Mlp::new(&scope.pp("fuse"), &[3 * d, d, d], true)?,
            split: Linear::new(&scope.pp("split"), d, 2 * d)?,
            disp: if zero_disp {
                Linear::zeros(&scope.pp("disp"), d, 3)?
            } else {
                Linear::new(&scope.pp("disp"), d, 3)?
            },
        })
    }
}

/// The stage-one network.
pub struct EnhancementNet {
    cfg: PipelineConfig,
    store: ParamStore,
    sa_local: Mlp,
    sa_global: Mlp,
    gru: BiGru,
    refine: Mlp,
    split_proj: Linear,
    split_codes: Tensor,
    decoder: Mlp,
    spd: [SpdStage; 2],
}

impl EnhancementNet {
    pub fn new(cfg: &PipelineConfig, dtype: DType) -> Result<Self> {
        Self::build(cfg, dtype, false)
    }

    /// Variant whose displacement heads start at zero, so children coincide with parents.
    pub fn with_zero_displacement(cfg: &PipelineConfig, dtype: DType) -> Result<Self> {
        Self::build(cfg, dtype, true)
    }

    fn build(cfg: &PipelineConfig, dtype: DType, zero_disp: bool) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(cfg.seed, dtype);
        let root = store.root().pp("enhancer");
        let (c, c2, h) = (cfg.global_feature_dim, cfg.refined_feature_dim, cfg.sa_hidden_dim);
        let (ds, d) = (cfg.split_code_dim, cfg.spd_feature_dim);
        let sa_local = Mlp::new(&root.pp("sa_local"), &[5, h, h], true)?;
        let sa_global = Mlp::new(&root.pp("sa_global"), &[h + 3, h, c], true)?;
        let gru = BiGru::new(&root.pp("gru"), c, c / 2)?;
        let refine = Mlp::new(&root.pp("refine"), &[c, c2, c2], true)?;
        let split_proj = Linear::new(&root.pp("split_proj"), c + c2, ds)?;
        let split_codes = root.get("split_codes", &[cfg.candidate_points, ds], Init::Uniform(1.0))?;
        let decoder = Mlp::new(&root.pp("decoder"), &[ds, ds, 3], false)?;
        let spd = [
            SpdStage::new(&root.pp("spd1"), c, d, zero_disp)?,
            SpdStage::new(&root.pp("spd2"), c, d, zero_disp)?,
        ];
        Ok(Self {
            cfg: cfg.clone(),
            store,
            sa_local,
            sa_global,
            gru,
            refine,
            split_proj,
            split_codes,
            decoder,
            spd,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// F = GRU(SetAbstraction(P)): `[B, T, C]`.
    pub fn encode(&self, input: &EnhancerInput, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let local = self.sa_local.forward(&input.grouped)?.max(2)?; // [BT, S, H]
        let with_pos = Tensor::cat(&[&local, &input.centers], D::Minus1)?;
        let frame_feat = self.sa_global.forward(&with_pos)?.max(1)?; // [BT, C]
        let seq = frame_feat.reshape((input.batch, input.frames, self.cfg.global_feature_dim))?;
        let f = self.gru.forward(&seq)?;
        ctx.dropout(&f)
    }

    /// Builds G, regresses candidates and samples the seed cloud P_0.
    /// Returns `(G [B,T,C+C′], candidates [B·T, N_c, 3], p0 [B·T, N_0, 3])`.
    pub fn generate_seed(&self, feat: &Tensor, input: &EnhancerInput, seed: u64) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, t, c) = feat.dims3()?;
        let refined = self.refine.forward(&feat.mean(1)?)?; // [B, C′]
        let broadcast = refined
            .unsqueeze(1)?
            .broadcast_as((b, t, self.cfg.refined_feature_dim))?
            .contiguous()?;
        let g = Tensor::cat(&[feat, &broadcast], D::Minus1)?;
        debug_assert_eq!(g.dim(2)?, c + self.cfg.refined_feature_dim);

        let nc = self.cfg.candidate_points;
        let ds = self.cfg.split_code_dim;
        let proj = self.split_proj.forward(&g)?.reshape((b * t, 1, ds))?;
        let split = proj.broadcast_add(&self.split_codes.unsqueeze(0)?)?.relu()?; // [BT, N_c, D_s]
        let candidates = self.decoder.forward(&split)?; // [BT, N_c, 3]

        let cand_host: Vec<f32> = candidates.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let n = input.points;
        let n0 = self.cfg.seed_points;
        let pool_n = nc + n;
        let mut picks: Vec<u32> = Vec::with_capacity(b * t * n0);
        for f in 0..b * t {
            let mut pool = cand_host[f * nc * 3..(f + 1) * nc * 3].to_vec();
            pool.extend_from_slice(&input.raw_host[f * n * 3..(f + 1) * n * 3]);
            // Seeded per frame position so a window's result does not depend on its batch.
            let start = ChaCha8Rng::seed_from_u64(seed.wrapping_add((f % t) as u64)).random_range(0..pool_n);
            let idx = geometry::fps_from(&pool, 3, n0, start, Exec::default())?;
            // Row index into cat(candidates_flat, raw_flat).
            picks.extend(idx.into_iter().map(|i| {
                if i < nc {
                    (f * nc + i) as u32
                } else {
                    (b * t * nc + f * n + (i - nc)) as u32
                }
            }));
        }
        let flat = Tensor::cat(&[&candidates.reshape((b * t * nc, 3))?, &input.raw], 0)?;
        let idx = Tensor::from_vec(picks, b * t * n0, &Device::Cpu)?;
        let p0 = flat.index_select(&idx, 0)?.reshape((b * t, n0, 3))?;
        Ok((g, candidates, p0))
    }

    /// One factor-2 deconvolution stage. `prev: [B·T, n, 3]`, `skip` holds the
    /// previous stage's child features `[B·T, n, D]`; returns the children
    /// `[B·T, 2n, 3]` and their features `[B·T, 2n, D]`.
    pub fn spd_refine(&self, prev: &Tensor, skip: Option<&Tensor>, feat: &Tensor, stage: usize) -> Result<(Tensor, Tensor)> {
        if !(1..=2).contains(&stage) {
            return Err(Error::Invalid(format!("deconvolution stage must be 1 or 2, got {stage}")));
        }
        let m = &self.spd[stage - 1];
        let (bt, n, _) = prev.dims3()?;
        let d = self.cfg.spd_feature_dim;
        let h = m.point_mlp.forward(prev)?; // [BT, n, D]
        let pooled = h.max_keepdim(1)?.broadcast_as((bt, n, d))?;
        let global = m
            .global_proj
            .forward(&feat.reshape((bt, self.cfg.global_feature_dim))?)?
            .unsqueeze(1)?
            .broadcast_as((bt, n, d))?;
        let mut q = m.fuse.forward(&Tensor::cat(&[&h, &pooled.contiguous()?, &global.contiguous()?], D::Minus1)?)?;
        if let Some(skip) = skip {
            q = (q + skip)?;
        }
        let children = m.split.forward(&q)?.relu()?.reshape((bt, 2 * n, d))?;
        let bound = self.cfg.displacement_clamp / 3f64.sqrt();
        let disp = (m.disp.forward(&children)?.tanh()? * bound)?;
        let parents = prev.unsqueeze(2)?.broadcast_as((bt, n, 2, 3))?.reshape((bt, 2 * n, 3))?;
        Ok(((parents + disp)?, children))
    }

    /// Full batched forward pass in normalized space.
    pub fn forward(&self, input: &EnhancerInput, ctx: &mut ForwardCtx, seed: u64) -> Result<StageTensors> {
        let feature = self.encode(input, ctx)?;
        let (integrated, candidates, p0) = self.generate_seed(&feature, input, seed)?;
        let (p1, k1) = self.spd_refine(&p0, None, &feature, 1)?;
        let (p2, _) = self.spd_refine(&p1, Some(&k1), &feature, 2)?;
        Ok(StageTensors {
            feature,
            integrated,
            candidates,
            p0,
            p1,
            p2,
        })
    }

    /// Normalizes, runs the network, restores world coordinates and
    /// attributes, and merges with the raw frame down to N′ points.
    pub fn enhance(&self, seq: &RadarSequence, seed: u64) -> Result<(EnhancedSequence, SeedStages)> {
        let (normed, transform) = normalize_sequence(seq)?;
        let input = EnhancerInput::new(&[&normed], &self.cfg, self.store.dtype())?;
        let out = self.forward(&input, &mut ForwardCtx::eval(), seed)?;
        let stages = out.to_seed_stages(1)?.pop().expect("one sequence");
        let world = denormalize_points(&stages.p2, &transform)?;
        let (t, n2) = (world.dim().0, world.dim().1);
        let target = self.cfg.enhanced_points;
        let mut enhanced = Array3::<f32>::zeros((t, target, 5));
        for f in 0..t {
            let gen = world.slice(s![f, .., ..]);
            let set = PointSet::from_frame(gen, 3)?;
            let attrs = geometry::transfer_attributes(&set, seq.frame(f))?;
            let mut full = Array2::<f32>::zeros((n2, 5));
            full.slice_mut(s![.., 0..3]).assign(&gen);
            full.slice_mut(s![.., 3..5]).assign(&attrs);
            let merged = geometry::merge_downsample(full.view(), seq.frame(f), target, seed.wrapping_add(f as u64))?;
            enhanced.slice_mut(s![f, .., ..]).assign(&merged);
        }
        Ok((EnhancedSequence::new(enhanced)?, stages))
    }

    /// Mean |z| of P_2 per point, over a batch (normalized space).
    pub fn mean_abs_z(stages: &StageTensors) -> Result<f64> {
        let z = stages.p2.i((.., .., 2))?.abs()?.mean_all()?;
        Ok(z.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand_distr::{Distribution, Uniform};

    fn random_seq(t: usize, n: usize, seed: u64) -> RadarSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-0.5f32, 0.5).unwrap();
        let pts = Array3::from_shape_fn((t, n, 5), |(_, _, c)| {
            let v = u.sample(&mut rng);
            if c == 4 { v.abs() } else { v }
        });
        RadarSequence::new(pts, 10.0).unwrap()
    }

    fn tiny() -> PipelineConfig {
        PipelineConfig::tiny()
    }

    #[test]
    fn shape_chain_tiny() {
        let cfg = tiny();
        let net = EnhancementNet::new(&cfg, DType::F32).unwrap();
        let seq = random_seq(5, cfg.raw_points, 1);
        let (enhanced, stages) = net.enhance(&seq, 3).unwrap();
        assert_eq!(enhanced.points().dim(), (5, cfg.enhanced_points, 5));
        assert_eq!(stages.candidates.dim(), (5, cfg.candidate_points, 3));
        assert_eq!(stages.p0.dim(), (5, cfg.seed_points, 3));
        assert_eq!(stages.p1.dim(), (5, 2 * cfg.seed_points, 3));
        assert_eq!(stages.p2.dim(), (5, 4 * cfg.seed_points, 3));
    }

    #[test]
    fn zero_displacement_children_match_parents() {
        let cfg = tiny();
        let net = EnhancementNet::with_zero_displacement(&cfg, DType::F32).unwrap();
        let (normed, _) = normalize_sequence(&random_seq(5, cfg.raw_points, 2)).unwrap();
        let input = EnhancerInput::new(&[&normed], &cfg, DType::F32).unwrap();
        let out = net.forward(&input, &mut ForwardCtx::eval(), 0).unwrap();
        let p0: Vec<f32> = out.p0.flatten_all().unwrap().to_vec1().unwrap();
        let p1: Vec<f32> = out.p1.flatten_all().unwrap().to_vec1().unwrap();
        for (i, c) in p1.chunks(3).enumerate() {
            assert_eq!(c, &p0[(i / 2) * 3..(i / 2) * 3 + 3]);
        }
    }

    #[test]
    fn stage_out_of_range() {
        let cfg = tiny();
        let net = EnhancementNet::new(&cfg, DType::F32).unwrap();
        let prev = Tensor::zeros((1, 4, 3), DType::F32, &Device::Cpu).unwrap();
        let feat = Tensor::zeros((1, 1, cfg.global_feature_dim), DType::F32, &Device::Cpu).unwrap();
        assert!(net.spd_refine(&prev, None, &feat, 3).is_err());
        assert!(net.spd_refine(&prev, None, &feat, 0).is_err());
    }
}
