//! Training loops for the two stages. The stages are trained separately; the
//! reconstructor sees a frozen enhancer through its precomputed outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, RunRecord};
use crate::body::{body_model_from_name, BodyModel};
use crate::config::PipelineConfig;
use crate::data::{normalize_sequence, EnhancedSequence};
use crate::enhance::{batch_targets, enhancement_loss_tensor, mask_targets, EnhanceTerms, EnhancementNet, EnhancerInput};
use crate::error::{Error, Result};
use crate::io::DatasetWindow;
use crate::nn::{checkpoint, clip_grad_norm, ForwardCtx};
use crate::recon::{loss_terms, terms_to_f64, total_loss, total_loss_value, LossTerm, Normalizers, ReconInput, ReconTargets, ReconstructionNet};

pub const TRAIN_DTYPE: DType = DType::F32;

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Splits window indices into (train, validation); with no validation share
/// the training set doubles as validation.
fn split(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let val = ((n as f64) * val_fraction).round() as usize;
    let val = val.min(n.saturating_sub(1));
    let train: Vec<usize> = (0..n - val).collect();
    if val == 0 {
        (train.clone(), train)
    } else {
        (train, (n - val..n).collect())
    }
}

/// Seeded batch order for one epoch.
fn batches(train: &[usize], batch: usize, epoch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

fn total_steps(cfg: &PipelineConfig, per_epoch: usize) -> usize {
    let all = cfg.epochs * per_epoch;
    if cfg.max_steps > 0 {
        all.min(cfg.max_steps)
    } else {
        all
    }
}

/// Enhancer inputs and mask targets prepared once per window.
pub struct PreparedEnhancer {
    inputs: Vec<EnhancerInput>,
    targets: Vec<[Array3<f32>; 3]>,
}

impl PreparedEnhancer {
    pub fn new(windows: &[DatasetWindow], cfg: &PipelineConfig) -> Result<Self> {
        let counts = [cfg.seed_points, cfg.stage1_points, cfg.stage2_points];
        let mut inputs = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            let mask = w
                .mask
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("window {i} has no mask; enhancer training needs masks")))?;
            let (normed, _) = normalize_sequence(&w.radar)?;
            inputs.push(EnhancerInput::new(&[&normed], cfg, TRAIN_DTYPE)?);
            targets.push(mask_targets(mask, counts, cfg.seed.wrapping_add(i as u64))?);
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn p0_seed(cfg: &PipelineConfig, step: usize) -> u64 {
    cfg.seed.wrapping_add(0x51ed).wrapping_add(step as u64)
}

/// Mean enhancement loss over the given windows, evaluation mode, with a fixed sampling seed.
pub fn enhancer_loss(net: &EnhancementNet, data: &PreparedEnhancer, idx: &[usize]) -> Result<(f64, EnhanceTerms)> {
    let cfg = net.config();
    let mut sum = 0.0;
    let mut terms = EnhanceTerms::default();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let input = EnhancerInput::concat(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
        let targets = batch_targets(&chunk.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>(), TRAIN_DTYPE)?;
        let out = net.forward(&input, &mut ForwardCtx::eval(), cfg.seed)?;
        let (loss, t) = enhancement_loss_tensor(&out, &targets, cfg.lambda_par, chunk.len())?;
        let w = chunk.len() as f64;
        sum += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * w;
        for s in 0..3 {
            terms.chamfer[s] += t.chamfer[s] * w;
            terms.partial[s] += t.partial[s] * w;
        }
    }
    let n = idx.len() as f64;
    for s in 0..3 {
        terms.chamfer[s] /= n;
        terms.partial[s] /= n;
    }
    Ok((sum / n, terms))
}

fn enhance_terms_map(t: &EnhanceTerms) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("chamfer".to_string(), t.chamfer_total());
    m.insert("partial".to_string(), t.partial_total());
    for s in 0..3 {
        m.insert(format!("chamfer_p{s}"), t.chamfer[s]);
        m.insert(format!("partial_p{s}"), t.partial[s]);
    }
    m
}

/// Result of a training run.
pub struct Trained<N> {
    pub net: N,
    pub record: RunRecord,
}

/// Optimizes the enhancement objective. With `out_dir`, writes the best and
/// final checkpoints there.
pub fn train_enhancer(cfg: &PipelineConfig, windows: &[DatasetWindow], out_dir: Option<&Path>) -> Result<Trained<EnhancementNet>> {
    let data = PreparedEnhancer::new(windows, cfg)?;
    if data.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let net = EnhancementNet::new(cfg, TRAIN_DTYPE)?;
    let vars = net.store().vars();
    let mut opt = adam(vars.clone(), cfg.learning_rate)?;
    let (train, val) = split(data.len(), cfg.val_fraction);
    let mut record = RunRecord::new("enhancer", cfg);
    let (initial, initial_terms) = enhancer_loss(&net, &data, &train)?;
    record.initial_loss = Some(initial);
    record.initial_terms = enhance_terms_map(&initial_terms);

    let per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let steps = total_steps(cfg, per_epoch);
    let mut step = 0;
    let mut best = f64::INFINITY;
    'epochs: for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        let mut sums = EnhanceTerms::default();
        for chunk in batches(&train, cfg.batch_size, epoch, cfg.seed) {
            if step >= steps {
                break 'epochs;
            }
            let input = EnhancerInput::concat(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
            let targets = batch_targets(&chunk.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>(), TRAIN_DTYPE)?;
            let mut ctx = ForwardCtx::train(cfg.dropout, cfg.seed.wrapping_add(1000 + step as u64));
            let out = net.forward(&input, &mut ctx, p0_seed(cfg, step))?;
            let (loss, terms) = enhancement_loss_tensor(&out, &targets, cfg.lambda_par, chunk.len())?;
            let mut grads = loss.backward()?;
            clip_grad_norm(&mut grads, &vars, cfg.grad_clip)?;
            opt.step(&grads)?;
            losses.push(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?);
            for s in 0..3 {
                sums.chamfer[s] += terms.chamfer[s];
                sums.partial[s] += terms.partial[s];
            }
            step += 1;
        }
        if losses.is_empty() {
            break;
        }
        let n = losses.len() as f64;
        for s in 0..3 {
            sums.chamfer[s] /= n;
            sums.partial[s] /= n;
        }
        let (val_loss, _) = enhancer_loss(&net, &data, &val)?;
        log::info!("enhancer epoch {epoch}: train {:.5} val {:.5}", losses.iter().sum::<f64>() / n, val_loss);
        record.epochs.push(EpochRecord {
            epoch,
            steps: losses.len(),
            mean_loss: losses.iter().sum::<f64>() / n,
            val_loss,
            terms: enhance_terms_map(&sums),
            step_losses: losses,
        });
        if let Some(dir) = out_dir {
            if val_loss < best {
                best = val_loss;
                let path = dir.join("enhancer_best.safetensors");
                checkpoint::save(net.store(), checkpoint::NetKind::Enhancer, cfg, &path)?;
                record.note_checkpoint(path);
            }
        }
    }
    let (final_loss, final_terms) = enhancer_loss(&net, &data, &train)?;
    record.final_loss = Some(final_loss);
    record.final_terms = enhance_terms_map(&final_terms);
    record.steps = step;
    if let Some(dir) = out_dir {
        let path = dir.join("enhancer.safetensors");
        checkpoint::save(net.store(), checkpoint::NetKind::Enhancer, cfg, &path)?;
        record.note_checkpoint(path);
    }
    Ok(Trained { net, record })
}

/// Enhanced clouds of every window from a frozen enhancer (or `None` when disabled).
pub fn precompute_enhanced(enhancer: Option<&EnhancementNet>, windows: &[DatasetWindow], cfg: &PipelineConfig) -> Result<Option<Vec<EnhancedSequence>>> {
    match (cfg.enhancement_enabled, enhancer) {
        (false, _) => Ok(None),
        (true, None) => Err(Error::Config("enhancement is enabled but no enhancer was provided".into())),
        (true, Some(net)) => {
            let out = super::map_ordered(windows, |w| net.enhance(&w.radar, cfg.seed).map(|(e, _)| e))?;
            Ok(Some(out))
        }
    }
}

/// Stage-two inputs and targets prepared once per window.
pub struct PreparedRecon {
    pub inputs: Vec<ReconInput>,
    pub targets: Vec<ReconTargets>,
}

impl PreparedRecon {
    pub fn new(windows: &[DatasetWindow], enhanced: Option<&[EnhancedSequence]>, body: Option<&dyn BodyModel>, cfg: &PipelineConfig) -> Result<Self> {
        let mut inputs = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            let enh = enhanced.map(|e| [&e[i]]);
            inputs.push(ReconInput::new(&[&w.radar], enh.as_ref().map(|e| &e[..]), cfg, TRAIN_DTYPE)?);
            let params = if cfg.joints_only_mode {
                None
            } else {
                Some(
                    w.gt_params
                        .as_ref()
                        .ok_or_else(|| Error::Invalid(format!("window {i} lacks body parameters; use joints-only mode")))?,
                )
            };
            targets.push(ReconTargets::new(
                &[&w.gt_joints],
                params.map(|p| [p]).as_ref().map(|p| &p[..]),
                if cfg.joints_only_mode { None } else { body },
                TRAIN_DTYPE,
            )?);
        }
        Ok(Self { inputs, targets })
    }
}

fn terms_to_strings(t: &BTreeMap<LossTerm, f64>) -> BTreeMap<String, f64> {
    t.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect()
}

/// Raw per-term means over windows, evaluation mode.
pub fn recon_terms(net: &ReconstructionNet, data: &PreparedRecon, body: Option<&dyn BodyModel>, idx: &[usize]) -> Result<BTreeMap<LossTerm, f64>> {
    let cfg = net.config();
    let mut sums: BTreeMap<LossTerm, f64> = BTreeMap::new();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let input = ReconInput::concat(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
        let targets = ReconTargets::concat(&chunk.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        let out = net.forward(&input)?;
        for (k, v) in terms_to_f64(&loss_terms(&out, &targets, body, cfg)?)? {
            *sums.entry(k).or_default() += v * chunk.len() as f64;
        }
    }
    Ok(sums.into_iter().map(|(k, v)| (k, v / idx.len() as f64)).collect())
}

/// Optimizes the stage-two objective with per-term normalization constants
/// taken from the first epoch's running means and then frozen.
pub fn train_reconstructor(
    cfg: &PipelineConfig,
    windows: &[DatasetWindow],
    enhancer: Option<&EnhancementNet>,
    out_dir: Option<&Path>,
) -> Result<Trained<ReconstructionNet>> {
    if let Some(e) = enhancer {
        if e.config().model_hash() != cfg.model_hash() {
            return Err(Error::HashMismatch {
                expected: cfg.model_hash(),
                found: e.config().model_hash(),
            });
        }
    }
    let body: Option<Arc<dyn BodyModel>> = if cfg.joints_only_mode {
        None
    } else {
        Some(body_model_from_name(&cfg.body_model)?)
    };
    let body_ref = body.as_deref();
    let enhanced = precompute_enhanced(enhancer, windows, cfg)?;
    let data = PreparedRecon::new(windows, enhanced.as_deref(), body_ref, cfg)?;
    if data.inputs.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let body_joints = body_ref.map(|b| b.joint_count()).unwrap_or(cfg.joint_count);
    let net = ReconstructionNet::new(cfg, body_joints, TRAIN_DTYPE)?;
    let vars = net.store().vars();
    let mut opt = adam(vars.clone(), cfg.learning_rate)?;
    let (train, val) = split(data.inputs.len(), cfg.val_fraction);
    let mut record = RunRecord::new("reconstructor", cfg);
    record.initial_terms = terms_to_strings(&recon_terms(&net, &data, body_ref, &train)?);

    let per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let steps = total_steps(cfg, per_epoch);
    let mut norms = Normalizers::new();
    let mut running: BTreeMap<LossTerm, (f64, usize)> = BTreeMap::new();
    let mut step = 0;
    let mut best = f64::INFINITY;
    'epochs: for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        let mut term_sums: BTreeMap<LossTerm, f64> = BTreeMap::new();
        for chunk in batches(&train, cfg.batch_size, epoch, cfg.seed.wrapping_add(7)) {
            if step >= steps {
                break 'epochs;
            }
            let input = ReconInput::concat(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
            let targets = ReconTargets::concat(&chunk.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
            let out = net.forward(&input)?;
            let terms = loss_terms(&out, &targets, body_ref, cfg)?;
            let values = terms_to_f64(&terms)?;
            if epoch == 0 {
                for (k, v) in &values {
                    let e = running.entry(*k).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                    norms.insert(*k, (e.0 / e.1 as f64).max(1e-8));
                }
            }
            let loss = total_loss(&terms, cfg, &norms)?;
            let mut grads = loss.backward()?;
            clip_grad_norm(&mut grads, &vars, cfg.grad_clip)?;
            opt.step(&grads)?;
            losses.push(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?);
            for (k, v) in values {
                *term_sums.entry(k).or_default() += v;
            }
            step += 1;
        }
        if losses.is_empty() {
            break;
        }
        let n = losses.len() as f64;
        let term_means: BTreeMap<LossTerm, f64> = term_sums.into_iter().map(|(k, v)| (k, v / n)).collect();
        let val_terms = recon_terms(&net, &data, body_ref, &val)?;
        let val_loss = total_loss_value(&val_terms, cfg, &norms);
        log::info!("reconstructor epoch {epoch}: train {:.5} val {:.5}", losses.iter().sum::<f64>() / n, val_loss);
        record.epochs.push(EpochRecord {
            epoch,
            steps: losses.len(),
            mean_loss: total_loss_value(&term_means, cfg, &norms),
            val_loss,
            terms: terms_to_strings(&term_means),
            step_losses: losses,
        });
        if let Some(dir) = out_dir {
            if val_loss < best {
                best = val_loss;
                let path = dir.join("reconstructor_best.safetensors");
                checkpoint::save(net.store(), checkpoint::NetKind::Reconstructor, cfg, &path)?;
                record.note_checkpoint(path);
            }
        }
    }
    record.normalizers = terms_to_strings(&norms);
    let final_terms = recon_terms(&net, &data, body_ref, &train)?;
    record.initial_loss = Some(total_loss_value(
        &record
            .initial_terms
            .iter()
            .filter_map(|(k, v)| LossTerm::ALL.iter().find(|t| t.as_str() == k).map(|t| (*t, *v)))
            .collect(),
        cfg,
        &norms,
    ));
    record.final_loss = Some(total_loss_value(&final_terms, cfg, &norms));
    record.final_terms = terms_to_strings(&final_terms);
    record.steps = step;
    if let Some(dir) = out_dir {
        let path = dir.join("reconstructor.safetensors");
        checkpoint::save(net.store(), checkpoint::NetKind::Reconstructor, cfg, &path)?;
        record.note_checkpoint(path);
    }
    Ok(Trained { net, record })
}
