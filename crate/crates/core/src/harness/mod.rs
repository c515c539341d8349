//! Training, evaluation and inference runners shared by the command line and the tests.

mod plot;
mod train;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

pub use plot::{plot_joint_errors, plot_loss_curves};
pub use train::{
    enhancer_loss, precompute_enhanced, recon_terms, train_enhancer, train_reconstructor, PreparedEnhancer, PreparedRecon,
    Trained, TRAIN_DTYPE,
};

use crate::body::{body_model_from_name, skeleton_17, toy_skeleton, BodyModel};
use crate::config::PipelineConfig;
use crate::data::{EnhancedSequence, RadarSequence, Skeleton};
use crate::enhance::EnhancementNet;
use crate::error::{Error, Result};
use crate::io::{load_radar_only, radar_windows, save_enhanced, DatasetWindow};
use crate::metrics::{EvalInput, EvalReport};
use crate::nn::checkpoint::{self, NetKind};
use crate::recon::{Prediction, ReconInput, ReconstructionNet};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean training objective of the epoch (stage two: normalized with the frozen constants).
    pub mean_loss: f64,
    pub val_loss: f64,
    /// Mean raw loss terms.
    pub terms: BTreeMap<String, f64>,
    pub step_losses: Vec<f64>,
}

/// Everything needed to replay a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub config: PipelineConfig,
    pub model_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Objective over the training windows before the first step (evaluation mode).
    pub initial_loss: Option<f64>,
    pub initial_terms: BTreeMap<String, f64>,
    pub epochs: Vec<EpochRecord>,
    pub normalizers: BTreeMap<String, f64>,
    pub final_loss: Option<f64>,
    pub final_terms: BTreeMap<String, f64>,
    pub steps: usize,
    pub report: Option<EvalReport>,
    pub checkpoints: Vec<PathBuf>,
    pub learning_rate_schedule: String,
}

impl RunRecord {
    pub fn new(stage: &str, cfg: &PipelineConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("config".to_string(), cfg.seed);
        seeds.insert("enhancer_init".to_string(), cfg.seed);
        seeds.insert("reconstructor_init".to_string(), cfg.seed.wrapping_add(1));
        Self {
            stage: stage.to_string(),
            config: cfg.clone(),
            model_hash: cfg.model_hash(),
            seeds,
            initial_loss: None,
            initial_terms: BTreeMap::new(),
            epochs: Vec::new(),
            normalizers: BTreeMap::new(),
            final_loss: None,
            final_terms: BTreeMap::new(),
            steps: 0,
            report: None,
            checkpoints: Vec::new(),
            learning_rate_schedule: "constant".to_string(),
        }
    }

    pub(crate) fn note_checkpoint(&mut self, path: PathBuf) {
        if !self.checkpoints.contains(&path) {
            self.checkpoints.push(path);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Creates `<parent>/<timestamp>-<model hash>`, adding a counter if the name is taken.
pub fn create_run_dir(parent: &Path, cfg: &PipelineConfig) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{}", cfg.model_hash());
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    for i in 0.. {
        let name = if i == 0 { base.clone() } else { format!("{base}-{i}") };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Anything that maps a window to a prediction. Implementations must only
/// look at `window.radar` unless they exist for testing the harness.
pub trait Predictor: Sync {
    fn predict(&self, window: &DatasetWindow) -> Result<Prediction>;
}

/// Returns the ground truth as the prediction.
pub struct GroundTruthShim {
    body: Option<Arc<dyn BodyModel>>,
}

impl GroundTruthShim {
    pub fn new(body: Option<Arc<dyn BodyModel>>) -> Self {
        Self { body }
    }
}

impl Predictor for GroundTruthShim {
    fn predict(&self, w: &DatasetWindow) -> Result<Prediction> {
        let gamma = match &w.gt_params {
            Some(p) => p.gamma.clone(),
            None => w.gt_joints.positions().index_axis(Axis(1), 0).to_owned(),
        };
        let vertices = match (&w.gt_params, &self.body) {
            (Some(p), Some(b)) => Some(b.forward(p)?.1),
            _ => None,
        };
        Ok(Prediction {
            params: w.gt_params.clone(),
            joints: w.gt_joints.clone(),
            regressed_joints: w.gt_joints.clone(),
            vertices,
            gamma,
        })
    }
}

fn skeleton_for(joints: usize) -> Result<Arc<Skeleton>> {
    match joints {
        22 => Ok(toy_skeleton()),
        17 => Ok(skeleton_17()),
        n => Err(Error::Config(format!("no skeleton with {n} joints"))),
    }
}

/// Both trained stages plus the body model.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub enhancer: Option<EnhancementNet>,
    pub reconstructor: ReconstructionNet,
    pub body: Option<Arc<dyn BodyModel>>,
    skeleton: Arc<Skeleton>,
}

impl Pipeline {
    pub fn new(enhancer: Option<EnhancementNet>, reconstructor: ReconstructionNet) -> Result<Self> {
        let config = reconstructor.config().clone();
        match (&enhancer, config.enhancement_enabled) {
            (None, true) => return Err(Error::Config("enhancement is enabled but no enhancer was given".into())),
            (Some(e), true) if e.config().model_hash() != config.model_hash() => {
                return Err(Error::HashMismatch {
                    expected: config.model_hash(),
                    found: e.config().model_hash(),
                })
            }
            _ => {}
        }
        let enhancer = if config.enhancement_enabled { enhancer } else { None };
        let body = if config.joints_only_mode {
            None
        } else {
            Some(body_model_from_name(&config.body_model)?)
        };
        let skeleton = skeleton_for(config.joint_count)?;
        Ok(Self {
            config,
            enhancer,
            reconstructor,
            body,
            skeleton,
        })
    }

    /// Loads both stages. The enhancer checkpoint is required exactly when
    /// the reconstructor was trained with enhancement.
    pub fn load(enhancer_ckpt: Option<&Path>, reconstructor_ckpt: &Path) -> Result<Self> {
        let info = checkpoint::read_header(reconstructor_ckpt)?;
        let cfg = info.config;
        let body_joints = if cfg.joints_only_mode {
            cfg.joint_count
        } else {
            body_model_from_name(&cfg.body_model)?.joint_count()
        };
        let recon = ReconstructionNet::new(&cfg, body_joints, TRAIN_DTYPE)?;
        checkpoint::load_into(recon.store(), NetKind::Reconstructor, &cfg, reconstructor_ckpt)?;
        let enhancer = match (cfg.enhancement_enabled, enhancer_ckpt) {
            (true, Some(path)) => {
                let net = EnhancementNet::new(&cfg, TRAIN_DTYPE)?;
                checkpoint::load_into(net.store(), NetKind::Enhancer, &cfg, path)?;
                Some(net)
            }
            (true, None) => return Err(Error::Config("the reconstructor expects an enhancer checkpoint".into())),
            (false, _) => None,
        };
        Self::new(enhancer, recon)
    }

    pub fn enhance(&self, radar: &RadarSequence) -> Result<Option<EnhancedSequence>> {
        self.enhancer
            .as_ref()
            .map(|e| e.enhance(radar, self.config.seed).map(|(seq, _)| seq))
            .transpose()
    }

    /// Runs the reconstructor on a raw window and an optional enhanced cloud.
    pub fn reconstruct(&self, radar: &RadarSequence, enhanced: Option<&EnhancedSequence>) -> Result<Prediction> {
        let enh = enhanced.map(|e| [e]);
        let input = ReconInput::new(&[radar], enh.as_ref().map(|e| &e[..]), &self.config, TRAIN_DTYPE)?;
        let out = self.reconstructor.forward(&input)?;
        out.to_prediction(self.skeleton.clone(), self.body.as_deref())
    }

    pub fn run(&self, radar: &RadarSequence) -> Result<(Option<EnhancedSequence>, Prediction)> {
        let enhanced = self.enhance(radar)?;
        let pred = self.reconstruct(radar, enhanced.as_ref())?;
        Ok((enhanced, pred))
    }
}

impl Predictor for Pipeline {
    fn predict(&self, window: &DatasetWindow) -> Result<Prediction> {
        Ok(self.run(&window.radar)?.1)
    }
}

/// Aggregate report, per-window reports and per-joint mean errors (cm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub windows: Vec<EvalReport>,
    pub joint_names: Vec<String>,
    pub per_joint_cm: Vec<f64>,
}

impl Evaluation {
    /// CSV with one row per window, then the aggregate row.
    pub fn window_table(&self) -> String {
        let mut out = format!("window,{}\n", EvalReport::csv_header());
        for (i, r) in self.windows.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", r.csv_row()));
        }
        out.push_str(&format!("all,{}\n", self.report.csv_row()));
        out
    }
}

/// Evaluates `predictor` on every window; windows run in parallel and are
/// reduced in order. `body` produces ground-truth vertices for MPVPE.
pub fn evaluate(predictor: &dyn Predictor, windows: &[DatasetWindow], body: Option<&dyn BodyModel>, frame_rate_hz: f64) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    let per = map_ordered(windows, |w| {
        let pred = predictor.predict(w)?;
        if pred.joints.joint_count() != w.gt_joints.joint_count() {
            return Err(Error::Config(format!(
                "prediction has {} joints, ground truth {}",
                pred.joints.joint_count(),
                w.gt_joints.joint_count()
            )));
        }
        let gt_gamma = match &w.gt_params {
            Some(p) => p.gamma.clone(),
            None => w.gt_joints.positions().index_axis(Axis(1), 0).to_owned(),
        };
        let gt_verts = match (&w.gt_params, pred.vertices.is_some(), body) {
            (Some(p), true, Some(b)) => Some(b.forward(p)?.1),
            _ => None,
        };
        let rotations = match (&pred.params, &w.gt_params) {
            (Some(p), Some(g)) => Some((&p.theta, &g.theta)),
            _ => None,
        };
        let report = EvalReport::compute(&EvalInput {
            pred_joints: &pred.joints,
            gt_joints: &w.gt_joints,
            pred_gamma: &pred.gamma,
            gt_gamma: &gt_gamma,
            vertices: pred.vertices.as_ref().zip(gt_verts.as_ref()),
            rotations,
            frame_rate_hz,
        })?;
        let per_joint = per_joint_errors(pred.joints.positions(), w.gt_joints.positions());
        Ok((report, per_joint))
    })?;
    let reports: Vec<EvalReport> = per.iter().map(|(r, _)| r.clone()).collect();
    let joints = per[0].1.len();
    let frames: usize = reports.iter().map(|r| r.frame_count).sum();
    let mut per_joint_cm = vec![0.0; joints];
    for (r, e) in &per {
        for (acc, v) in per_joint_cm.iter_mut().zip(e) {
            *acc += v * r.frame_count as f64 / frames as f64;
        }
    }
    Ok(Evaluation {
        report: EvalReport::aggregate(&reports)?,
        windows: reports,
        joint_names: windows[0].gt_joints.skeleton().names().to_vec(),
        per_joint_cm,
    })
}

fn per_joint_errors(pred: &Array3<f32>, gt: &Array3<f32>) -> Vec<f64> {
    let (t, j, _) = gt.dim();
    (0..j)
        .map(|k| {
            (0..t)
                .map(|f| {
                    (0..3)
                        .map(|c| (pred[[f, k, c]] as f64 - gt[[f, k, c]] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / t as f64
                * 100.0
        })
        .collect()
}

#[derive(Serialize)]
struct FrameLine {
    frame: usize,
    gamma: [f32; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<[f32; 9]>>,
    joints: Vec<[f32; 3]>,
}

/// Paths written by [`infer`].
#[derive(Debug, Clone)]
pub struct InferOutputs {
    pub enhanced: Option<PathBuf>,
    pub body_params: PathBuf,
    pub frames: usize,
}

/// Radar-only inference over a dataset directory. Only the manifest and the
/// radar frames are read. Writes `enhanced.bin` (when enhancement is on) and
/// `body_params.jsonl`, one JSON line per frame, into `out_dir`.
pub fn infer(pipeline: &Pipeline, radar_root: &Path, out_dir: &Path) -> Result<InferOutputs> {
    let cfg = &pipeline.config;
    let (seq, _) = load_radar_only(radar_root, cfg)?;
    let total = seq.frames();
    let windows = radar_windows(&seq, cfg.frames_per_window)?;
    let results = map_ordered(&windows, |(start, w)| pipeline.run(w).map(|r| (*start, r)))?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut enhanced_frames: Option<Array3<f32>> = None;
    let mut lines = Vec::with_capacity(total);
    let mut covered = 0;
    for (start, (enh, pred)) in &results {
        let t = pred.joints.frames();
        let first = covered.max(*start);
        for f in first..start + t {
            let local = f - start;
            let joints = pred.joints.positions();
            lines.push(FrameLine {
                frame: f,
                gamma: [pred.gamma[[local, 0]], pred.gamma[[local, 1]], pred.gamma[[local, 2]]],
                beta: pred.params.as_ref().map(|p| p.beta.row(local).to_vec()),
                theta: pred.params.as_ref().map(|p| {
                    (0..p.joint_count())
                        .map(|j| {
                            let m = p.theta.slice(s![local, j, .., ..]);
                            std::array::from_fn(|k| m[[k / 3, k % 3]])
                        })
                        .collect()
                }),
                joints: (0..joints.dim().1)
                    .map(|j| [joints[[local, j, 0]], joints[[local, j, 1]], joints[[local, j, 2]]])
                    .collect(),
            });
        }
        if let Some(e) = enh {
            let (_, n, c) = e.points().dim();
            let dst = enhanced_frames.get_or_insert_with(|| Array3::zeros((total, n, c)));
            let src = e.points().slice(s![first - start.., .., ..]);
            dst.slice_mut(s![first..start + t, .., ..]).assign(&src);
        }
        covered = start + t;
    }

    let enhanced = match enhanced_frames {
        Some(points) => {
            let path = out_dir.join("enhanced.bin");
            save_enhanced(&EnhancedSequence::new(points)?, &cfg.model_hash(), &path)?;
            Some(path)
        }
        None => None,
    };
    let body_params = out_dir.join("body_params.jsonl");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&body_params).map_err(|e| Error::io(&body_params, e))?);
    for line in &lines {
        let text = serde_json::to_string(line).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(file, "{text}").map_err(|e| Error::io(&body_params, e))?;
    }
    file.flush().map_err(|e| Error::io(&body_params, e))?;
    Ok(InferOutputs {
        enhanced,
        body_params,
        frames: total,
    })
}
