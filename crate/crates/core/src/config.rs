//! Pipeline configuration.
//!
//! The configuration is a flat TOML table. Every field below is a key, unknown
//! keys are rejected, and omitted keys take the defaults shown by
//! [`PipelineConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    // Shapes.
    /// Frames per window, T.
    pub frames_per_window: usize,
    /// Raw radar points per frame, N.
    pub raw_points: usize,
    /// Enhanced points per frame, N′.
    pub enhanced_points: usize,
    /// Seed cloud size, N_0.
    pub seed_points: usize,
    /// First refinement size, N_1.
    pub stage1_points: usize,
    /// Second refinement size, N_2.
    pub stage2_points: usize,
    /// Candidate cloud size, N_c.
    pub candidate_points: usize,
    /// Per-frame global feature width, C.
    pub global_feature_dim: usize,
    /// Refined global feature width, C′.
    pub refined_feature_dim: usize,
    /// Representing-point feature width, C_e.
    pub motion_feature_dim: usize,
    /// Global motion feature width, C_g.
    pub fused_feature_dim: usize,
    /// Representing points per frame, N_e.
    pub representing_points: usize,
    /// Supervised joints, N_J.
    pub joint_count: usize,

    // Enhancement network internals.
    pub sa_centers: usize,
    pub sa_neighbors: usize,
    pub sa_radius: f64,
    pub sa_hidden_dim: usize,
    pub split_code_dim: usize,
    pub spd_feature_dim: usize,
    pub displacement_clamp: f64,

    // Reconstruction network internals.
    pub backbone_radius: f64,
    pub backbone_neighbors: usize,
    pub temporal_kernel: usize,
    pub backbone_pooling: Pooling,
    pub fusion_blocks: usize,
    pub fusion_heads: usize,
    pub body_model: String,

    // Losses.
    pub lambda_par: f64,
    pub weight_j3d: f64,
    pub weight_j2d: f64,
    pub weight_theta: f64,
    pub weight_beta: f64,
    pub weight_gamma: f64,
    pub weight_joints: f64,
    pub weight_vertices: f64,

    // Training.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no step limit.
    pub max_steps: usize,
    pub dropout: f64,
    pub grad_clip: f64,
    pub val_fraction: f64,
    pub seed: u64,

    // Modes and ablations.
    pub joints_only_mode: bool,
    pub enhancement_enabled: bool,
    pub supervise_2d: bool,

    // Data.
    pub window_stride: usize,
    pub mask_points: usize,
    pub synth_frames: usize,
    pub synth_noise_sigma: f64,
    pub synth_frame_rate_hz: f64,
    pub synth_pose_amplitude: f64,
    pub synth_sensor_origin: [f64; 3],
    pub synth_subject_depth: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames_per_window: 5,
            raw_points: 1024,
            enhanced_points: 2048,
            seed_points: 512,
            stage1_points: 1024,
            stage2_points: 2048,
            candidate_points: 512,
            global_feature_dim: 1024,
            refined_feature_dim: 256,
            motion_feature_dim: 256,
            fused_feature_dim: 256,
            representing_points: 128,
            joint_count: 22,

            sa_centers: 128,
            sa_neighbors: 16,
            sa_radius: 0.3,
            sa_hidden_dim: 128,
            split_code_dim: 64,
            spd_feature_dim: 64,
            displacement_clamp: 0.2,

            backbone_radius: 0.3,
            backbone_neighbors: 16,
            temporal_kernel: 3,
            backbone_pooling: Pooling::Max,
            fusion_blocks: 2,
            fusion_heads: 4,
            body_model: "toy".to_string(),

            lambda_par: 1.0,
            weight_j3d: 1.0,
            weight_j2d: 1.0,
            weight_theta: 1.0,
            weight_beta: 1.0,
            weight_gamma: 1.0,
            weight_joints: 1.0,
            weight_vertices: 1.0,

            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            max_steps: 0,
            dropout: 0.2,
            grad_clip: 1.0,
            val_fraction: 0.0,
            seed: 0,

            joints_only_mode: false,
            enhancement_enabled: true,
            supervise_2d: true,

            window_stride: 1,
            mask_points: 4096,
            synth_frames: 64,
            synth_noise_sigma: 0.02,
            synth_frame_rate_hz: 10.0,
            synth_pose_amplitude: 0.35,
            synth_sensor_origin: [0.0, 0.0, 0.0],
            synth_subject_depth: 3.0,
        }
    }
}

/// Keys whose values change parameter shapes or forward semantics. Checkpoints
/// and enhanced-cloud files are bound to a hash of exactly these.
const MODEL_KEYS: &[&str] = &[
    "frames_per_window",
    "raw_points",
    "enhanced_points",
    "seed_points",
    "stage1_points",
    "stage2_points",
    "candidate_points",
    "global_feature_dim",
    "refined_feature_dim",
    "motion_feature_dim",
    "fused_feature_dim",
    "representing_points",
    "joint_count",
    "sa_centers",
    "sa_neighbors",
    "sa_radius",
    "sa_hidden_dim",
    "split_code_dim",
    "spd_feature_dim",
    "displacement_clamp",
    "backbone_radius",
    "backbone_neighbors",
    "temporal_kernel",
    "backbone_pooling",
    "fusion_blocks",
    "fusion_heads",
    "body_model",
    "joints_only_mode",
    "enhancement_enabled",
];

impl PipelineConfig {
    /// A small configuration that trains in seconds on one CPU core.
    pub fn tiny() -> Self {
        Self {
            raw_points: 64,
            enhanced_points: 128,
            seed_points: 32,
            stage1_points: 64,
            stage2_points: 128,
            candidate_points: 32,
            global_feature_dim: 64,
            refined_feature_dim: 32,
            motion_feature_dim: 64,
            fused_feature_dim: 64,
            representing_points: 32,
            sa_centers: 32,
            sa_neighbors: 8,
            sa_hidden_dim: 64,
            split_code_dim: 32,
            spd_feature_dim: 32,
            backbone_neighbors: 8,
            fusion_heads: 4,
            batch_size: 4,
            epochs: 10,
            mask_points: 256,
            synth_frames: 24,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// All configuration keys, sorted.
    pub fn keys() -> Vec<String> {
        match toml::Value::try_from(Self::default()).expect("config serializes") {
            toml::Value::Table(t) => t.keys().cloned().collect(),
            _ => unreachable!(),
        }
    }

    /// Applies `key = value` overrides, where each value is a TOML literal
    /// (bare words are accepted as strings).
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut table = match toml::Value::try_from(self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!(),
        };
        for (key, raw) in overrides {
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            let value = parse_literal(raw);
            table.insert(key.to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames_per_window < 1 || self.raw_points < 1 {
            return fail("frames_per_window and raw_points must be at least 1".into());
        }
        if self.seed_points < 1 {
            return fail("seed_points must be at least 1".into());
        }
        if self.stage1_points != 2 * self.seed_points {
            return fail(format!(
                "stage1_points ({}) must equal 2 * seed_points ({})",
                self.stage1_points, self.seed_points
            ));
        }
        if self.stage2_points != 2 * self.stage1_points {
            return fail(format!(
                "stage2_points ({}) must equal 2 * stage1_points ({})",
                self.stage2_points, self.stage1_points
            ));
        }
        if self.enhancement_enabled && self.enhanced_points != self.stage2_points {
            return fail(format!(
                "enhanced_points ({}) must equal stage2_points ({}) when enhancement is enabled",
                self.enhanced_points, self.stage2_points
            ));
        }
        if self.seed_points > self.candidate_points + self.raw_points {
            return fail("seed_points exceeds the candidate and raw pool".into());
        }
        if self.global_feature_dim % 2 != 0 {
            return fail("global_feature_dim must be even (two recurrent directions)".into());
        }
        if self.fusion_heads == 0 || self.fused_feature_dim % self.fusion_heads != 0 {
            return fail("fused_feature_dim must be divisible by fusion_heads".into());
        }
        if self.temporal_kernel == 0 || self.temporal_kernel % 2 == 0 {
            return fail("temporal_kernel must be odd".into());
        }
        if self.sa_centers > self.raw_points {
            return fail("sa_centers exceeds raw_points".into());
        }
        if self.representing_points > self.raw_points {
            return fail("representing_points exceeds raw_points".into());
        }
        if self.joint_count == 0 || self.batch_size == 0 || self.window_stride == 0 {
            return fail("joint_count, batch_size and window_stride must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must lie in [0, 1)".into());
        }
        let weights = [
            self.weight_j3d,
            self.weight_j2d,
            self.weight_theta,
            self.weight_beta,
            self.weight_gamma,
            self.weight_joints,
            self.weight_vertices,
        ];
        if weights.iter().any(|w| !(*w > 0.0)) {
            return fail("loss weights must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.lambda_par < 0.0 || !(self.displacement_clamp > 0.0) {
            return fail("learning_rate and displacement_clamp must be positive, lambda_par nonnegative".into());
        }
        Ok(())
    }

    /// Hash of the keys that define the model architecture.
    pub fn model_hash(&self) -> String {
        let table = match toml::Value::try_from(self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!(),
        };
        let mut hasher = Sha256::new();
        for key in MODEL_KEYS {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(table[*key].to_string().as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Total points per frame fed to the reconstruction backbone.
    pub fn backbone_input_points(&self) -> usize {
        if self.enhancement_enabled {
            self.raw_points + self.enhanced_points
        } else {
            self.raw_points
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
