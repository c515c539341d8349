//! Versioned checkpoint container: a safetensors file whose header metadata
//! carries the format tag, the network kind, the model hash and the full
//! configuration that produced the parameters.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::ParamStore;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "mmhuman-checkpoint";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Enhancer,
    Reconstructor,
}

impl NetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Enhancer => "enhancer",
            NetKind::Reconstructor => "reconstructor",
        }
    }
}

pub fn save(store: &ParamStore, kind: NetKind, config: &PipelineConfig, path: &Path) -> Result<()> {
    let named = store.named_vars();
    let tensors: Vec<(String, Tensor)> = named
        .iter()
        .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
        .collect();
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT_TAG.to_string());
    meta.insert("version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("kind".to_string(), kind.as_str().to_string());
    meta.insert("model_hash".to_string(), config.model_hash());
    meta.insert("config".to_string(), config.to_toml_string());
    safetensors::serialize_to_file(tensors, Some(meta), path)
        .map_err(|e| Error::Format(format!("writing checkpoint {}: {e}", path.display())))
}

/// Header of a checkpoint file.
#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub kind: String,
    pub model_hash: String,
    pub config: PipelineConfig,
}

fn read_info(bytes: &[u8], path: &Path) -> Result<CheckpointInfo> {
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(&e.to_string()))?;
    let meta = header.metadata().as_ref().ok_or_else(|| bad("missing metadata"))?;
    if meta.get("format").map(String::as_str) != Some(FORMAT_TAG) {
        return Err(bad("not a checkpoint file"));
    }
    if meta.get("version").map(String::as_str) != Some(FORMAT_VERSION) {
        return Err(bad("unsupported checkpoint version"));
    }
    let config = PipelineConfig::from_toml_str(meta.get("config").ok_or_else(|| bad("missing config"))?)?;
    Ok(CheckpointInfo {
        kind: meta.get("kind").cloned().unwrap_or_default(),
        model_hash: meta.get("model_hash").cloned().unwrap_or_default(),
        config,
    })
}

pub fn read_header(path: &Path) -> Result<CheckpointInfo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_info(&bytes, path)
}

/// Loads parameter values into `store`, which must already hold every
/// variable the checkpoint names. `expected` must match the stored model hash.
pub fn load_into(store: &ParamStore, kind: NetKind, expected: &PipelineConfig, path: &Path) -> Result<CheckpointInfo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let info = read_info(&bytes, path)?;
    if info.kind != kind.as_str() {
        return Err(Error::Format(format!(
            "{}: expected a {} checkpoint, found {}",
            path.display(),
            kind.as_str(),
            info.kind
        )));
    }
    let want = expected.model_hash();
    if info.model_hash != want || info.config.model_hash() != want {
        return Err(Error::HashMismatch {
            expected: want,
            found: info.model_hash,
        });
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    for (name, var) in store.named_vars() {
        let t = tensors
            .get(&name)
            .ok_or_else(|| Error::Format(format!("{}: missing parameter {name}", path.display())))?;
        if t.dims() != var.dims() {
            return Err(Error::Shape(format!("parameter {name}: {:?} vs {:?}", t.dims(), var.dims())));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    if tensors.len() != store.named_vars().len() {
        return Err(Error::Format(format!("{}: parameter set differs from the network", path.display())));
    }
    Ok(info)
}
