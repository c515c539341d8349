//! Enhanced-cloud interchange file.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `MMHENHC\0` |
//! | 4 | format version (1) |
//! | 4 × 3 | T, N′, channels |
//! | 5 | channel semantics, `xyzvi` |
//! | T·N′·5·4 | point data, `f32` LE, frame-major |
//! | 16 | footer: config hash, ASCII hex |

use std::path::Path;

use ndarray::Array3;

use crate::data::{EnhancedSequence, CHANNEL_LAYOUT, RADAR_CHANNELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MMHENHC\0";
pub const VERSION: u32 = 1;
const HASH_LEN: usize = 16;
const HEADER_LEN: usize = 8 + 4 + 12 + 5;

pub fn encode_enhanced(seq: &EnhancedSequence, config_hash: &str) -> Result<Vec<u8>> {
    if config_hash.len() != HASH_LEN || !config_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::Format(format!("config hash must be {HASH_LEN} hex digits")));
    }
    let (t, n, c) = seq.points().dim();
    let mut out = Vec::with_capacity(HEADER_LEN + t * n * c * 4 + HASH_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [t, n, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(CHANNEL_LAYOUT);
    for v in seq.points().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(config_hash.as_bytes());
    Ok(out)
}

/// Parses a file image; returns the sequence and the stored config hash.
pub fn decode_enhanced(bytes: &[u8]) -> Result<(EnhancedSequence, String)> {
    let bad = |m: &str| Error::Format(format!("enhanced cloud: {m}"));
    if bytes.len() < HEADER_LEN + HASH_LEN {
        return Err(bad("file is truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(8) != VERSION {
        return Err(bad("unsupported version"));
    }
    let (t, n, c) = (word(12) as usize, word(16) as usize, word(20) as usize);
    if c != RADAR_CHANNELS || &bytes[24..29] != CHANNEL_LAYOUT {
        return Err(bad("unexpected channel layout"));
    }
    let body = t
        .checked_mul(n)
        .and_then(|v| v.checked_mul(c * 4))
        .ok_or_else(|| bad("header sizes overflow"))?;
    if bytes.len() != HEADER_LEN + body + HASH_LEN {
        return Err(bad("file is truncated or has trailing data"));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + body]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let hash = std::str::from_utf8(&bytes[HEADER_LEN + body..])
        .map_err(|_| bad("footer is not ASCII"))?
        .to_string();
    let points = Array3::from_shape_vec((t, n, c), data).map_err(|e| bad(&e.to_string()))?;
    Ok((EnhancedSequence::new(points)?, hash))
}

pub fn save_enhanced(seq: &EnhancedSequence, config_hash: &str, path: &Path) -> Result<()> {
    let bytes = encode_enhanced(seq, config_hash)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a file; with `expected_hash` set, a different stored hash is an error.
pub fn load_enhanced(path: &Path, expected_hash: Option<&str>) -> Result<(EnhancedSequence, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (seq, hash) = decode_enhanced(&bytes)?;
    if let Some(want) = expected_hash {
        if want != hash {
            return Err(Error::HashMismatch {
                expected: want.to_string(),
                found: hash,
            });
        }
    }
    Ok((seq, hash))
}
