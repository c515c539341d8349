//! Whitespace-separated text frame files.
//!
//! * radar: one `x y z v i` row per point
//! * joints: one `x y z` row per joint
//! * params: `γ` (3 values), `β` (10 values), then one row of 9 rotation
//!   entries (row-major) per joint
//! * mask: one `u v` pixel row per silhouette sample

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

fn parse_rows(text: &str, path: &Path) -> Result<Vec<Vec<f32>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f32>().map_err(|e| Error::Dataset {
                        path: path.to_path_buf(),
                        message: format!("line {}: `{tok}`: {e}", i + 1),
                    })
                })
                .collect()
        })
        .collect()
}

/// Reads a numeric table with exactly `width` columns per row.
pub fn read_table(path: &Path, width: usize) -> Result<Array2<f32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_rows(&text, path)?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            message: format!("row {} has {} values, expected {width}", i + 1, r.len()),
        });
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect()).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_table(path: &Path, table: ndarray::ArrayView2<'_, f32>) -> Result<()> {
    let mut out = String::with_capacity(table.len() * 12);
    for row in table.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" ")).expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One frame of body parameters: `(γ [3], β [10], θ [J × 9])`.
pub type FrameParams = ([f32; 3], [f32; 10], Vec<[f32; 9]>);

pub fn read_params(path: &Path, joints: usize) -> Result<FrameParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_rows(&text, path)?;
    let bad = |m: String| Error::Dataset {
        path: path.to_path_buf(),
        message: m,
    };
    if rows.len() != 2 + joints {
        return Err(bad(format!("expected {} rows, found {}", 2 + joints, rows.len())));
    }
    let gamma: [f32; 3] = rows[0].as_slice().try_into().map_err(|_| bad("translation row needs 3 values".into()))?;
    let beta: [f32; 10] = rows[1].as_slice().try_into().map_err(|_| bad("shape row needs 10 values".into()))?;
    let theta = rows[2..]
        .iter()
        .map(|r| r.as_slice().try_into().map_err(|_| bad("rotation rows need 9 values".into())))
        .collect::<Result<Vec<[f32; 9]>>>()?;
    Ok((gamma, beta, theta))
}

pub fn write_params(path: &Path, params: &FrameParams) -> Result<()> {
    let fmt = |v: &[f32]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    writeln!(out, "{}", fmt(&params.0)).unwrap();
    writeln!(out, "{}", fmt(&params.1)).unwrap();
    for r in &params.2 {
        writeln!(out, "{}", fmt(r)).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
