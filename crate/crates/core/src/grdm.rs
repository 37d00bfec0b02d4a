//! GRDM gradient matrix files and their JSON sidecars.
//!
//! # Layout
//! - 4 bytes: magic `b"GRDM"`
//! - 2 bytes: version (u16, little-endian), currently 1
//! - 8 bytes: row count (u64, little-endian)
//! - 8 bytes: column count (u64, little-endian)
//! - rows * cols * 4 bytes: row-major f32 values (little-endian)
//!
//! Sample ids live in a sidecar `<stem>.json` next to the binary file, with an
//! optional `subtask_labels` array for validation sets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{GradientMatrix, ValidationSet};

pub const MAGIC: [u8; 4] = *b"GRDM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 8;

/// Matrix payload exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_labels: Option<Vec<String>>,
}

pub fn write_raw<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::LengthMismatch {
            expected: rows * cols,
            found: data.len(),
        });
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw<R: Read>(mut r: R) -> Result<RawMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| Error::Format("row count overflows usize".into()))?;
    r.read_exact(&mut b8)?;
    let cols = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| Error::Format("column count overflows usize".into()))?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawMatrix { rows, cols, data })
}

/// Sidecar location for a GRDM file: same path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let w = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(w, sidecar)?;
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let r = BufReader::new(File::open(sidecar_path(path))?);
    Ok(serde_json::from_reader(r)?)
}

fn to_f32(m: &GradientMatrix) -> Vec<f32> {
    m.data().iter().map(|&x| x as f32).collect()
}

fn matrix_from_raw(raw: RawMatrix, ids: Vec<String>) -> Result<GradientMatrix> {
    if ids.len() != raw.rows {
        return Err(Error::LengthMismatch {
            expected: raw.rows,
            found: ids.len(),
        });
    }
    if let Some(pos) = raw.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Format(format!("non-finite value at offset {pos}")));
    }
    let data = raw.data.into_iter().map(f64::from).collect();
    GradientMatrix::new(ids, raw.cols, data)
}

/// Writes `m` as GRDM (values rounded to f32) plus its id sidecar.
pub fn save_gradients(path: &Path, m: &GradientMatrix) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    write_raw(w, m.rows(), m.dim(), &to_f32(m))?;
    write_sidecar(
        path,
        &Sidecar {
            ids: m.ids().to_vec(),
            subtask_labels: None,
        },
    )
}

pub fn load_gradients(path: &Path) -> Result<GradientMatrix> {
    let raw = read_raw(BufReader::new(File::open(path)?))?;
    let sidecar = read_sidecar(path)?;
    matrix_from_raw(raw, sidecar.ids)
}

pub fn save_validation(path: &Path, v: &ValidationSet) -> Result<()> {
    let m = v.grads();
    let w = BufWriter::new(File::create(path)?);
    write_raw(w, m.rows(), m.dim(), &to_f32(m))?;
    write_sidecar(
        path,
        &Sidecar {
            ids: m.ids().to_vec(),
            subtask_labels: Some(v.labels().to_vec()),
        },
    )
}

/// Loads a validation set. A sidecar without labels puts every row in one subtask.
pub fn load_validation(path: &Path) -> Result<ValidationSet> {
    let raw = read_raw(BufReader::new(File::open(path)?))?;
    let sidecar = read_sidecar(path)?;
    let labels = sidecar
        .subtask_labels
        .unwrap_or_else(|| vec!["default".to_string(); raw.rows]);
    let m = matrix_from_raw(raw, sidecar.ids)?;
    ValidationSet::new(m, labels)
}
