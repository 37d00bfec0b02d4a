//! Dense per-sample gradient feature matrices.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows whose Euclidean norm falls below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Maximum deviation from 1.0 tolerated in the norm of a normalized row.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// `N` gradient vectors of dimension `d`, one per training sample, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl GradientMatrix {
    /// Builds a matrix from row-major `data`. Ids must be unique and match the row count.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if ids.is_empty() || dim == 0 {
            return Err(Error::InvalidConfig(
                "gradient matrix needs at least one row and one column".into(),
            ));
        }
        let expected = ids.len() * dim;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            dim,
            data,
            normalized: false,
        })
    }

    /// Builds a matrix with ids `"0".."N-1"`.
    pub fn with_index_ids(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::new((0..rows).map(|i| i.to_string()).collect(), dim, data)
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(ids, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Returns a copy with every row scaled to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let dim = self.dim;
        let mut data = self.data.clone();
        data.par_chunks_exact_mut(dim)
            .enumerate()
            .try_for_each(|(index, row)| {
                let norm = l2_norm(row);
                if norm < ZERO_NORM {
                    return Err(Error::ZeroRow { index });
                }
                row.iter_mut().for_each(|x| *x /= norm);
                Ok(())
            })?;
        Ok(Self {
            ids: self.ids.clone(),
            dim,
            data,
            normalized: true,
        })
    }

    /// Marks the matrix as normalized after checking every row norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        let ok = self
            .iter_rows()
            .all(|row| (l2_norm(row) - 1.0).abs() <= UNIT_NORM_TOL);
        if !ok {
            return Err(Error::NotNormalized);
        }
        self.normalized = true;
        Ok(self)
    }

    pub(crate) fn from_parts_unchecked(
        ids: Vec<String>,
        dim: usize,
        data: Vec<f64>,
        normalized: bool,
    ) -> Self {
        debug_assert_eq!(ids.len() * dim, data.len());
        Self {
            ids,
            dim,
            data,
            normalized,
        }
    }
}

/// Validation gradients with one subtask label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    grads: GradientMatrix,
    labels: Vec<String>,
    groups: Vec<Vec<usize>>,
}

impl ValidationSet {
    pub fn new(grads: GradientMatrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != grads.rows() {
            return Err(Error::LengthMismatch {
                expected: grads.rows(),
                found: labels.len(),
            });
        }
        let groups = subtask_groups(&labels)?;
        Ok(Self {
            grads,
            labels,
            groups,
        })
    }

    pub fn grads(&self) -> &GradientMatrix {
        &self.grads
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Column indices of each subtask, subtasks in order of first appearance.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn normalize_rows(&self) -> Result<Self> {
        Ok(Self {
            grads: self.grads.normalize_rows()?,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
        })
    }
}

/// Groups column indices by label, keeping the order in which labels first appear.
pub fn subtask_groups(labels: &[String]) -> Result<Vec<Vec<usize>>> {
    if labels.is_empty() {
        return Err(Error::EmptySubtask);
    }
    let mut names: Vec<&str> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (col, label) in labels.iter().enumerate() {
        match names.iter().position(|n| *n == label.as_str()) {
            Some(g) => groups[g].push(col),
            None => {
                names.push(label);
                groups.push(vec![col]);
            }
        }
    }
    Ok(groups)
}

pub fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inner product accumulated in four interleaved lanes so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (a4, a_tail) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_tail) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = a_tail.iter().zip(b_tail).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
