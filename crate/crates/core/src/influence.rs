//! Normalized one-step influence scores and their aggregation.
//!
//! The influence of training sample `i` on validation sample `j` is the cosine
//! similarity of their gradients. Per-pair scores are averaged within each
//! validation subtask and the best subtask mean is kept. When several
//! checkpoints are available their per-sample scores are averaged.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, subtask_groups, GradientMatrix, ValidationSet};

/// Slack allowed on `|cos| <= 1` for rounding in unit-norm inner products.
pub const COSINE_SLACK: f64 = 1e-6;

/// One aggregated influence score per training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InfluenceVector(pub Vec<f64>);

impl InfluenceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(index).copied()
    }
}

impl From<Vec<f64>> for InfluenceVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Inner product of two unit gradients, i.e. their cosine similarity.
pub fn influence_pair(train_row: &[f64], val_row: &[f64]) -> Result<f64> {
    if train_row.len() != val_row.len() {
        return Err(Error::DimensionMismatch {
            expected: train_row.len(),
            found: val_row.len(),
        });
    }
    Ok(dot(train_row, val_row))
}

/// Mean within each subtask group, then maximum over groups.
fn aggregate_row(scores: &[f64], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|cols| cols.iter().map(|&c| scores[c]).sum::<f64>() / cols.len() as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Collapses an `N x M` matrix of pairwise scores into one score per training row.
pub fn aggregate_validation(scores: &[Vec<f64>], labels: &[String]) -> Result<InfluenceVector> {
    let groups = subtask_groups(labels)?;
    scores
        .iter()
        .map(|row| {
            if row.len() != labels.len() {
                return Err(Error::LengthMismatch {
                    expected: labels.len(),
                    found: row.len(),
                });
            }
            Ok(aggregate_row(row, &groups))
        })
        .collect::<Result<Vec<_>>>()
        .map(InfluenceVector)
}

/// Element-wise arithmetic mean of per-checkpoint influence vectors.
pub fn aggregate_checkpoints(per_checkpoint: &[InfluenceVector]) -> Result<InfluenceVector> {
    let first = per_checkpoint.first().ok_or(Error::EmptyList)?;
    let n = first.len();
    if let Some(bad) = per_checkpoint.iter().find(|v| v.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let count = per_checkpoint.len() as f64;
    let mut out = vec![0.0; n];
    for v in per_checkpoint {
        out.iter_mut().zip(&v.0).for_each(|(o, x)| *o += x);
    }
    out.iter_mut().for_each(|o| *o /= count);
    Ok(InfluenceVector(out))
}

/// Anything that can report the influence of a training sample on demand.
///
/// `evaluations` counts distinct samples whose influence has been computed and
/// is the budget consumed so far.
pub trait InfluenceSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn influence(&self, index: usize) -> Result<f64>;

    fn evaluations(&self) -> usize;
}

/// Write-once memo table with an evaluation counter.
#[derive(Debug)]
struct Memo {
    cells: Vec<OnceLock<f64>>,
    evaluated: AtomicUsize,
}

impl Memo {
    fn new(len: usize) -> Self {
        Self {
            cells: (0..len).map(|_| OnceLock::new()).collect(),
            evaluated: AtomicUsize::new(0),
        }
    }

    fn get_or_compute(&self, index: usize, compute: impl FnOnce() -> f64) -> Result<f64> {
        let cell = self.cells.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.cells.len(),
        })?;
        Ok(*cell.get_or_init(|| {
            self.evaluated.fetch_add(1, Ordering::Relaxed);
            compute()
        }))
    }

    fn evaluations(&self) -> usize {
        self.evaluated.load(Ordering::Relaxed)
    }
}

/// One checkpoint's normalized training and validation gradients.
#[derive(Debug, Clone, Copy)]
pub struct Checkpoint<'a> {
    pub train: &'a GradientMatrix,
    pub val: &'a ValidationSet,
}

/// Computes aggregated influence only for requested samples, memoizing results.
#[derive(Debug)]
pub struct LazyInfluenceOracle<'a> {
    checkpoints: Vec<Checkpoint<'a>>,
    memo: Memo,
}

impl<'a> LazyInfluenceOracle<'a> {
    pub fn new(train: &'a GradientMatrix, val: &'a ValidationSet) -> Result<Self> {
        Self::with_checkpoints(vec![Checkpoint { train, val }])
    }

    /// Averages influence over several checkpoints sharing the same training pool.
    pub fn with_checkpoints(checkpoints: Vec<Checkpoint<'a>>) -> Result<Self> {
        let first = checkpoints.first().ok_or(Error::EmptyList)?;
        let n = first.train.rows();
        for cp in &checkpoints {
            if !cp.train.is_normalized() || !cp.val.grads().is_normalized() {
                return Err(Error::NotNormalized);
            }
            if cp.train.rows() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: cp.train.rows(),
                });
            }
            if cp.train.dim() != cp.val.grads().dim() {
                return Err(Error::DimensionMismatch {
                    expected: cp.train.dim(),
                    found: cp.val.grads().dim(),
                });
            }
        }
        Ok(Self {
            memo: Memo::new(n),
            checkpoints,
        })
    }

    fn compute(&self, index: usize) -> f64 {
        let total: f64 = self
            .checkpoints
            .iter()
            .map(|cp| checkpoint_influence(cp, index))
            .sum();
        total / self.checkpoints.len() as f64
    }
}

fn checkpoint_influence(cp: &Checkpoint<'_>, index: usize) -> f64 {
    let row = cp.train.row(index);
    let scores: Vec<f64> = cp.val.grads().iter_rows().map(|v| dot(row, v)).collect();
    aggregate_row(&scores, cp.val.groups())
}

impl InfluenceSource for LazyInfluenceOracle<'_> {
    fn len(&self) -> usize {
        self.memo.cells.len()
    }

    fn influence(&self, index: usize) -> Result<f64> {
        self.memo.get_or_compute(index, || self.compute(index))
    }

    fn evaluations(&self) -> usize {
        self.memo.evaluations()
    }
}

/// Serves influence values that are already known, still counting distinct lookups.
#[derive(Debug)]
pub struct PrecomputedInfluence {
    values: InfluenceVector,
    memo: Memo,
}

impl PrecomputedInfluence {
    pub fn new(values: InfluenceVector) -> Self {
        let memo = Memo::new(values.len());
        Self { values, memo }
    }
}

impl InfluenceSource for PrecomputedInfluence {
    fn len(&self) -> usize {
        self.values.len()
    }

    fn influence(&self, index: usize) -> Result<f64> {
        self.memo.get_or_compute(index, || self.values.0[index])
    }

    fn evaluations(&self) -> usize {
        self.memo.evaluations()
    }
}

/// Aggregated influence for every training sample across all checkpoints.
///
/// Uses the same per-row arithmetic as [`LazyInfluenceOracle`], so both agree bit for bit.
pub fn full_influences(checkpoints: &[Checkpoint<'_>]) -> Result<InfluenceVector> {
    let oracle = LazyInfluenceOracle::with_checkpoints(checkpoints.to_vec())?;
    let values = (0..oracle.len())
        .into_par_iter()
        .map(|i| oracle.compute(i))
        .collect();
    Ok(InfluenceVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pair_of_identical_and_orthogonal_vectors() {
        let a = [0.6, 0.8];
        assert!((influence_pair(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(influence_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn pair_at_forty_five_degrees() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = influence_pair(&[1.0, 0.0], &[h, h]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn pair_dimension_mismatch() {
        assert!(matches!(
            influence_pair(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validation_aggregation_examples() {
        let one = aggregate_validation(&[vec![0.2, 0.4]], &labels(&["a", "a"])).unwrap();
        assert!((one.0[0] - 0.3).abs() < 1e-15);

        let two = aggregate_validation(&[vec![0.2, 0.4, 0.6]], &labels(&["a", "a", "b"])).unwrap();
        assert_eq!(two.0[0], 0.6);

        let flat = aggregate_validation(&[vec![0.5; 4]], &labels(&["a", "b", "a", "c"])).unwrap();
        assert_eq!(flat.0[0], 0.5);
    }

    #[test]
    fn validation_aggregation_errors() {
        assert!(matches!(
            aggregate_validation(&[vec![]], &[]),
            Err(Error::EmptySubtask)
        ));
        assert!(matches!(
            aggregate_validation(&[vec![0.1, 0.2]], &labels(&["a"])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_aggregation_examples() {
        let v = InfluenceVector(vec![0.1, -0.3, 0.7]);
        assert_eq!(aggregate_checkpoints(std::slice::from_ref(&v)).unwrap(), v);

        let mean = aggregate_checkpoints(&[vec![0.2].into(), vec![0.4].into()]).unwrap();
        assert!((mean.0[0] - 0.3).abs() < 1e-15);

        let zeros: Vec<InfluenceVector> = (0..3).map(|_| vec![0.0; 5].into()).collect();
        assert_eq!(aggregate_checkpoints(&zeros).unwrap().0, vec![0.0; 5]);
    }

    #[test]
    fn checkpoint_aggregation_errors() {
        assert!(matches!(aggregate_checkpoints(&[]), Err(Error::EmptyList)));
        assert!(matches!(
            aggregate_checkpoints(&[vec![0.0].into(), vec![0.0, 1.0].into()]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn precomputed_source_counts_distinct_lookups() {
        let src = PrecomputedInfluence::new(vec![0.5, 0.1, 0.9].into());
        assert_eq!(src.influence(2).unwrap(), 0.9);
        assert_eq!(src.influence(2).unwrap(), 0.9);
        assert_eq!(src.evaluations(), 1);
        assert!(matches!(
            src.influence(3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
        assert_eq!(src.evaluations(), 1);
    }
}
