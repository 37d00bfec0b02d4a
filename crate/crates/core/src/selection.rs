//! Final subset selection and the brute-force ground truth.

use serde::Serialize;

use crate::bandit::{ceil_count, DrawLog};
use crate::error::{Error, Result};
use crate::influence::InfluenceVector;

/// Selected samples, highest influence first.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub rewards: Vec<f64>,
    pub target_count: usize,
    /// Set when fewer samples were available than requested.
    pub shortfall: bool,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Lowest selected influence, i.e. the cutoff of a ground-truth set.
    pub fn min_reward(&self) -> Option<f64> {
        self.rewards.iter().copied().reduce(f64::min)
    }

    pub fn to_record(&self, ids: &[String]) -> Result<SelectionRecord> {
        let ids = self
            .indices
            .iter()
            .map(|&i| {
                ids.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: ids.len(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(SelectionRecord {
            target_count: self.target_count,
            ids,
            rewards: self.rewards.clone(),
            shortfall: self.shortfall,
        })
    }
}

/// JSON form of a selection, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SelectionRecord {
    pub target_count: usize,
    pub ids: Vec<String>,
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub shortfall: bool,
}

/// Number of samples kept for a selection ratio: `ceil(p * N)`.
pub fn target_count(selection_ratio: f64, pool: usize) -> usize {
    ceil_count(selection_ratio * pool as f64).clamp(1, pool.max(1))
}

/// The `target_count` drawn samples with the highest rewards; ties keep draw order.
pub fn final_select(log: &DrawLog, target_count: usize) -> Result<SelectionResult> {
    if target_count == 0 {
        return Err(Error::InvalidConfig("target_count must be positive".into()));
    }
    let mut order: Vec<usize> = (0..log.rounds.len()).collect();
    order.sort_by(|&a, &b| log.rounds[b].reward.total_cmp(&log.rounds[a].reward));
    let shortfall = order.len() < target_count;
    if shortfall {
        log::warn!(
            "only {} draws available for a selection of {target_count}",
            order.len()
        );
    }
    order.truncate(target_count);
    Ok(SelectionResult {
        indices: order.iter().map(|&r| log.rounds[r].sample).collect(),
        rewards: order.iter().map(|&r| log.rounds[r].reward).collect(),
        target_count,
        shortfall,
    })
}

/// Exact top `ceil(p * N)` samples over the whole pool; ties go to the lower index.
pub fn oracle_top(influences: &InfluenceVector, p: f64) -> Result<SelectionResult> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "selection ratio {p} outside (0, 1]"
        )));
    }
    if influences.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let values = influences.values();
    let target = target_count(p, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(target);
    Ok(SelectionResult {
        rewards: order.iter().map(|&i| values[i]).collect(),
        indices: order,
        target_count: target,
        shortfall: false,
    })
}

/// Drawn samples whose reward reaches the ground-truth cutoff.
pub fn objective_value(log: &DrawLog, ground_truth: &SelectionResult) -> Result<usize> {
    let cutoff = ground_truth.min_reward().ok_or(Error::EmptyGroundTruth)?;
    Ok(log.rounds.iter().filter(|r| r.reward >= cutoff).count())
}
