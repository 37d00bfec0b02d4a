//! Recall of a selection against the true top set, per-cluster population
//! counts, and re-use of early clusters with later-checkpoint gradients.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, DrawLog};
use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::influence::{full_influences, Checkpoint, InfluenceVector, LazyInfluenceOracle};
use crate::matrix::{GradientMatrix, ValidationSet};
use crate::pipeline::{evaluate, select, GroundTruth};
use crate::selection::SelectionResult;

/// Sample-level recall `|D ∩ D_gt| / |D_gt|`.
pub fn recall_sample(selected: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let truth_set: HashSet<usize> = truth.iter().copied().collect();
    let selected_set: HashSet<usize> = selected.iter().copied().collect();
    let hits = selected_set.intersection(&truth_set).count();
    Ok(hits as f64 / truth_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceRecall {
    pub ratio: f64,
    /// The ground-truth influence sum is negative, so the ratio loses its recall meaning.
    pub negative_denominator: bool,
}

/// Influence-level recall: summed influence of `selected` over that of `truth`.
pub fn recall_influence(
    selected: &[usize],
    truth: &[usize],
    influences: &InfluenceVector,
) -> Result<InfluenceRecall> {
    if truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let sum = |idx: &[usize]| -> Result<f64> {
        let mut seen = HashSet::with_capacity(idx.len());
        let mut total = 0.0;
        for &i in idx {
            let v = influences.get(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: influences.len(),
            })?;
            if seen.insert(i) {
                total += v;
            }
        }
        Ok(total)
    };
    let numerator = sum(selected)?;
    let denominator = sum(truth)?;
    if denominator == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let negative_denominator = denominator < 0.0;
    if negative_denominator {
        log::warn!("ground-truth influence sum {denominator} is negative; R_inf reported as raw ratio");
    }
    Ok(InfluenceRecall {
        ratio: numerator / denominator,
        negative_denominator,
    })
}

/// Population counts for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub cluster: usize,
    pub total: usize,
    pub drawn: usize,
    pub true_top: usize,
    pub selected: usize,
}

/// Per cluster: members, draws, ground-truth members and selected members.
pub fn per_cluster_report(
    log: &DrawLog,
    clusters: &Clustering,
    selected: &SelectionResult,
    truth: &SelectionResult,
) -> Result<Vec<ClusterCounts>> {
    let k = clusters.k();
    if log.per_cluster_draws.len() != k {
        return Err(Error::InconsistentInputs(format!(
            "draw log has {} clusters, clustering has {k}",
            log.per_cluster_draws.len()
        )));
    }
    let assignments = clusters.assignments();
    let mut counts: Vec<ClusterCounts> = clusters
        .sizes()
        .iter()
        .enumerate()
        .map(|(cluster, &total)| ClusterCounts {
            cluster,
            total,
            drawn: 0,
            true_top: 0,
            selected: 0,
        })
        .collect();
    let cluster_of = |i: usize| {
        assignments.get(i).copied().ok_or_else(|| {
            Error::InconsistentInputs(format!(
                "sample {i} outside the clustered pool of {}",
                assignments.len()
            ))
        })
    };
    for r in &log.rounds {
        let c = cluster_of(r.sample)?;
        if c != r.cluster {
            return Err(Error::InconsistentInputs(format!(
                "round {} drew sample {} from cluster {} but it belongs to {c}",
                r.round, r.sample, r.cluster
            )));
        }
        counts[c].drawn += 1;
    }
    for &i in &truth.indices {
        counts[cluster_of(i)?].true_top += 1;
    }
    for &i in &selected.indices {
        counts[cluster_of(i)?].selected += 1;
    }
    Ok(counts)
}

/// Recall metrics, per-cluster counts and a free-form config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_sample: f64,
    pub r_influence: f64,
    pub negative_denominator: bool,
    /// Drawn samples reaching the ground-truth cutoff.
    pub objective: usize,
    pub evaluations: usize,
    pub per_cluster: Vec<ClusterCounts>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftResult {
    pub r_sample: f64,
    pub r_influence: f64,
}

/// Re-runs selection with clusters fixed at the first checkpoint but influences
/// taken from a later one, scored against that later checkpoint's ground truth.
pub fn drift_eval(
    clusters_t0: &Clustering,
    reference_ids: &[String],
    train_tk: &GradientMatrix,
    val_tk: &ValidationSet,
    config: &BanditConfig,
) -> Result<DriftResult> {
    if train_tk.ids() != reference_ids || clusters_t0.len() != train_tk.rows() {
        return Err(Error::IdMismatch);
    }
    let train = normalized(train_tk)?;
    let val = if val_tk.grads().is_normalized() {
        val_tk.clone()
    } else {
        val_tk.normalize_rows()?
    };
    let cp = [Checkpoint {
        train: &train,
        val: &val,
    }];
    let truth = GroundTruth::new(full_influences(&cp)?, config.selection_ratio)?;
    let oracle = LazyInfluenceOracle::new(&train, &val)?;
    let run = select(clusters_t0, &oracle, config)?;
    let report = evaluate(&run, clusters_t0, &truth)?;
    Ok(DriftResult {
        r_sample: report.r_sample,
        r_influence: report.r_influence,
    })
}

fn normalized(m: &GradientMatrix) -> Result<GradientMatrix> {
    if m.is_normalized() {
        Ok(m.clone())
    } else {
        m.normalize_rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::DrawRecord;

    #[test]
    fn recall_sample_examples() {
        assert_eq!(recall_sample(&[1, 2], &[2, 1]).unwrap(), 1.0);
        assert_eq!(recall_sample(&[3], &[1, 2]).unwrap(), 0.0);
        let r = recall_sample(&[1, 2, 3], &[2, 3, 4]).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(recall_sample(&[1], &[]), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn recall_influence_examples() {
        let inf: InfluenceVector = vec![0.4, 0.4, 0.4, 0.4].into();
        assert_eq!(recall_influence(&[0, 1], &[0, 1], &inf).unwrap().ratio, 1.0);
        assert_eq!(recall_influence(&[0], &[0, 1], &inf).unwrap().ratio, 0.5);

        let neg: InfluenceVector = vec![-0.2, -0.1].into();
        let r = recall_influence(&[1], &[0, 1], &neg).unwrap();
        assert!(r.negative_denominator);
        assert!((r.ratio - (-0.1 / -0.3)).abs() < 1e-15);

        let zero: InfluenceVector = vec![0.0, 0.0].into();
        assert!(matches!(
            recall_influence(&[0], &[0, 1], &zero),
            Err(Error::ZeroDenominator)
        ));
        assert!(recall_influence(&[7], &[0], &inf).is_err());
    }

    #[test]
    fn per_cluster_counts_and_zero_draw_clusters() {
        let clusters = Clustering::from_assignments(2, vec![0, 0, 1, 1]).unwrap();
        let log = DrawLog {
            rounds: vec![
                DrawRecord { round: 0, cluster: 0, sample: 1, reward: 0.5 },
                DrawRecord { round: 1, cluster: 0, sample: 0, reward: 0.2 },
            ],
            per_cluster_draws: vec![2, 0],
            cold_start_rounds: 0,
        };
        let sel = SelectionResult { indices: vec![1], rewards: vec![0.5], target_count: 1, shortfall: false };
        let gt = SelectionResult { indices: vec![2], rewards: vec![0.9], target_count: 1, shortfall: false };
        let report = per_cluster_report(&log, &clusters, &sel, &gt).unwrap();
        assert_eq!(
            report[0],
            ClusterCounts { cluster: 0, total: 2, drawn: 2, true_top: 0, selected: 1 }
        );
        assert_eq!(
            report[1],
            ClusterCounts { cluster: 1, total: 2, drawn: 0, true_top: 1, selected: 0 }
        );
    }

    #[test]
    fn per_cluster_rejects_inconsistent_logs() {
        let clusters = Clustering::from_assignments(2, vec![0, 1]).unwrap();
        let log = DrawLog {
            rounds: vec![DrawRecord { round: 0, cluster: 0, sample: 1, reward: 0.5 }],
            per_cluster_draws: vec![1, 0],
            cold_start_rounds: 0,
        };
        let empty = SelectionResult { indices: vec![], rewards: vec![], target_count: 1, shortfall: true };
        assert!(matches!(
            per_cluster_report(&log, &clusters, &empty, &empty),
            Err(Error::InconsistentInputs(_))
        ));
    }
}
