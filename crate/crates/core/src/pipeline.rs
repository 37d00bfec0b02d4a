//! End-to-end selection: bandit draws followed by top-p selection, plus evaluation
//! against the full-pool ground truth.

use std::collections::BTreeMap;

use crate::bandit::{run_bandit, BanditConfig, DrawLog};
use crate::clustering::Clustering;
use crate::error::Result;
use crate::evaluation::{per_cluster_report, recall_influence, recall_sample, EvalReport};
use crate::influence::{InfluenceSource, InfluenceVector};
use crate::selection::{final_select, objective_value, oracle_top, target_count, SelectionResult};

#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub log: DrawLog,
    pub selection: SelectionResult,
    /// Influence evaluations consumed, as reported by the source.
    pub evaluations: usize,
}

/// Draws `config.budget` samples and keeps the top `ceil(selection_ratio * N)` of them.
pub fn select(
    clusters: &Clustering,
    source: &dyn InfluenceSource,
    config: &BanditConfig,
) -> Result<SelectionRun> {
    let log = run_bandit(clusters, source, config)?;
    let selection = final_select(&log, target_count(config.selection_ratio, clusters.len()))?;
    Ok(SelectionRun {
        log,
        selection,
        evaluations: source.evaluations(),
    })
}

/// Full-pool influences and the exact top-p set.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub influences: InfluenceVector,
    pub top: SelectionResult,
}

impl GroundTruth {
    pub fn new(influences: InfluenceVector, selection_ratio: f64) -> Result<Self> {
        let top = oracle_top(&influences, selection_ratio)?;
        Ok(Self { influences, top })
    }
}

/// Recall metrics and per-cluster counts for one run.
pub fn evaluate(run: &SelectionRun, clusters: &Clustering, truth: &GroundTruth) -> Result<EvalReport> {
    let r_sample = recall_sample(&run.selection.indices, &truth.top.indices)?;
    let r_inf = recall_influence(
        &run.selection.indices,
        &truth.top.indices,
        &truth.influences,
    )?;
    let per_cluster = per_cluster_report(&run.log, clusters, &run.selection, &truth.top)?;
    Ok(EvalReport {
        r_sample,
        r_influence: r_inf.ratio,
        negative_denominator: r_inf.negative_denominator,
        objective: objective_value(&run.log, &truth.top)?,
        evaluations: run.evaluations,
        per_cluster,
        metadata: BTreeMap::new(),
    })
}
