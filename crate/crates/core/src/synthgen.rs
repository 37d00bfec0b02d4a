//! Synthetic gradient pools with planted cluster structure.
//!
//! Latent cluster directions are uniform on the unit sphere. A training vector
//! is `normalize(direction + noise / kappa)` with standard Gaussian noise per
//! coordinate; `kappa = 0` drops the direction entirely. Validation vectors are
//! drawn the same way around the directions of the "useful" clusters, so
//! high-influence samples concentrate in those clusters.
//!
//! Training rows are generated in fixed-size blocks, each with its own ChaCha
//! stream, so the output does not depend on the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::floor_count;
use crate::error::{Error, Result};
use crate::matrix::{l2_norm, GradientMatrix, ValidationSet, ZERO_NORM};

const BLOCK_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub n_latent_clusters: usize,
    /// Within-cluster tightness; larger is tighter, 0 is pure noise.
    pub concentration: f64,
    pub n_val: usize,
    pub n_subtasks: usize,
    /// Fraction of latent clusters the validation vectors are drawn around.
    pub useful_cluster_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            dim: 128,
            n_latent_clusters: 10,
            concentration: 20.0,
            n_val: 16,
            n_subtasks: 2,
            useful_cluster_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_useful(&self) -> usize {
        floor_count(self.useful_cluster_fraction * self.n_latent_clusters as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_samples == 0 || self.dim == 0 || self.n_latent_clusters == 0 {
            return bad("n_samples, dim and n_latent_clusters must be positive");
        }
        if self.n_val == 0 || self.n_subtasks == 0 {
            return bad("n_val and n_subtasks must be positive");
        }
        if self.n_latent_clusters > self.n_samples {
            return bad("more latent clusters than samples");
        }
        if self.n_subtasks > self.n_val {
            return bad("more subtasks than validation vectors");
        }
        if !(self.concentration >= 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be finite and non-negative");
        }
        if !(self.useful_cluster_fraction > 0.0 && self.useful_cluster_fraction <= 1.0) {
            return bad("useful_cluster_fraction must lie in (0, 1]");
        }
        if self.n_useful() == 0 {
            return bad("useful_cluster_fraction leaves no useful cluster");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPool {
    pub train: GradientMatrix,
    pub val: ValidationSet,
    /// Planted cluster of every training row.
    pub latent_labels: Vec<usize>,
    pub useful_clusters: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        let norm = l2_norm(&v);
        if norm >= ZERO_NORM {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// `normalize(center + noise / kappa)`, resampling the noise if the sum degenerates.
fn perturbed(rng: &mut ChaCha8Rng, center: &[f64], kappa: f64, out: &mut [f64]) {
    loop {
        for (o, c) in out.iter_mut().zip(center) {
            let z: f64 = StandardNormal.sample(rng);
            *o = if kappa == 0.0 { z } else { c + z / kappa };
        }
        let norm = l2_norm(out);
        if norm >= ZERO_NORM {
            out.iter_mut().for_each(|x| *x /= norm);
            return;
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthPool> {
    cfg.validate()?;
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let directions: Vec<Vec<f64>> = (0..cfg.n_latent_clusters)
        .map(|_| unit_direction(&mut rng, dim))
        .collect();
    let mut latent_labels: Vec<usize> = (0..cfg.n_samples)
        .map(|i| i % cfg.n_latent_clusters)
        .collect();
    latent_labels.shuffle(&mut rng);
    let useful_clusters: Vec<usize> = (0..cfg.n_useful()).collect();

    let mut val_data = vec![0.0; cfg.n_val * dim];
    let mut val_labels = Vec::with_capacity(cfg.n_val);
    for (j, row) in val_data.chunks_exact_mut(dim).enumerate() {
        let subtask = j % cfg.n_subtasks;
        let center = &directions[useful_clusters[subtask % useful_clusters.len()]];
        perturbed(&mut rng, center, cfg.concentration, row);
        val_labels.push(format!("subtask-{subtask}"));
    }

    let mut train_data = vec![0.0; cfg.n_samples * dim];
    train_data
        .par_chunks_mut(BLOCK_ROWS * dim)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut block_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            block_rng.set_stream(block as u64 + 1);
            for (offset, row) in chunk.chunks_exact_mut(dim).enumerate() {
                let label = latent_labels[block * BLOCK_ROWS + offset];
                perturbed(&mut block_rng, &directions[label], cfg.concentration, row);
            }
        });

    let train_ids = (0..cfg.n_samples).map(|i| format!("train-{i}")).collect();
    let val_ids = (0..cfg.n_val).map(|j| format!("val-{j}")).collect();
    let train = GradientMatrix::new(train_ids, dim, train_data)?.assume_normalized()?;
    let val_grads = GradientMatrix::new(val_ids, dim, val_data)?.assume_normalized()?;
    Ok(SynthPool {
        train,
        val: ValidationSet::new(val_grads, val_labels)?,
        latent_labels,
        useful_clusters,
    })
}
