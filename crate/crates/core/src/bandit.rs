//! Budget allocation across clusters as a multi-armed bandit.
//!
//! Each cluster is an arm. Drawing an arm evaluates the influence of one
//! not-yet-drawn member chosen uniformly at random, and that influence is the
//! reward. A cold-start phase spends a fraction of the budget proportionally to
//! cluster sizes; every later round draws the arm with the highest policy score.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::influence::InfluenceSource;

/// Score of an arm that has never been drawn; forces one visit before exploitation.
pub const UNDRAWN_SCORE: f64 = f64::INFINITY;

/// Standard deviations below this are treated as zero by [`score_ucb_tn`].
pub const DEGENERATE_SIGMA: f64 = 1e-12;

/// Arm scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Policy {
    /// Mean plus `beta` standard deviations of observed rewards.
    UcbBeta,
    /// Empirical fraction of rewards at or above the estimated threshold.
    UcbTh,
    /// Gaussian tail mass above the estimated threshold.
    UcbTn,
    /// Classic UCB1 exploration bonus.
    Ucb1,
    /// Uniform choice among arms with members left.
    RandomDraw,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::RandomDraw,
        Policy::Ucb1,
        Policy::UcbTn,
        Policy::UcbTh,
        Policy::UcbBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::UcbBeta => "UCB_BETA",
            Policy::UcbTh => "UCB_TH",
            Policy::UcbTn => "UCB_TN",
            Policy::Ucb1 => "UCB1",
            Policy::RandomDraw => "RANDOM_DRAW",
        }
    }

    fn uses_threshold(self) -> bool {
        matches!(self, Policy::UcbTh | Policy::UcbTn)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    /// Number of influence evaluations allowed.
    pub budget: usize,
    /// Fraction of the budget spent on proportional cold-start draws.
    pub cold_start_ratio: f64,
    /// Fraction of the pool that will finally be selected.
    pub selection_ratio: f64,
    pub beta: f64,
    pub policy: Policy,
    pub seed: u64,
}

impl BanditConfig {
    /// Defaults: 5% cold start, 5% selection, `beta = 1`, UCB-Beta.
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            cold_start_ratio: 0.05,
            selection_ratio: 0.05,
            beta: 1.0,
            policy: Policy::UcbBeta,
            seed,
        }
    }

    pub fn validate(&self, pool: usize) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be positive".into()));
        }
        if self.budget > pool {
            return Err(Error::BudgetExceedsPool {
                budget: self.budget,
                pool,
            });
        }
        if !(0.0..=1.0).contains(&self.cold_start_ratio) {
            return Err(Error::InvalidConfig(format!(
                "cold_start_ratio {} outside [0, 1]",
                self.cold_start_ratio
            )));
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection_ratio {} outside (0, 1]",
                self.selection_ratio
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be finite".into()));
        }
        Ok(())
    }

    /// Rounds reserved for cold start: `floor(cold_start_ratio * budget)`.
    pub fn cold_start_budget(&self) -> usize {
        if self.policy == Policy::RandomDraw {
            0
        } else {
            floor_count(self.cold_start_ratio * self.budget as f64)
        }
    }
}

/// `ceil(x)` that ignores representation error just above an integer (e.g. `0.05 * 20000`).
pub fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// `floor(x)` that ignores representation error just below an integer.
pub fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Bandit state for one cluster.
#[derive(Debug, Clone)]
pub struct ArmState {
    pub cluster_id: usize,
    /// Undrawn members in draw order (drawn from the back).
    remaining: Vec<usize>,
    history: Vec<f64>,
    sum: f64,
    sum_sq: f64,
    // Welford accumulators for a cancellation-free deviation.
    mean: f64,
    m2: f64,
}

impl ArmState {
    pub fn new(cluster_id: usize, mut members: Vec<usize>, rng: &mut impl Rng) -> Self {
        members.shuffle(rng);
        Self {
            cluster_id,
            remaining: members,
            history: Vec::new(),
            sum: 0.0,
            sum_sq: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    /// An arm with the given reward history and nothing left to draw.
    pub fn from_history(cluster_id: usize, rewards: &[f64]) -> Self {
        let mut arm = Self {
            cluster_id,
            remaining: Vec::new(),
            history: Vec::new(),
            sum: 0.0,
            sum_sq: 0.0,
            mean: 0.0,
            m2: 0.0,
        };
        rewards.iter().for_each(|&r| arm.record(r));
        arm
    }

    pub fn count(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn next_sample(&mut self) -> Option<usize> {
        self.remaining.pop()
    }

    pub fn record(&mut self, reward: f64) {
        self.history.push(reward);
        self.sum += reward;
        self.sum_sq += reward * reward;
        let n = self.history.len() as f64;
        let delta = reward - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (reward - self.mean);
    }

    /// Sample mean of the rewards; 0 for an undrawn arm.
    pub fn mean(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.mean
        }
    }

    /// Population standard deviation of the rewards.
    pub fn std_dev(&self) -> f64 {
        if self.history.len() < 2 {
            0.0
        } else {
            (self.m2.max(0.0) / self.history.len() as f64).sqrt()
        }
    }
}

pub fn score_ucb_beta(arm: &ArmState, beta: f64) -> f64 {
    if arm.count() == 0 {
        return UNDRAWN_SCORE;
    }
    arm.mean() + beta * arm.std_dev()
}

pub fn score_ucb_th(arm: &ArmState, threshold: f64) -> f64 {
    if arm.count() == 0 {
        return UNDRAWN_SCORE;
    }
    let hits = arm.history().iter().filter(|&&r| r >= threshold).count();
    hits as f64 / arm.count() as f64
}

pub fn score_ucb_tn(arm: &ArmState, threshold: f64) -> f64 {
    if arm.count() == 0 {
        return UNDRAWN_SCORE;
    }
    gaussian_tail(arm.mean(), arm.std_dev(), threshold)
}

/// `P(X >= threshold)` for `X ~ N(mean, sigma)`, a step function when `sigma` vanishes.
pub fn gaussian_tail(mean: f64, sigma: f64, threshold: f64) -> f64 {
    if sigma < DEGENERATE_SIGMA {
        return if mean >= threshold { 1.0 } else { 0.0 };
    }
    let z = (threshold - mean) / sigma;
    let standard = Normal::standard();
    standard.sf(z)
}

pub fn score_ucb1(arm: &ArmState, total_rounds: usize) -> f64 {
    if arm.count() == 0 {
        return UNDRAWN_SCORE;
    }
    ucb1_index(arm.mean(), arm.count(), total_rounds.max(1) as f64)
}

/// `mean + sqrt(2 ln(t) / count)`.
pub fn ucb1_index(mean: f64, count: usize, total_rounds: f64) -> f64 {
    mean + (2.0 * total_rounds.ln() / count as f64).sqrt()
}

/// Fraction of pooled history treated as "top" when estimating the threshold.
///
/// The final selection keeps `selection_ratio * pool` samples out of `budget`
/// evaluations, so at full history the estimate tracks the true cutoff.
pub fn threshold_fraction(selection_ratio: f64, pool: usize, budget: usize) -> f64 {
    (selection_ratio * pool as f64 / budget as f64).min(1.0)
}

/// The smallest reward within the top `fraction` of `pooled`.
pub fn estimate_threshold(pooled: &[f64], fraction: f64) -> Result<f64> {
    if pooled.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let n = pooled.len();
    let rank = ceil_count(fraction * n as f64).clamp(1, n);
    let mut scratch = pooled.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(rank - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Splits `cold_budget` across clusters in proportion to `sizes` by largest remainder.
///
/// Remainder ties go to the cluster with the smaller floor share, then the lower index.
pub fn cold_start_allocation(sizes: &[usize], cold_budget: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if cold_budget > total {
        return Err(Error::BudgetExceedsPool {
            budget: cold_budget,
            pool: total,
        });
    }
    if cold_budget == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let total = total as u128;
    let mut alloc = Vec::with_capacity(sizes.len());
    let mut remainders = Vec::with_capacity(sizes.len());
    for (c, &s) in sizes.iter().enumerate() {
        let q = cold_budget as u128 * s as u128;
        alloc.push((q / total) as usize);
        remainders.push((q % total, c));
    }
    let mut left = cold_budget - alloc.iter().sum::<usize>();
    remainders.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(alloc[a.1].cmp(&alloc[b.1]))
            .then(a.1.cmp(&b.1))
    });
    for &(_, c) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    Ok(alloc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub round: usize,
    pub cluster: usize,
    pub sample: usize,
    pub reward: f64,
}

/// Every draw of a bandit run, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawLog {
    pub rounds: Vec<DrawRecord>,
    pub per_cluster_draws: Vec<usize>,
    pub cold_start_rounds: usize,
}

impl DrawLog {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = usize> + '_ {
        self.rounds.iter().map(|r| r.sample)
    }

    /// One JSON object per round: `{round, cluster, sample_id, reward}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W, ids: &[String]) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            round: usize,
            cluster: usize,
            sample_id: &'a str,
            reward: f64,
        }
        for r in &self.rounds {
            let id = ids.get(r.sample).ok_or(Error::IndexOutOfRange {
                index: r.sample,
                len: ids.len(),
            })?;
            serde_json::to_writer(
                &mut w,
                &Line {
                    round: r.round,
                    cluster: r.cluster,
                    sample_id: id,
                    reward: r.reward,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the cold-start phase and then policy-driven draws until the budget is spent.
pub fn run_bandit(
    clusters: &Clustering,
    oracle: &dyn InfluenceSource,
    config: &BanditConfig,
) -> Result<DrawLog> {
    let n = clusters.len();
    if oracle.len() != n {
        return Err(Error::InconsistentInputs(format!(
            "clustering covers {n} samples but the influence source has {}",
            oracle.len()
        )));
    }
    config.validate(n)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut arms: Vec<ArmState> = clusters
        .all_members()
        .into_iter()
        .enumerate()
        .map(|(c, members)| ArmState::new(c, members, &mut rng))
        .collect();
    let mut run = Run {
        rounds: Vec::with_capacity(config.budget),
        pooled: Vec::with_capacity(config.budget),
        per_cluster: vec![0; arms.len()],
        oracle,
    };

    let cold = config.cold_start_budget();
    let alloc = cold_start_allocation(clusters.sizes(), cold)?;
    for (c, &draws) in alloc.iter().enumerate() {
        for _ in 0..draws {
            run.draw(&mut arms[c])?;
        }
    }

    let fraction = threshold_fraction(config.selection_ratio, n, config.budget);
    let mut scores = vec![0.0; arms.len()];
    let mut best: Vec<usize> = Vec::with_capacity(arms.len());
    while run.rounds.len() < config.budget {
        let chosen = if config.policy == Policy::RandomDraw {
            best.clear();
            best.extend((0..arms.len()).filter(|&c| !arms[c].is_exhausted()));
            best[rng.random_range(0..best.len())]
        } else {
            let threshold = if config.policy.uses_threshold() && !run.pooled.is_empty() {
                estimate_threshold(&run.pooled, fraction)?
            } else {
                0.0
            };
            let total = run.rounds.len();
            for (s, arm) in scores.iter_mut().zip(&arms) {
                *s = match config.policy {
                    Policy::UcbBeta => score_ucb_beta(arm, config.beta),
                    Policy::UcbTh => score_ucb_th(arm, threshold),
                    Policy::UcbTn => score_ucb_tn(arm, threshold),
                    Policy::Ucb1 => score_ucb1(arm, total),
                    Policy::RandomDraw => unreachable!(),
                };
            }
            argmax_random_tie(&arms, &scores, &mut best, &mut rng)
        };
        run.draw(&mut arms[chosen])?;
    }

    Ok(DrawLog {
        rounds: run.rounds,
        per_cluster_draws: run.per_cluster,
        cold_start_rounds: cold,
    })
}

struct Run<'o> {
    rounds: Vec<DrawRecord>,
    pooled: Vec<f64>,
    per_cluster: Vec<usize>,
    oracle: &'o dyn InfluenceSource,
}

impl Run<'_> {
    fn draw(&mut self, arm: &mut ArmState) -> Result<()> {
        let sample = arm
            .next_sample()
            .expect("arms are only drawn while members remain");
        let reward = self.oracle.influence(sample)?;
        arm.record(reward);
        self.pooled.push(reward);
        self.per_cluster[arm.cluster_id] += 1;
        self.rounds.push(DrawRecord {
            round: self.rounds.len(),
            cluster: arm.cluster_id,
            sample,
            reward,
        });
        Ok(())
    }
}

/// Highest-scoring non-exhausted arm; equal scores are broken uniformly at random.
fn argmax_random_tie(
    arms: &[ArmState],
    scores: &[f64],
    best: &mut Vec<usize>,
    rng: &mut impl Rng,
) -> usize {
    best.clear();
    let mut top = f64::NEG_INFINITY;
    for (c, arm) in arms.iter().enumerate() {
        if arm.is_exhausted() {
            continue;
        }
        let s = scores[c];
        if best.is_empty() || s > top {
            top = s;
            best.clear();
            best.push(c);
        } else if s == top {
            best.push(c);
        }
    }
    match best.len() {
        1 => best[0],
        len => best[rng.random_range(0..len)],
    }
}
