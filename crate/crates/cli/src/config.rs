//! Run configuration: defaults, a flat `key = value` file, then command-line overrides.
//!
//! File syntax: one `key = value` per line, `#` starts a comment, blank lines
//! are ignored. Later assignments win, so flags (applied after the file)
//! override file values.

use std::path::{Path, PathBuf};

use clusterucb::bandit::{floor_count, BanditConfig, Policy};
use clusterucb::clustering::KMeansParams;
use clusterucb::synthgen::SynthConfig;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "train",
    "val",
    "clustering",
    "input",
    "output",
    "out_dir",
    "checkpoints",
    "checkpoint_vals",
    "k",
    "max_iter",
    "tol",
    "cluster_seed",
    "budget",
    "budget_ratio",
    "cold_start_ratio",
    "selection_ratio",
    "beta",
    "policy",
    "policies",
    "seed",
    "seeds",
    "axis",
    "values",
    "target_dim",
    "projection_seed",
    "oracle",
    "threads",
    "n_samples",
    "dim",
    "n_latent_clusters",
    "concentration",
    "n_val",
    "n_subtasks",
    "useful_cluster_fraction",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    ColdStart,
    K,
    Budget,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::ColdStart => "cold_start",
            Axis::K => "k",
            Axis::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub clustering: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<String>,
    pub out_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub checkpoint_vals: Vec<PathBuf>,

    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub cluster_seed: Option<u64>,

    /// Absolute draw count; overrides `budget_ratio` when set.
    pub budget: Option<usize>,
    pub budget_ratio: f64,
    pub cold_start_ratio: f64,
    pub selection_ratio: f64,
    pub beta: f64,
    pub policy: Policy,
    pub policies: Vec<Policy>,
    pub seed: u64,
    /// Repetitions for compare, sweep and drift: seeds `seed .. seed + seeds`.
    pub seeds: usize,

    pub axis: Option<Axis>,
    pub values: Vec<String>,

    pub target_dim: Option<usize>,
    pub projection_seed: Option<u64>,

    pub oracle: bool,
    pub threads: Option<usize>,

    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            clustering: None,
            input: None,
            output: None,
            out_dir: PathBuf::from("."),
            checkpoints: Vec::new(),
            checkpoint_vals: Vec::new(),
            k: 150,
            max_iter: 100,
            tol: 1e-6,
            cluster_seed: None,
            budget: None,
            budget_ratio: 0.2,
            cold_start_ratio: 0.05,
            selection_ratio: 0.05,
            beta: 1.0,
            policy: Policy::UcbBeta,
            policies: Policy::ALL.to_vec(),
            seed: 0,
            seeds: 1,
            axis: None,
            values: Vec::new(),
            target_dim: None,
            projection_seed: None,
            oracle: false,
            threads: None,
            synth: SynthConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("invalid value {value:?} for {key}: {why}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

/// `0.05` or `5%`.
pub fn parse_fraction(key: &str, value: &str) -> CliResult<f64> {
    let x = match value.strip_suffix('%') {
        Some(pct) => parse::<f64>(key, pct.trim())? / 100.0,
        None => parse::<f64>(key, value)?,
    };
    if !(0.0..=1.0).contains(&x) {
        return Err(bad(key, value, "must lie in [0, 1]"));
    }
    Ok(x)
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key {
            "train" => self.train = Some(value.into()),
            "val" => self.val = Some(value.into()),
            "clustering" => self.clustering = Some(value.into()),
            "input" => self.input = Some(value.into()),
            "output" => self.output = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "checkpoints" => self.checkpoints = list(value).into_iter().map(PathBuf::from).collect(),
            "checkpoint_vals" => {
                self.checkpoint_vals = list(value).into_iter().map(PathBuf::from).collect()
            }
            "k" => self.k = parse(key, value)?,
            "max_iter" => self.max_iter = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "cluster_seed" => self.cluster_seed = Some(parse(key, value)?),
            "budget" => self.budget = Some(parse(key, value)?),
            "budget_ratio" => self.budget_ratio = parse_fraction(key, value)?,
            "cold_start_ratio" => self.cold_start_ratio = parse_fraction(key, value)?,
            "selection_ratio" => self.selection_ratio = parse_fraction(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "policy" => self.policy = parse(key, value)?,
            "policies" => {
                self.policies = list(value)
                    .iter()
                    .map(|p| parse(key, p))
                    .collect::<CliResult<_>>()?
            }
            "seed" => {
                self.seed = parse(key, value)?;
                self.synth.seed = self.seed;
            }
            "seeds" => self.seeds = parse(key, value)?,
            "axis" => {
                self.axis = Some(match value {
                    "cold_start" => Axis::ColdStart,
                    "k" => Axis::K,
                    "budget" => Axis::Budget,
                    _ => return Err(bad(key, value, "expected cold_start, k or budget")),
                })
            }
            "values" => self.values = list(value),
            "target_dim" => self.target_dim = Some(parse(key, value)?),
            "projection_seed" => self.projection_seed = Some(parse(key, value)?),
            "oracle" => self.oracle = parse_bool(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "n_samples" => self.synth.n_samples = parse(key, value)?,
            "dim" => self.synth.dim = parse(key, value)?,
            "n_latent_clusters" => self.synth.n_latent_clusters = parse(key, value)?,
            "concentration" => self.synth.concentration = parse(key, value)?,
            "n_val" => self.synth.n_val = parse(key, value)?,
            "n_subtasks" => self.synth.n_subtasks = parse(key, value)?,
            "useful_cluster_fraction" => {
                self.synth.useful_cluster_fraction = parse_fraction(key, value)?
            }
            _ => {
                return Err(CliError::usage(format!(
                    "unknown config key {key:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: display_name(path),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn cluster_params(&self, k: usize) -> KMeansParams {
        KMeansParams {
            k,
            seed: self.cluster_seed.unwrap_or(self.seed),
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn draw_budget(&self, pool: usize) -> usize {
        self.budget
            .unwrap_or_else(|| floor_count(self.budget_ratio * pool as f64))
    }

    pub fn bandit(&self, pool: usize, seed: u64) -> CliResult<BanditConfig> {
        let cfg = BanditConfig {
            budget: self.draw_budget(pool),
            cold_start_ratio: self.cold_start_ratio,
            selection_ratio: self.selection_ratio,
            beta: self.beta,
            policy: self.policy,
            seed,
        };
        cfg.validate(pool)?;
        Ok(cfg)
    }

    pub fn run_seeds(&self) -> CliResult<Vec<u64>> {
        if self.seeds == 0 {
            return Err(CliError::usage("seeds must be at least 1"));
        }
        Ok((0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect())
    }

    /// Effective settings for reports; paths are reduced to file names.
    pub fn echo(&self) -> Map<String, Value> {
        let name = |p: &Option<PathBuf>| p.as_deref().map(display_name);
        let mut m = Map::new();
        m.insert("train".into(), json!(name(&self.train)));
        m.insert("val".into(), json!(name(&self.val)));
        m.insert("clustering".into(), json!(name(&self.clustering)));
        m.insert("budget".into(), json!(self.budget));
        m.insert("budget_ratio".into(), json!(self.budget_ratio));
        m.insert("cold_start_ratio".into(), json!(self.cold_start_ratio));
        m.insert("selection_ratio".into(), json!(self.selection_ratio));
        m.insert("beta".into(), json!(self.beta));
        m.insert("policy".into(), json!(self.policy.name()));
        m.insert("seed".into(), json!(self.seed));
        m
    }
}

/// File name only, so reports never carry absolute paths.
pub fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}
