//! `clusterucb` command-line driver.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key = value` lines, then flags. Any key can also be set with
//! `--set key=value`.

mod commands;
mod config;
mod error;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "clusterucb", version, about = "Budgeted influence-based data selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic gradient pool (train.grdm, val.grdm and sidecars).
    Synth,
    /// Cluster training gradients with spherical k-means.
    Cluster,
    /// Run one budgeted selection; with --oracle also score it against brute force.
    Select,
    /// Mean recall per policy over several seeds (CSV).
    Compare,
    /// Mean recall over a grid of cold-start ratios, cluster counts or budgets (CSV).
    Sweep,
    /// Reuse one clustering with gradients from later checkpoints (CSV).
    Drift,
    /// Gaussian random projection of a gradient file.
    Project,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<String>,
    /// Compute brute-force ground truth and write report.json.
    #[arg(long, global = true)]
    oracle: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    train: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    val: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    clustering: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    /// Draw budget as a fraction of the pool (0.2 or 20%).
    #[arg(long, global = true)]
    budget_ratio: Option<String>,
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Comma-separated policy list for `compare`.
    #[arg(long, global = true)]
    policies: Option<String>,
    /// Number of seeds to average over.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Sweep axis: cold_start, k or budget.
    #[arg(long, global = true)]
    axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, global = true)]
    values: Option<String>,
    /// Comma-separated checkpoint gradient files for `drift`.
    #[arg(long, global = true)]
    checkpoints: Option<String>,
    #[arg(long, global = true)]
    checkpoint_vals: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    input: Option<String>,
    /// Output file name inside the output directory.
    #[arg(long, global = true)]
    output: Option<String>,
    #[arg(long, global = true)]
    target_dim: Option<String>,
    /// Any config key, e.g. `--set cold_start_ratio=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
            ("threads", &self.threads),
            ("train", &self.train),
            ("val", &self.val),
            ("clustering", &self.clustering),
            ("k", &self.k),
            ("budget_ratio", &self.budget_ratio),
            ("policy", &self.policy),
            ("policies", &self.policies),
            ("seeds", &self.seeds),
            ("axis", &self.axis),
            ("values", &self.values),
            ("checkpoints", &self.checkpoints),
            ("checkpoint_vals", &self.checkpoint_vals),
            ("input", &self.input),
            ("output", &self.output),
            ("target_dim", &self.target_dim),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.oracle {
            cfg.oracle = true;
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.common.resolve()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Cluster => commands::cluster(&cfg),
        Command::Select => commands::select_cmd(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Drift => commands::drift(&cfg),
        Command::Project => commands::project(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
