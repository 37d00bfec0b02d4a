use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clusterucb::bandit::BanditConfig;
use clusterucb::clustering::{load_clustering, save_clustering, spherical_kmeans, Clustering};
use clusterucb::evaluation::{drift_eval, EvalReport};
use clusterucb::grdm::{self, Sidecar};
use clusterucb::influence::{full_influences, Checkpoint, LazyInfluenceOracle};
use clusterucb::matrix::{GradientMatrix, ValidationSet};
use clusterucb::pipeline::{evaluate, select, GroundTruth};
use clusterucb::projection::random_project;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{display_name, parse_fraction, Axis, RunConfig};
use crate::error::{CliError, CliResult};

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::usage(format!("missing required setting `{key}`")))
}

fn load_train(path: &Path) -> CliResult<GradientMatrix> {
    Ok(grdm::load_gradients(path)?.normalize_rows()?)
}

fn load_val(path: &Path) -> CliResult<ValidationSet> {
    Ok(grdm::load_validation(path)?.normalize_rows()?)
}

fn load_clusters(path: &Path, pool: usize) -> CliResult<Clustering> {
    let c = load_clustering(path)?;
    if c.len() != pool {
        return Err(CliError::usage(format!(
            "clustering {} covers {} samples but the gradient file has {pool}",
            display_name(path),
            c.len()
        )));
    }
    Ok(c)
}

fn ground_truth(train: &GradientMatrix, val: &ValidationSet, ratio: f64) -> CliResult<GroundTruth> {
    let cp = [Checkpoint { train, val }];
    Ok(GroundTruth::new(full_influences(&cp)?, ratio)?)
}

fn run_once(
    train: &GradientMatrix,
    val: &ValidationSet,
    clusters: &Clustering,
    truth: &GroundTruth,
    config: &BanditConfig,
) -> CliResult<EvalReport> {
    let oracle = LazyInfluenceOracle::new(train, val)?;
    let run = select(clusters, &oracle, config)?;
    Ok(evaluate(&run, clusters, truth)?)
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: display_name(dir),
        source,
    })
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: display_name(path),
            source,
        })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(clusterucb::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: display_name(path),
        source,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: display_name(path),
        source,
    })?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let pool = clusterucb::synthgen::generate(&cfg.synth)?;
    prepare_dir(&cfg.out_dir)?;
    grdm::save_gradients(&cfg.out_dir.join("train.grdm"), &pool.train)?;
    grdm::save_validation(&cfg.out_dir.join("val.grdm"), &pool.val)?;
    write_json(
        &cfg.out_dir.join("latent.json"),
        &json!({
            "latent_labels": pool.latent_labels,
            "useful_clusters": pool.useful_clusters,
        }),
    )?;
    write_json(&cfg.out_dir.join("synth_config.json"), &cfg.synth)?;
    println!(
        "synth: {} training and {} validation vectors of dimension {}",
        pool.train.rows(),
        pool.val.grads().rows(),
        pool.train.dim()
    );
    Ok(())
}

pub fn cluster(cfg: &RunConfig) -> CliResult<()> {
    let train = load_train(require(&cfg.train, "train")?)?;
    let clusters = spherical_kmeans(&train, &cfg.cluster_params(cfg.k))?;
    prepare_dir(&cfg.out_dir)?;
    let name = cfg.output.as_deref().unwrap_or("clustering.json");
    save_clustering(&cfg.out_dir.join(name), &clusters)?;
    println!(
        "cluster: k = {}, {} iterations, objective {:.6}",
        clusters.k(),
        clusters.objective_history().len(),
        clusters.objective_history().last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn select_cmd(cfg: &RunConfig) -> CliResult<()> {
    let train = load_train(require(&cfg.train, "train")?)?;
    let val = load_val(require(&cfg.val, "val")?)?;
    let clusters = load_clusters(require(&cfg.clustering, "clustering")?, train.rows())?;
    let config = cfg.bandit(train.rows(), cfg.seed)?;

    let oracle = LazyInfluenceOracle::new(&train, &val)?;
    let run = select(&clusters, &oracle, &config)?;
    let report = if cfg.oracle {
        let truth = ground_truth(&train, &val, config.selection_ratio)?;
        let mut report = evaluate(&run, &clusters, &truth)?;
        report.metadata = cfg.echo().into_iter().collect();
        Some(report)
    } else {
        None
    };
    let record = run.selection.to_record(train.ids())?;

    prepare_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("selection.json"), &record)?;
    run.log.write_jsonl(create(&cfg.out_dir.join("drawlog.jsonl"))?, train.ids())?;
    write_json(
        &cfg.out_dir.join("summary.json"),
        &json!({
            "evaluations": run.evaluations,
            "draws": run.log.len(),
            "cold_start_rounds": run.log.cold_start_rounds,
            "per_cluster_draws": run.log.per_cluster_draws,
            "target_count": run.selection.target_count,
            "selected": run.selection.len(),
            "shortfall": run.selection.shortfall,
            "config": cfg.echo(),
        }),
    )?;
    match &report {
        Some(r) => {
            write_json(&cfg.out_dir.join("report.json"), r)?;
            println!(
                "select: {} draws, {} selected, R_s {:.4}, R_inf {:.4}",
                run.log.len(),
                run.selection.len(),
                r.r_sample,
                r.r_influence
            );
        }
        None => println!("select: {} draws, {} selected", run.log.len(), run.selection.len()),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareRow {
    policy: &'static str,
    runs: usize,
    mean_r_sample: f64,
    mean_r_influence: f64,
    sd_r_sample: f64,
    sd_r_influence: f64,
}

pub fn compare(cfg: &RunConfig) -> CliResult<()> {
    let train = load_train(require(&cfg.train, "train")?)?;
    let val = load_val(require(&cfg.val, "val")?)?;
    let clusters = load_clusters(require(&cfg.clustering, "clustering")?, train.rows())?;
    if cfg.policies.is_empty() {
        return Err(CliError::usage("policies must not be empty"));
    }
    let seeds = cfg.run_seeds()?;
    let mut jobs = Vec::new();
    for &policy in &cfg.policies {
        for &seed in &seeds {
            let mut c = cfg.bandit(train.rows(), seed)?;
            c.policy = policy;
            jobs.push(c);
        }
    }
    let truth = ground_truth(&train, &val, cfg.selection_ratio)?;
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|c| run_once(&train, &val, &clusters, &truth, c).map(|r| (r.r_sample, r.r_influence)))
        .collect::<CliResult<_>>()?;

    let rows: Vec<CompareRow> = cfg
        .policies
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(policy, chunk)| {
            let (rs, rinf): (Vec<f64>, Vec<f64>) = chunk.iter().copied().unzip();
            let ((mean_r_sample, sd_r_sample), (mean_r_influence, sd_r_influence)) = (mean_sd(&rs), mean_sd(&rinf));
            CompareRow {
                policy: policy.name(),
                runs: chunk.len(),
                mean_r_sample,
                mean_r_influence,
                sd_r_sample,
                sd_r_influence,
            }
        })
        .collect();
    prepare_dir(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(cfg.output.as_deref().unwrap_or("compare.csv")), &rows)?;
    for r in &rows {
        println!("{:<12} R_s {:.4}  R_inf {:.4}", r.policy, r.mean_r_sample, r.mean_r_influence);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    axis: &'static str,
    value: String,
    runs: usize,
    mean_r_sample: f64,
    mean_r_influence: f64,
    sd_r_sample: f64,
    sd_r_influence: f64,
}

pub fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let axis = cfg
        .axis
        .ok_or_else(|| CliError::usage("missing required setting `axis`"))?;
    if cfg.values.is_empty() {
        return Err(CliError::usage("missing required setting `values`"));
    }
    let train = load_train(require(&cfg.train, "train")?)?;
    let val = load_val(require(&cfg.val, "val")?)?;
    let seeds = cfg.run_seeds()?;

    // One (clustering, settings) pair per swept value.
    let mut points: Vec<(String, RunConfig)> = Vec::new();
    for raw in &cfg.values {
        let mut c = cfg.clone();
        let label = match axis {
            Axis::ColdStart => {
                c.cold_start_ratio = parse_fraction("values", raw)?;
                c.cold_start_ratio.to_string()
            }
            Axis::Budget => {
                c.budget = None;
                c.budget_ratio = parse_fraction("values", raw)?;
                c.budget_ratio.to_string()
            }
            Axis::K => {
                c.k = raw
                    .parse()
                    .map_err(|_| CliError::usage(format!("invalid k value {raw:?}")))?;
                c.k.to_string()
            }
        };
        c.bandit(train.rows(), c.seed)?;
        points.push((label, c));
    }
    let shared = match (axis, &cfg.clustering) {
        (Axis::K, _) => None,
        (_, Some(path)) => Some(load_clusters(path, train.rows())?),
        (_, None) => Some(spherical_kmeans(&train, &cfg.cluster_params(cfg.k))?),
    };
    let clusterings: Vec<Clustering> = match shared {
        Some(c) => vec![c],
        None => points
            .iter()
            .map(|(_, c)| spherical_kmeans(&train, &c.cluster_params(c.k)))
            .collect::<Result<_, _>>()?,
    };
    let truth = ground_truth(&train, &val, cfg.selection_ratio)?;

    let pool = train.rows();
    let mut jobs: Vec<(usize, BanditConfig)> = Vec::new();
    for (i, (_, c)) in points.iter().enumerate() {
        for &s in &seeds {
            jobs.push((i, c.bandit(pool, s)?));
        }
    }
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|(i, b)| {
            let clusters = &clusterings[if clusterings.len() == 1 { 0 } else { *i }];
            run_once(&train, &val, clusters, &truth, b).map(|r| (r.r_sample, r.r_influence))
        })
        .collect::<CliResult<_>>()?;

    let rows: Vec<SweepRow> = points
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|((label, _), chunk)| {
            let (rs, rinf): (Vec<f64>, Vec<f64>) = chunk.iter().copied().unzip();
            let ((mean_r_sample, sd_r_sample), (mean_r_influence, sd_r_influence)) = (mean_sd(&rs), mean_sd(&rinf));
            SweepRow {
                axis: axis.name(),
                value: label.clone(),
                runs: chunk.len(),
                mean_r_sample,
                mean_r_influence,
                sd_r_sample,
                sd_r_influence,
            }
        })
        .collect();
    prepare_dir(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(cfg.output.as_deref().unwrap_or("sweep.csv")), &rows)?;
    for r in &rows {
        println!("{}={:<8} R_s {:.4}  R_inf {:.4}", r.axis, r.value, r.mean_r_sample, r.mean_r_influence);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DriftRow {
    checkpoint: String,
    runs: usize,
    mean_r_sample: f64,
    mean_r_influence: f64,
}

pub fn drift(cfg: &RunConfig) -> CliResult<()> {
    let reference = grdm::load_gradients(require(&cfg.train, "train")?)?;
    let clusters = load_clusters(require(&cfg.clustering, "clustering")?, reference.rows())?;
    if cfg.checkpoints.is_empty() {
        return Err(CliError::usage("missing required setting `checkpoints`"));
    }
    let vals: Vec<&Path> = match cfg.checkpoint_vals.len() {
        0 => vec![require(&cfg.val, "val")?; cfg.checkpoints.len()],
        n if n == cfg.checkpoints.len() => cfg.checkpoint_vals.iter().map(PathBuf::as_path).collect(),
        n => {
            return Err(CliError::usage(format!(
                "{n} checkpoint_vals for {} checkpoints",
                cfg.checkpoints.len()
            )))
        }
    };
    let seeds = cfg.run_seeds()?;
    let configs: Vec<BanditConfig> = seeds
        .iter()
        .map(|&s| cfg.bandit(reference.rows(), s))
        .collect::<CliResult<_>>()?;

    // Load and check every checkpoint before computing anything.
    let mut inputs = Vec::with_capacity(cfg.checkpoints.len());
    for (path, val) in cfg.checkpoints.iter().zip(&vals) {
        let train = load_train(path)?;
        if train.ids() != reference.ids() {
            return Err(clusterucb::Error::IdMismatch.into());
        }
        inputs.push((display_name(path), train, load_val(val)?));
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for (name, train, val) in &inputs {
        let results: Vec<(f64, f64)> = configs
            .par_iter()
            .map(|c| {
                drift_eval(&clusters, reference.ids(), train, val, c)
                    .map(|r| (r.r_sample, r.r_influence))
                    .map_err(CliError::from)
            })
            .collect::<CliResult<_>>()?;
        let (rs, rinf): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
        rows.push(DriftRow {
            checkpoint: name.clone(),
            runs: rs.len(),
            mean_r_sample: mean_sd(&rs).0,
            mean_r_influence: mean_sd(&rinf).0,
        });
    }
    prepare_dir(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(cfg.output.as_deref().unwrap_or("drift.csv")), &rows)?;
    for r in &rows {
        println!("{:<24} R_s {:.4}  R_inf {:.4}", r.checkpoint, r.mean_r_sample, r.mean_r_influence);
    }
    Ok(())
}

fn read_sidecar(path: &Path) -> CliResult<Sidecar> {
    let side = grdm::sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|source| CliError::Io {
        path: display_name(&side),
        source,
    })?;
    Ok(serde_json::from_str(&text).map_err(clusterucb::Error::from)?)
}

pub fn project(cfg: &RunConfig) -> CliResult<()> {
    let input = cfg
        .input
        .as_deref()
        .or(cfg.train.as_deref())
        .ok_or_else(|| CliError::usage("missing required setting `input`"))?;
    let target = cfg
        .target_dim
        .ok_or_else(|| CliError::usage("missing required setting `target_dim`"))?;
    let seed = cfg.projection_seed.unwrap_or(cfg.seed);
    let name = match &cfg.output {
        Some(name) => name.clone(),
        None => {
            let stem = input.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
            format!("{stem}.proj{target}.grdm")
        }
    };
    let out = cfg.out_dir.join(name);

    if read_sidecar(input)?.subtask_labels.is_some() {
        let v = grdm::load_validation(input)?;
        let projected = random_project(v.grads(), target, seed)?;
        let v = ValidationSet::new(projected, v.labels().to_vec())?;
        prepare_dir(&cfg.out_dir)?;
        grdm::save_validation(&out, &v)?;
    } else {
        let projected = random_project(&grdm::load_gradients(input)?, target, seed)?;
        prepare_dir(&cfg.out_dir)?;
        grdm::save_gradients(&out, &projected)?;
    }
    println!("project: {} -> {} (dimension {target})", display_name(input), display_name(&out));
    Ok(())
}
