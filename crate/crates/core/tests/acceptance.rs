//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p clusterucb --test acceptance`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clusterucb::bandit::{cold_start_allocation, floor_count, score_ucb_beta, ArmState};
use clusterucb::grdm;
use clusterucb::influence::PrecomputedInfluence;
use clusterucb::matrix::dot;
use clusterucb::pipeline::{evaluate, select};
use clusterucb::prelude::*;
use clusterucb::projection::random_project;
use clusterucb::synthgen::SynthPool;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided paired t statistic for `mean(a - b) > 0`.
fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return (m, if m > 0.0 { f64::INFINITY } else { 0.0 });
    }
    (m, m / (var / n).sqrt())
}

/// Student t 0.95 quantile with 9 degrees of freedom.
const T95_DF9: f64 = 1.833;

fn concentrated_pool() -> SynthPool {
    synthgen::generate(&SynthConfig {
        n_samples: 20_000,
        dim: 256,
        n_latent_clusters: 30,
        concentration: 20.0,
        n_val: 32,
        n_subtasks: 4,
        useful_cluster_fraction: 1.0 / 30.0,
        seed: 0,
    })
    .expect("pool")
}

fn truth_for(pool: &SynthPool, p: f64) -> GroundTruth {
    let cp = [Checkpoint {
        train: &pool.train,
        val: &pool.val,
    }];
    GroundTruth::new(full_influences(&cp).expect("influences"), p).expect("truth")
}

fn recall_run(
    pool: &SynthPool,
    clusters: &Clustering,
    truth: &GroundTruth,
    config: &BanditConfig,
) -> EvalReport {
    let oracle = LazyInfluenceOracle::new(&pool.train, &pool.val).expect("oracle");
    let run = select(clusters, &oracle, config).expect("select");
    evaluate(&run, clusters, truth).expect("evaluate")
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let pool = synthgen::generate(&SynthConfig {
        n_samples: 10_000,
        dim: 512,
        n_latent_clusters: 30,
        concentration: 20.0,
        n_val: 32,
        n_subtasks: 4,
        useful_cluster_fraction: 1.0 / 30.0,
        seed: 1,
    })
    .map_err(|e| e.to_string())?;
    let clusters = spherical_kmeans(&pool.train, &KMeansParams::new(150, 1)).map_err(|e| e.to_string())?;
    let truth = truth_for(&pool, 0.05);
    let config = BanditConfig::new(pool.train.rows(), 3);
    let report = recall_run(&pool, &clusters, &truth, &config);
    let elapsed = start.elapsed();
    ensure(report.r_sample == 1.0, format!("R_s = {}", report.r_sample))?;
    ensure(report.r_influence == 1.0, format!("R_inf = {}", report.r_influence))?;
    ensure(elapsed < Duration::from_secs(30), format!("runtime {elapsed:?}"))?;
    Ok(format!("R_s = 1, R_inf = 1 in {:.1}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Check {
    let pool = synthgen::generate(&SynthConfig {
        n_samples: 5_000,
        dim: 64,
        n_latent_clusters: 20,
        useful_cluster_fraction: 0.05,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let n = pool.train.rows();
    let clusters = spherical_kmeans(&pool.train, &KMeansParams::new(40, 0)).map_err(|e| e.to_string())?;
    let budget = floor_count(0.2 * n as f64);
    let mut counts = Vec::new();
    for policy in Policy::ALL {
        let oracle = LazyInfluenceOracle::new(&pool.train, &pool.val).map_err(|e| e.to_string())?;
        let mut cfg = BanditConfig::new(budget, 5);
        cfg.policy = policy;
        let log = run_bandit(&clusters, &oracle, &cfg).map_err(|e| e.to_string())?;
        ensure(
            oracle.evaluations() == budget && log.len() == budget,
            format!("{policy}: {} evaluations for budget {budget}", oracle.evaluations()),
        )?;
        counts.push(oracle.evaluations());
    }
    Ok(format!("evaluations {counts:?} == floor(0.2 N) = {budget} for every policy"))
}

fn criterion_3() -> Check {
    let pool = synthgen::generate(&SynthConfig {
        n_samples: 3_000,
        dim: 64,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (k, budget_ratio) in [(7usize, 0.2), (25, 0.1), (50, 0.33)] {
        let clusters = spherical_kmeans(&pool.train, &KMeansParams::new(k, 2)).map_err(|e| e.to_string())?;
        let budget = floor_count(budget_ratio * pool.train.rows() as f64);
        for policy in [Policy::UcbBeta, Policy::UcbTh, Policy::UcbTn, Policy::Ucb1] {
            let oracle = LazyInfluenceOracle::new(&pool.train, &pool.val).map_err(|e| e.to_string())?;
            let mut cfg = BanditConfig::new(budget, 9);
            cfg.cold_start_ratio = 1.0;
            cfg.policy = policy;
            let log = run_bandit(&clusters, &oracle, &cfg).map_err(|e| e.to_string())?;
            let expected = cold_start_allocation(clusters.sizes(), budget).map_err(|e| e.to_string())?;
            ensure(
                log.per_cluster_draws == expected,
                format!("k={k} {policy}: {:?} != {expected:?}", log.per_cluster_draws),
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} runs matched the largest-remainder allocation exactly"))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let pool = concentrated_pool();
    let n = pool.train.rows();
    let clusters = spherical_kmeans(&pool.train, &KMeansParams::new(50, 0)).map_err(|e| e.to_string())?;
    let truth = truth_for(&pool, 0.05);
    let mut means = Vec::new();
    for policy in Policy::ALL {
        let r_inf: Vec<f64> = (0..20)
            .map(|seed| {
                let mut cfg = BanditConfig::new(floor_count(0.2 * n as f64), seed);
                cfg.policy = policy;
                recall_run(&pool, &clusters, &truth, &cfg).r_influence
            })
            .collect();
        means.push((policy, mean(&r_inf)));
    }
    let get = |p: Policy| means.iter().find(|(q, _)| *q == p).unwrap().1;
    let (beta, random, ucb1) = (get(Policy::UcbBeta), get(Policy::RandomDraw), get(Policy::Ucb1));
    let elapsed = start.elapsed();
    let table = means
        .iter()
        .map(|(p, m)| format!("{p}={m:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(beta - random >= 0.15, format!("UCB_BETA - RANDOM_DRAW = {:.3}; {table}", beta - random))?;
    ensure(beta >= ucb1, format!("UCB_BETA < UCB1; {table}"))?;
    ensure(elapsed < Duration::from_secs(300), format!("runtime {elapsed:?}"))?;
    Ok(format!("mean R_inf {table} ({:.1}s)", elapsed.as_secs_f64()))
}

fn criterion_5() -> Check {
    use clusterucb::evaluation::{recall_influence, recall_sample};
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(5..200);
        let influences: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let pick = |rng: &mut ChaCha8Rng, size: usize| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..size {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(size);
            idx
        };
        let gt_size = rng.random_range(1..=n);
        let d_size = rng.random_range(0..=n);
        let gt = pick(&mut rng, gt_size);
        let d = pick(&mut rng, d_size);

        // brute force: nested scans and plain sums
        let hits = d.iter().filter(|i| gt.contains(i)).count();
        let rs_ref = hits as f64 / gt.len() as f64;
        let num: f64 = d.iter().map(|&i| influences[i]).sum();
        let den: f64 = gt.iter().map(|&i| influences[i]).sum();
        let rinf_ref = num / den;

        let rs = recall_sample(&d, &gt).map_err(|e| e.to_string())?;
        let rinf = recall_influence(&d, &gt, &influences.clone().into())
            .map_err(|e| e.to_string())?
            .ratio;
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
        worst = worst.max(rel(rs, rs_ref)).max(rel(rinf, rinf_ref));
    }
    ensure(worst <= 1e-12, format!("max relative error {worst:e}"))?;
    Ok(format!("1000 instances, max relative error {worst:e}"))
}

#[derive(Debug, Clone)]
struct BanditCase {
    assignments: Vec<usize>,
    k: usize,
    rewards: Vec<f64>,
    budget: usize,
    cold: f64,
    policy: Policy,
    seed: u64,
}

fn bandit_case() -> impl Strategy<Value = BanditCase> {
    (1usize..6)
        .prop_flat_map(|k| (Just(k), proptest::collection::vec(1usize..9, k)))
        .prop_flat_map(|(k, sizes)| {
            let n: usize = sizes.iter().sum();
            let assignments: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
                .collect();
            (
                Just(k),
                Just(assignments).prop_shuffle(),
                proptest::collection::vec(-1.0f64..1.0, n),
                1..=n,
                prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0],
                proptest::sample::select(Policy::ALL.to_vec()),
                any::<u64>(),
            )
        })
        .prop_map(|(k, assignments, rewards, budget, cold, policy, seed)| BanditCase {
            assignments,
            k,
            rewards,
            budget,
            cold,
            policy,
            seed,
        })
}

fn check_bandit_case(case: &BanditCase) -> Result<(), TestCaseError> {
    let clusters = Clustering::from_assignments(case.k, case.assignments.clone())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let n = case.assignments.len();
    let mut cfg = BanditConfig::new(case.budget, case.seed);
    cfg.cold_start_ratio = case.cold;
    cfg.policy = case.policy;
    let src = PrecomputedInfluence::new(case.rewards.clone().into());
    let log = run_bandit(&clusters, &src, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;

    prop_assert_eq!(log.len(), case.budget.min(n));
    let drawn: HashSet<usize> = log.samples().collect();
    prop_assert_eq!(drawn.len(), log.len());
    for (c, &b) in log.per_cluster_draws.iter().enumerate() {
        prop_assert!(b <= clusters.sizes()[c]);
    }
    prop_assert_eq!(log.per_cluster_draws.iter().sum::<usize>(), log.len());
    prop_assert_eq!(src.evaluations(), log.len());
    for r in &log.rounds {
        prop_assert_eq!(case.assignments[r.sample], r.cluster);
        prop_assert_eq!(r.reward, case.rewards[r.sample]);
    }

    let again = run_bandit(&clusters, &PrecomputedInfluence::new(case.rewards.clone().into()), &cfg)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&again, &log);

    // UCB-Beta formula against a two-pass mean / population deviation
    let history = &case.rewards[..case.rewards.len().min(1 + case.seed as usize % 8)];
    let arm = ArmState::from_history(0, history);
    let m = history.iter().sum::<f64>() / history.len() as f64;
    let sd = (history.iter().map(|x| (x - m).powi(2)).sum::<f64>() / history.len() as f64).sqrt();
    let beta = (case.seed % 7) as f64 * 0.5;
    prop_assert!((score_ucb_beta(&arm, beta) - (m + beta * sd)).abs() <= 1e-9);
    prop_assert!((arm.sum() - history.iter().sum::<f64>()).abs() <= 1e-9);
    Ok(())
}

fn criterion_6() -> Check {
    let cases = 10_000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&bandit_case(), |case| check_bandit_case(&case))
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} generated cases: conservation, no replacement, b_c <= |C_c|, determinism, UCB-Beta formula"))
}

fn criterion_7() -> Check {
    let mut runs = 0;
    for seed in 0..6u64 {
        let pool = synthgen::generate(&SynthConfig {
            n_samples: 120 + 70 * seed as usize,
            dim: 16,
            n_latent_clusters: 6,
            concentration: 2.0 + seed as f64,
            useful_cluster_fraction: 1.0 / 6.0,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let m = &pool.train;
        for k in [2usize, 5, 9, 17] {
            let params = KMeansParams {
                k,
                seed,
                max_iter: 10_000,
                tol: 0.0,
            };
            let c = spherical_kmeans(m, &params).map_err(|e| e.to_string())?;
            let hist = c.objective_history();
            for w in hist.windows(2) {
                ensure(
                    w[1] >= w[0] - 1e-9 * m.rows() as f64,
                    format!("objective decreased {} -> {} (seed {seed}, k {k})", w[0], w[1]),
                )?;
            }
            let mut covered = vec![0usize; m.rows()];
            for cl in 0..k {
                let members = c.members(cl).map_err(|e| e.to_string())?;
                ensure(members.len() == c.sizes()[cl] && !members.is_empty(), "size mismatch")?;
                members.iter().for_each(|&i| covered[i] += 1);
            }
            ensure(covered.iter().all(|&x| x == 1), "members do not partition the pool")?;
            for i in 0..m.rows() {
                let own = dot(m.row(i), c.centroid(c.assignments()[i]));
                for other in 0..k {
                    ensure(
                        dot(m.row(i), c.centroid(other)) <= own + 1e-12,
                        format!("moving point {i} to cluster {other} improves the objective"),
                    )?;
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} clusterings (N <= 470): monotone objective, partition, local optimality"))
}

fn projection_mae(m: &GradientMatrix, target: usize, seed: u64, pairs: usize) -> f64 {
    let p = random_project(m, target, seed).expect("projection");
    let cos = |g: &GradientMatrix, a: usize, b: usize| {
        let (x, y) = (g.row(a), g.row(b));
        dot(x, y) / (dot(x, x) * dot(y, y)).sqrt()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let a = rng.random_range(0..m.rows());
        let mut b = rng.random_range(0..m.rows());
        while b == a {
            b = rng.random_range(0..m.rows());
        }
        total += (cos(m, a, b) - cos(&p, a, b)).abs();
    }
    total / pairs as f64
}

fn criterion_8() -> Check {
    let pool = synthgen::generate(&SynthConfig {
        n_samples: 2_000,
        dim: 2048,
        n_latent_clusters: 10,
        concentration: 20.0,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mae = projection_mae(&pool.train, 256, 8, 1000);

    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let iso: Vec<f64> = (0..500 * 2048)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let iso = GradientMatrix::with_index_ids(500, 2048, iso).expect("matrix");
    let iso_mae = projection_mae(&iso, 256, 8, 1000);

    ensure(mae <= 0.05, format!("MAE {mae:.4} on gradient pool"))?;
    Ok(format!(
        "2048 -> 256 cosine MAE {mae:.4} on gradient pool (isotropic noise, not gated: {iso_mae:.4})"
    ))
}

fn criterion_9() -> Check {
    let pool = concentrated_pool();
    let n = pool.train.rows();
    let truth = truth_for(&pool, 0.05);
    let k50 = spherical_kmeans(&pool.train, &KMeansParams::new(50, 0)).map_err(|e| e.to_string())?;
    let k10 = spherical_kmeans(&pool.train, &KMeansParams::new(10, 0)).map_err(|e| e.to_string())?;
    let r_s = |clusters: &Clustering, cold: f64| -> Vec<f64> {
        (0..10)
            .map(|seed| {
                let mut cfg = BanditConfig::new(floor_count(0.2 * n as f64), seed);
                cfg.cold_start_ratio = cold;
                recall_run(&pool, clusters, &truth, &cfg).r_sample
            })
            .collect()
    };
    let base = r_s(&k50, 0.05);
    let none = r_s(&k50, 0.0);
    let full = r_s(&k50, 1.0);
    let coarse = r_s(&k10, 0.05);
    let (d0, t0) = paired_t(&base, &none);
    let (d100, t100) = paired_t(&base, &full);
    let (dk, tk) = paired_t(&base, &coarse);
    let summary = format!(
        "R_s(5%)={:.3} vs 0%: +{d0:.3} (t={t0:.2}), vs 100%: +{d100:.3} (t={t100:.2}), vs k=10: +{dk:.3} (t={tk:.2})",
        mean(&base)
    );
    ensure(t0 > T95_DF9 && t100 > T95_DF9 && tk > T95_DF9, summary.clone())?;
    Ok(summary)
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (rows, cols) = (37, 53);
    let mut values = Vec::with_capacity(rows * cols);
    while values.len() < rows * cols {
        let x = f32::from_bits(rng.random::<u32>());
        if x.is_finite() {
            values.push(x);
        }
    }
    let ids: Vec<String> = (0..rows).map(|i| format!("id-{}", rows - i)).collect();
    let m = GradientMatrix::new(ids.clone(), cols, values.iter().map(|&x| f64::from(x)).collect())
        .map_err(|e| e.to_string())?;
    let path = dir.path().join("m.grdm");
    grdm::save_gradients(&path, &m).map_err(|e| e.to_string())?;
    let back = grdm::load_gradients(&path).map_err(|e| e.to_string())?;
    ensure(back.ids() == ids.as_slice(), "ids reordered")?;
    let bits_equal = back
        .data()
        .iter()
        .zip(&values)
        .all(|(&a, &b)| (a as f32).to_bits() == b.to_bits());
    ensure(bits_equal, "values changed")?;
    let path2 = dir.path().join("m2.grdm");
    grdm::save_gradients(&path2, &back).map_err(|e| e.to_string())?;
    let (b1, b2) = (
        std::fs::read(&path).map_err(|e| e.to_string())?,
        std::fs::read(&path2).map_err(|e| e.to_string())?,
    );
    ensure(b1 == b2, "rewritten file differs")?;
    Ok(format!("{rows}x{cols} random-bit matrix: write -> read -> write byte-identical, ids in order"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("full-budget equivalence", criterion_1),
        ("budget frugality", criterion_2),
        ("cold-start degeneration", criterion_3),
        ("policy ordering", criterion_4),
        ("recall-metric correctness", criterion_5),
        ("bandit invariants", criterion_6),
        ("clustering properties", criterion_7),
        ("random projection", criterion_8),
        ("hyperparameter-sweep shapes", criterion_9),
        ("file-format round trip", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
