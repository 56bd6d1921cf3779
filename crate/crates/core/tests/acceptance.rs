//! Acceptance runner: one PASS/FAIL line per primary criterion. Runs
//! without the test harness so the lines come out in order and timing is not
//! disturbed by parallel tests. Exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use common::SuiteResult;
use delegation_cues::ingest::{parse_comparisons, write_comparisons, ComparisonRecord, Outcome, ParseMode};
use delegation_cues::matrix::Matrix;
use delegation_cues::pipeline::{
    assign_records, fit_clusters, run_pipeline, write_outputs, PipelineConfig, PipelineOutputs,
};
use delegation_cues::probes::features::{build_features_a, build_features_b, LayoutA, LayoutB, ModelIndex};
use delegation_cues::probes::logreg::{
    fit_multinomial_logreg, objective, predict_logreg, smooth_gradient, LogRegConfig, LogRegModel, Penalty,
};
use delegation_cues::probes::ridge::{fit_lasso, fit_ridge};
use delegation_cues::probes::{
    generate_synthetic_corpus, run_probe_a_with_clusters, run_probe_b_with_clusters, Family, ProbeConfig,
    SyntheticSpec,
};
use delegation_cues::tasktyping::{
    fit_kmeans, reassign_small_clusters, EmbeddingProvider, TaskTypingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DETERMINISM_RECORDS: usize = 10_000;
const DETERMINISM_K: usize = 30;
const DETERMINISM_BUDGET: Duration = Duration::from_secs(60);
const FD_TOLERANCE: f64 = 1e-4;
const FD_INSTANCES: u64 = 20;
const NORMAL_RESIDUAL_TOLERANCE: f64 = 1e-8;
const KMEANS_INSTANCES: u64 = 100;
const ABLATION_SEEDS: u64 = 20;
const ABLATION_RECORDS: usize = 5_000;
const ABLATION_K: usize = 10;
const ABLATION_BUDGET: Duration = Duration::from_secs(120);
const ABLATION_MIN_ACCURACY_GAIN: f64 = 0.10;
const ABLATION_MIN_MSE_REDUCTION: f64 = 0.20;
const ABLATION_MIN_SEED_SHARE: f64 = 0.95;
const ABLATION_NULL_TOLERANCE: f64 = 0.02;
const DELEGATION_SESSIONS: usize = 1_000;
const SERVICE_FLOWS: usize = 20;

// ---------------------------------------------------------------- determinism

fn pipeline_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        typing: TaskTypingConfig {
            cluster_count: DETERMINISM_K,
            seed,
            ..Default::default()
        },
        probe: ProbeConfig {
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Ingest from JSONL, then cluster, count and probe; write the artifacts.
fn end_to_end(jsonl: &[u8], dir: &Path, seed: u64) -> Result<(PipelineOutputs, Duration), String> {
    let start = Instant::now();
    let parsed = parse_comparisons(jsonl, ParseMode::Strict).map_err(|e| e.to_string())?;
    let out = run_pipeline(&parsed.records, &pipeline_config(seed)).map_err(|e| e.to_string())?;
    write_outputs(dir, &out).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

fn read_dir_sorted(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn determinism() -> SuiteResult {
    let seed = 7;
    let corpus = generate_synthetic_corpus(&SyntheticSpec::cluster_driven(DETERMINISM_RECORDS), seed)
        .map_err(|e| e.to_string())?;
    let mut jsonl = Vec::new();
    write_comparisons(&mut jsonl, &corpus.records).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("run1"), dir.path().join("run2"));
    let (out, t1) = end_to_end(&jsonl, &a, seed)?;
    let (_, t2) = end_to_end(&jsonl, &b, seed)?;
    let (fa, fb) = (read_dir_sorted(&a)?, read_dir_sorted(&b)?);
    ensure!(fa.len() == 4, "expected 4 artifacts, found {:?}", fa.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        ensure!(fb.get(name) == Some(bytes), "{name} differs between runs");
    }
    ensure!(t1 < DETERMINISM_BUDGET && t2 < DETERMINISM_BUDGET, "runs took {t1:.1?} and {t2:.1?}, budget {DETERMINISM_BUDGET:?}");
    if let Some(r) = out.probe_b.max_normal_residual {
        ensure!(r <= NORMAL_RESIDUAL_TOLERANCE, "pipeline ridge fits reached normal residual {r:e}");
    }
    let bytes: usize = fa.values().map(Vec::len).sum();
    Ok(format!(
        "{} records, K={}: 4 artifacts ({bytes} bytes) identical; runs {:.1?} and {:.1?} (budget {:?})",
        DETERMINISM_RECORDS, DETERMINISM_K, t1, t2, DETERMINISM_BUDGET
    ))
}

// ----------------------------------------------------------------- clustering

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn six_points() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [10.0, 10.0], [11.0, 10.0], [10.0, 12.0]]
}

/// Minimum within-cluster sum of squares over every 2-partition.
fn exhaustive_two_partition(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let mut total = 0.0;
        for side in [0, 1] {
            let members: Vec<&[f64; 2]> = (0..n).filter(|i| (mask >> i) & 1 == side).map(|i| &points[i]).collect();
            let m = members.len() as f64;
            let mean = [
                members.iter().map(|p| p[0]).sum::<f64>() / m,
                members.iter().map(|p| p[1]).sum::<f64>() / m,
            ];
            total += members.iter().map(|p| sq(&p[..], &mean)).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Matrix, usize) {
    let n = rng.random_range(12..=240);
    let d = rng.random_range(1..=6);
    let blobs = rng.random_range(1..=6);
    let centers: Vec<Vec<f64>> = (0..blobs).map(|_| (0..d).map(|_| rng.random_range(-8.0..8.0)).collect()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        // Some exact duplicates to stress seeding and empty clusters.
        if i > 0 && rng.random_bool(0.05) {
            rows.push(rows[rng.random_range(0..i)].clone());
            continue;
        }
        let c = &centers[rng.random_range(0..blobs)];
        rows.push(c.iter().map(|m| m + rng.random_range(-1.5..1.5)).collect());
    }
    let k = rng.random_range(1..=10.min(n));
    (Matrix::from_rows(&rows).unwrap(), k)
}

fn clustering() -> SuiteResult {
    // Lloyd objective never increases.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut iterations = 0;
    let mut min_sizes_checked = 0;
    for i in 0..KMEANS_INSTANCES {
        let (points, k) = random_instance(&mut rng);
        let fit = fit_kmeans(&points, k, i).map_err(|e| format!("instance {i}: {e}"))?;
        for (step, w) in fit.objective_history.windows(2).enumerate() {
            ensure!(w[1] <= w[0], "instance {i}: objective rose at step {step}: {} -> {}", w[0], w[1]);
        }
        let direct: f64 = (0..points.rows())
            .map(|r| sq(points.row(r), fit.centroids.row(fit.assignments[r])))
            .sum();
        let last = *fit.objective_history.last().ok_or("empty objective history")?;
        ensure!(
            (direct - last).abs() <= 1e-9 * direct.max(1.0),
            "instance {i}: reported objective {last} but assignments give {direct}"
        );
        iterations += fit.objective_history.len();

        // Post-reassignment sizes on the same instance.
        let delta = rng.random_range(1..=(points.rows() / k).max(1));
        if let Ok(re) = reassign_small_clusters(&fit.centroids, &fit.assignments, delta) {
            let mut sizes = vec![0usize; k];
            re.assignments.iter().for_each(|&c| sizes[c] += 1);
            for (c, &s) in sizes.iter().enumerate() {
                ensure!(s == 0 || s >= delta, "instance {i}: cluster {c} has {s} < δ={delta} members");
                ensure!(s == 0 || re.surviving[c], "instance {i}: retired cluster {c} still has members");
            }
            min_sizes_checked += 1;
        }
    }

    // The six-point fixture.
    let six = six_points();
    let optimum = exhaustive_two_partition(&six);
    let pts = Matrix::from_rows(&six.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
    for seed in 0..20 {
        let fit = fit_kmeans(&pts, 2, seed).map_err(|e| e.to_string())?;
        let got: f64 = (0..6).map(|r| sq(pts.row(r), fit.centroids.row(fit.assignments[r]))).sum();
        ensure!((got - optimum).abs() <= 1e-12, "seed {seed}: objective {got}, exhaustive optimum {optimum}");
    }

    // Fitted task models on synthetic corpora.
    for (seed, records, k) in [(1u64, 600, 30), (2, 1500, 30), (3, 400, 12)] {
        let corpus = generate_synthetic_corpus(&SyntheticSpec::cluster_driven(records), seed).map_err(|e| e.to_string())?;
        let typing = TaskTypingConfig {
            cluster_count: k,
            seed,
            ..Default::default()
        };
        let fit = fit_clusters(&corpus.records, &EmbeddingProvider::hash(64, seed), &typing, false).map_err(|e| e.to_string())?;
        let delta = fit.model.min_cluster_size;
        let mut sizes = vec![0usize; k];
        fit.assignments.iter().for_each(|&c| sizes[c] += 1);
        for c in fit.model.surviving_clusters() {
            ensure!(sizes[c] >= delta, "corpus {seed}: surviving cluster {c} has {} < δ={delta}", sizes[c]);
        }
        ensure!(
            fit.model.reassignment_map.keys().all(|&c| sizes[c] == 0),
            "corpus {seed}: a retired cluster kept members"
        );
        min_sizes_checked += 1;
    }

    Ok(format!(
        "{KMEANS_INSTANCES} instances non-increasing over {iterations} steps; six-point fixture hits optimum {optimum:.6} on 20 seeds; size floor held on {min_sizes_checked} fixtures"
    ))
}

// -------------------------------------------------------------------- solvers

fn random_model(rng: &mut ChaCha8Rng, p: usize, k: usize) -> LogRegModel {
    let mut m = LogRegModel::zeros(p, k);
    m.weights.apply(|v| *v = rng.random_range(-1.0..1.0));
    m.intercepts.apply(|v| *v = rng.random_range(-1.0..1.0));
    m
}

fn solvers() -> SuiteResult {
    // Central differences against the analytic gradient.
    let mut worst = 0.0f64;
    let mut coords = 0;
    for i in 0..FD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
        let (n, p, k) = (rng.random_range(20..120), rng.random_range(1..9), rng.random_range(2..6));
        // Mix dense and mostly-zero columns, as in the probe features.
        let data: Vec<f64> = (0..n * p)
            .map(|j| if j % p == 0 && rng.random_bool(0.8) { 0.0 } else { rng.random_range(-2.0..2.0) })
            .collect();
        let x = Matrix::from_row_major(n, p, data);
        let y: Vec<usize> = (0..n).map(|r| r % k).collect();
        let cfg = LogRegConfig {
            penalty: if i % 2 == 0 { Penalty::None } else { Penalty::L2 },
            lambda: rng.random_range(0.0..1.0),
            ..Default::default()
        };
        let m = random_model(&mut rng, p, k);
        let (gw, gb) = smooth_gradient(&x, &y, &m, &cfg);
        let h = 1e-5;
        for idx in 0..p * k + k {
            let (mut plus, mut minus) = (m.clone(), m.clone());
            let analytic = if idx < p * k {
                plus.weights[idx] += h;
                minus.weights[idx] -= h;
                gw[idx]
            } else {
                plus.intercepts[idx - p * k] += h;
                minus.intercepts[idx - p * k] -= h;
                gb[idx - p * k]
            };
            let fd = (objective(&x, &y, &plus, &cfg) - objective(&x, &y, &minus, &cfg)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            ensure!(rel <= FD_TOLERANCE, "instance {i} coordinate {idx}: analytic {analytic}, differences {fd} (rel {rel:e})");
            worst = worst.max(rel);
            coords += 1;
        }
    }

    // Normal-equation residual recomputed here from the returned weights.
    let mut fits = 0;
    let mut worst_residual = 0.0f64;
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
        let (n, p) = (rng.random_range(10..200), rng.random_range(1..12));
        let mut data: Vec<f64> = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        if i % 4 == 0 && p > 1 {
            // Duplicate column: singular Gram matrix at λ = 0.
            for r in 0..n {
                data[r * p + 1] = data[r * p];
            }
        }
        let x = Matrix::from_row_major(n, p, data);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0, 1e4] {
            let m = fit_ridge(&x, &y, lambda).map_err(|e| e.to_string())?;
            let r = normal_residual(&x, &y, &m.weights, lambda);
            let reported = m.normal_residual.unwrap_or(f64::INFINITY);
            ensure!(
                r <= NORMAL_RESIDUAL_TOLERANCE && reported <= NORMAL_RESIDUAL_TOLERANCE,
                "instance {i} λ={lambda}: residual {r:e} (reported {reported:e})"
            );
            worst_residual = worst_residual.max(r);
            fits += 1;
        }
    }

    // Shrinkage limits.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, p) = (80, 5);
    let x = Matrix::from_row_major(n, p, (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let ridge = fit_ridge(&x, &y, 1e14).map_err(|e| e.to_string())?;
    ensure!(ridge.weight_norm() < 1e-10, "ridge at huge λ keeps weight norm {}", ridge.weight_norm());
    ensure!((ridge.intercept - mean).abs() < 1e-9, "ridge intercept {} vs mean {mean}", ridge.intercept);
    let lasso = fit_lasso(&x, &y, 1e6).map_err(|e| e.to_string())?;
    ensure!(lasso.weights.iter().all(|w| *w == 0.0), "lasso at huge λ kept non-zero weights");
    ensure!((lasso.intercept - mean).abs() < 1e-12, "lasso intercept {} vs mean {mean}", lasso.intercept);
    let mut last = f64::INFINITY;
    for lambda in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1e3, 1e6] {
        let norm = fit_ridge(&x, &y, lambda).map_err(|e| e.to_string())?.weight_norm();
        ensure!(norm <= last + 1e-12, "ridge norm grew from {last} to {norm} at λ={lambda}");
        last = norm;
    }
    let labels: Vec<usize> = (0..n).map(|i| if i < 40 { 2 } else { i % 3 }).collect();
    let majority = 2;
    let cfg = LogRegConfig {
        penalty: Penalty::L1,
        lambda: 1e3,
        max_iters: 2000,
        ..Default::default()
    };
    let lr = fit_multinomial_logreg(&x, &labels, 3, &cfg).map_err(|e| e.to_string())?;
    ensure!(lr.weights.iter().all(|w| *w == 0.0), "L1 logistic at huge λ kept non-zero weights");
    let (pred, _) = predict_logreg(&lr, &x).map_err(|e| e.to_string())?;
    ensure!(pred.iter().all(|&c| c == majority), "L1 logistic at huge λ does not predict the majority class");

    Ok(format!(
        "{coords} gradient coordinates on {FD_INSTANCES} instances, worst rel {worst:.1e}; {fits} ridge fits, worst residual {worst_residual:.1e}; λ→∞ limits hold"
    ))
}

/// `max |(XᶜᵀXᶜ + λI)w − Xᶜᵀyᶜ|` with plain loops.
fn normal_residual(x: &Matrix, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let (n, p) = (x.rows(), x.cols());
    let xm: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let fitted: Vec<f64> = (0..n).map(|i| (0..p).map(|j| (x.get(i, j) - xm[j]) * w[j]).sum()).collect();
    (0..p)
        .map(|j| {
            let g: f64 = (0..n).map(|i| (x.get(i, j) - xm[j]) * fitted[i]).sum::<f64>() + lambda * w[j];
            let rhs: f64 = (0..n).map(|i| (x.get(i, j) - xm[j]) * (y[i] - ym)).sum();
            (g - rhs).abs()
        })
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------------- ablation

#[derive(Debug, Clone, Copy)]
struct SeedOutcome {
    seed: u64,
    driven_acc_gain: f64,
    driven_mse_reduction: f64,
    free_acc_delta: f64,
    free_mse_delta: f64,
    max_residual: f64,
}

fn ablation_for_seed(seed: u64) -> Result<SeedOutcome, String> {
    let mut deltas = Vec::new();
    let mut max_residual = 0.0f64;
    for spec in [SyntheticSpec::cluster_driven(ABLATION_RECORDS), SyntheticSpec::cluster_free(ABLATION_RECORDS)] {
        let corpus = generate_synthetic_corpus(&spec, seed).map_err(|e| e.to_string())?;
        let typing = TaskTypingConfig {
            cluster_count: ABLATION_K,
            seed,
            ..Default::default()
        };
        let fit = fit_clusters(&corpus.records, &EmbeddingProvider::hash(384, seed), &typing, false)
            .map_err(|e| e.to_string())?;
        let clusters = assign_records(&corpus.records, &fit.model, false).map_err(|e| e.to_string())?;
        let cfg = ProbeConfig {
            families: vec![Family::Ridge],
            seed,
            ..Default::default()
        };
        let a = run_probe_a_with_clusters(&corpus.records, &clusters, ABLATION_K, &cfg).map_err(|e| e.to_string())?;
        let b = run_probe_b_with_clusters(&corpus.records, &clusters, ABLATION_K, &cfg).map_err(|e| e.to_string())?;
        let (aa, ba) = (a.ablation.ok_or("no task A ablation")?, b.ablation.ok_or("no task B ablation")?);
        max_residual = max_residual.max(b.max_normal_residual.unwrap_or(0.0));
        deltas.push((aa.with_cluster, aa.without_cluster, ba.with_cluster, ba.without_cluster));
    }
    let (d, f) = (deltas[0], deltas[1]);
    Ok(SeedOutcome {
        seed,
        driven_acc_gain: d.0 - d.1,
        driven_mse_reduction: (d.3 - d.2) / d.3,
        free_acc_delta: f.0 - f.1,
        free_mse_delta: f.2 - f.3,
        max_residual,
    })
}

fn ablation() -> SuiteResult {
    let start = Instant::now();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(ABLATION_SEEDS as usize);
    let seeds: Vec<u64> = (0..ABLATION_SEEDS).collect();
    let mut outcomes: Vec<SeedOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(seeds.len().div_ceil(threads))
            .map(|chunk| s.spawn(move || chunk.iter().map(|&seed| ablation_for_seed(seed)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("ablation worker panicked")).collect::<Result<_, _>>()
    })?;
    let elapsed = start.elapsed();
    outcomes.sort_by_key(|o| o.seed);

    let passing = outcomes
        .iter()
        .filter(|o| o.driven_acc_gain >= ABLATION_MIN_ACCURACY_GAIN && o.driven_mse_reduction >= ABLATION_MIN_MSE_REDUCTION)
        .count();
    let share = passing as f64 / outcomes.len() as f64;
    let worst_null = outcomes
        .iter()
        .map(|o| o.free_acc_delta.abs().max(o.free_mse_delta.abs()))
        .fold(0.0, f64::max);
    let min_gain = outcomes.iter().map(|o| o.driven_acc_gain).fold(f64::INFINITY, f64::min);
    let min_red = outcomes.iter().map(|o| o.driven_mse_reduction).fold(f64::INFINITY, f64::min);
    let residual = outcomes.iter().map(|o| o.max_residual).fold(0.0, f64::max);
    let summary = format!(
        "{passing}/{} seeds meet +{ABLATION_MIN_ACCURACY_GAIN} acc and -{:.0}% MSE (min gain {min_gain:.3}, min reduction {:.1}%); cluster-free max |Δ| {worst_null:.4}; {:.1?} on {threads} thread(s), budget {ABLATION_BUDGET:?}",
        outcomes.len(),
        ABLATION_MIN_MSE_REDUCTION * 100.0,
        min_red * 100.0,
        elapsed
    );
    ensure!(share >= ABLATION_MIN_SEED_SHARE, "{summary}");
    ensure!(worst_null <= ABLATION_NULL_TOLERANCE, "{summary}");
    ensure!(residual <= NORMAL_RESIDUAL_TOLERANCE, "ridge residual {residual:e}; {summary}");
    ensure!(elapsed < ABLATION_BUDGET, "over budget: {summary}");
    Ok(summary)
}

// ------------------------------------------------------------ feature widths

fn feature_dimensions() -> SuiteResult {
    let models = ModelIndex::new((0..20).map(|i| format!("model-{i:02}")));
    let record = ComparisonRecord::new("r", "a prompt", "model-03", "model-17", Outcome::Tie)
        .and_then(|r| r.with_response_diff(vec![0.5; 256]))
        .map_err(|e| e.to_string())?;
    let a = build_features_a(&record, &models, 29, 30).map_err(|e| e.to_string())?;
    let b = build_features_b(&record, 29, 30).map_err(|e| e.to_string())?;
    let (la, lb) = (LayoutA { models: 20, clusters: 30, diff: 256 }.width(), LayoutB { clusters: 30 }.width());
    ensure!(a.len() == 326 && la == 326, "task A width {} (layout {la}), expected 326", a.len());
    ensure!(b.len() == 36 && lb == 36, "task B width {} (layout {lb}), expected 36", b.len());
    ensure!(a.iter().take(70).filter(|v| **v == 1.0).count() == 3, "task A one-hot blocks are not one-hot");
    Ok("task A 326, task B 36".into())
}

// ----------------------------------------------------------------- delegation

fn delegation() -> SuiteResult {
    let sessions = common::delegation_suite::suite(DELEGATION_SESSIONS, 20260101)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = common::log_suite::suite(dir.path(), 200, 31)?;
    Ok(format!("{sessions}; log: {log}"))
}

fn service() -> SuiteResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::service_suite::suite(dir.path(), SERVICE_FLOWS, 42)
}

fn main() {
    let criteria: [(&str, fn() -> SuiteResult); 8] = [
        ("pipeline determinism", determinism),
        ("signal correctness", common::signals_suite::suite),
        ("clustering", clustering),
        ("solvers", solvers),
        ("probe ablation", ablation),
        ("feature dimensions", feature_dimensions),
        ("delegation protocol", delegation),
        ("service transparency", service),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(summary) => println!("PASS  {name:<22} {summary} [{:.1?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<22} {why} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
