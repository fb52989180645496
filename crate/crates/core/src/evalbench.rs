//! Clustering accuracy metrics and the simulation benchmark.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{kmeans_metric, MetricKind};
use crate::error::{Error, Result};
use crate::ktensors::{self, Algorithm, CpcSolver, FitConfig};
use crate::seeding::derive_seed;
use crate::simgen::{generate, ScenarioConfig};

/// Largest `k` for which accuracy enumerates every label permutation.
pub const EXHAUSTIVE_MAX_K: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KtensorsLloyd,
    KtensorsFast,
    KtensorsHartigan,
    Euclidean,
    AffineInvariant,
    LogDet,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::KtensorsLloyd,
        Method::KtensorsFast,
        Method::KtensorsHartigan,
        Method::Euclidean,
        Method::AffineInvariant,
        Method::LogDet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::KtensorsLloyd => "ktensors_lloyd",
            Method::KtensorsFast => "ktensors_fast",
            Method::KtensorsHartigan => "ktensors_hartigan",
            Method::Euclidean => "euclidean",
            Method::AffineInvariant => "affine_invariant",
            Method::LogDet => "log_det",
        }
    }

    pub fn is_ktensors(self) -> bool {
        matches!(self, Method::KtensorsLloyd | Method::KtensorsFast | Method::KtensorsHartigan)
    }

    /// Stable stream id, independent of which methods a run selects.
    fn stream(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).expect("listed") as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Parse `all` or a comma-separated list of method names.
pub fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    if spec.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    Ok(out)
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    Ok(())
}

/// Fraction of agreeing labels under the best matching of predicted to true
/// labels.
pub fn accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= k) {
        return Err(Error::InvalidConfig(format!("label {bad} out of range for k = {k}")));
    }
    let mut confusion = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let matched = if k <= EXHAUSTIVE_MAX_K {
        best_permutation(&confusion)
    } else {
        let weights = Matrix::from_rows(confusion).map_err(|e| Error::Internal(e.to_string()))?;
        kuhn_munkres(&weights).0
    };
    Ok(matched as f64 / pred.len() as f64)
}

/// Maximum of `sum_j confusion[j][perm[j]]` over all permutations.
fn best_permutation(confusion: &[Vec<i64>]) -> i64 {
    fn go(row: usize, used: &mut [bool], confusion: &[Vec<i64>]) -> i64 {
        if row == confusion.len() {
            return 0;
        }
        let mut best = i64::MIN;
        for col in 0..confusion.len() {
            if !used[col] {
                used[col] = true;
                best = best.max(confusion[row][col] + go(row + 1, used, confusion));
                used[col] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; confusion.len()], confusion)
}

fn pairs(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index. Labels may be arbitrary non-negative integers.
/// When both partitions are trivial in the same way (the index is 0/0) the
/// result is 1.
pub fn adjusted_rand(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len();
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kt).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Fit settings shared by every method in a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Worker threads; 0 lets the pool decide. Results never depend on it.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            restarts: d.restarts,
            max_iter: d.max_iter,
            tol: d.tol,
            threads: 0,
        }
    }
}

/// One fit of one method on one simulated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub scenario_id: String,
    pub generator: String,
    pub noise_or_df: f64,
    pub method: Method,
    pub replication: usize,
    /// Seed of the simulated sample; the fit seed is derived from it and the method.
    pub seed: u64,
    /// NaN when the fit failed.
    pub accuracy: f64,
    pub ari: f64,
    pub loss: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    /// Empty on success.
    pub error: String,
}

struct FitOutcome {
    assignments: Vec<usize>,
    loss: f64,
    iterations: usize,
}

fn run_method(
    method: Method,
    matrices: &[crate::psd::PsdMatrix],
    k: usize,
    options: &BenchOptions,
    seed: u64,
) -> Result<FitOutcome> {
    let mut cfg = FitConfig {
        k,
        restarts: options.restarts,
        max_iter: options.max_iter,
        tol: options.tol,
        seed,
        ..FitConfig::default()
    };
    let metric = match method {
        Method::KtensorsLloyd | Method::KtensorsFast | Method::KtensorsHartigan => {
            (cfg.algorithm, cfg.cpc_solver) = match method {
                Method::KtensorsLloyd => (Algorithm::Lloyd, CpcSolver::Fg),
                Method::KtensorsFast => (Algorithm::Fast, CpcSolver::Fast),
                _ => (Algorithm::Hartigan, CpcSolver::Fast),
            };
            let model = ktensors::fit(matrices, &cfg)?;
            return Ok(FitOutcome {
                assignments: model.assignments,
                loss: model.loss,
                iterations: model.iterations,
            });
        }
        Method::Euclidean => MetricKind::Euclidean,
        Method::AffineInvariant => MetricKind::AffineInvariant,
        Method::LogDet => MetricKind::LogDet,
    };
    let model = kmeans_metric(matrices, k, metric, &cfg)?;
    Ok(FitOutcome {
        assignments: model.assignments,
        loss: model.loss,
        iterations: model.iterations,
    })
}

/// Seed of the sample for a (scenario, replication) cell.
pub fn replication_seed(master: u64, scenario: usize, replication: usize) -> u64 {
    derive_seed(master, &[scenario as u64, replication as u64])
}

fn run_cell(
    scenario_index: usize,
    scenario: &ScenarioConfig,
    replication: usize,
    methods: &[Method],
    options: &BenchOptions,
    master: u64,
) -> Vec<BenchmarkRecord> {
    let seed = replication_seed(master, scenario_index, replication);
    let config = ScenarioConfig {
        seed,
        ..scenario.clone()
    };
    let sample = generate(&config);
    methods
        .iter()
        .map(|&method| {
            let mut record = BenchmarkRecord {
                scenario_id: scenario.id.clone(),
                generator: scenario.generator.to_string(),
                noise_or_df: scenario.noise_or_df(),
                method,
                replication,
                seed,
                accuracy: f64::NAN,
                ari: f64::NAN,
                loss: f64::NAN,
                iterations: 0,
                runtime_ms: 0.0,
                error: String::new(),
            };
            let sample = match &sample {
                Ok(s) => s,
                Err(e) => {
                    record.error = format!("generation failed: {e}");
                    return record;
                }
            };
            let start = Instant::now();
            let outcome = run_method(
                method,
                &sample.matrices,
                config.k,
                options,
                derive_seed(seed, &[method.stream()]),
            )
            .and_then(|o| {
                let acc = accuracy(&o.assignments, &sample.labels, config.k)?;
                let ari = adjusted_rand(&o.assignments, &sample.labels)?;
                Ok((o, acc, ari))
            });
            record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok((o, acc, ari)) => {
                    record.accuracy = acc;
                    record.ari = ari;
                    record.loss = o.loss;
                    record.iterations = o.iterations;
                }
                Err(e) => record.error = e.to_string(),
            }
            record
        })
        .collect()
}

/// Run every method on `replications` samples of every scenario.
///
/// Records are ordered by scenario, then method (in the given order), then
/// replication, whatever the thread count. A failing fit yields a record with
/// a non-empty `error` and NaN metrics instead of aborting the sweep.
pub fn run_benchmark(
    grid: &[ScenarioConfig],
    methods: &[Method],
    replications: usize,
    seed: u64,
    options: &BenchOptions,
) -> Result<Vec<BenchmarkRecord>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty scenario grid".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    for s in grid {
        s.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|s| (0..replications).map(move |r| (s, r)))
        .collect();
    let work = || -> Vec<Vec<BenchmarkRecord>> {
        cells
            .par_iter()
            .map(|&(s, r)| run_cell(s, &grid[s], r, methods, options, seed))
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut records: Vec<(usize, usize, BenchmarkRecord)> = pool
        .install(work)
        .into_iter()
        .zip(&cells)
        .flat_map(|(recs, &(s, _))| {
            recs.into_iter().enumerate().map(move |(m, rec)| (s, m, rec))
        })
        .collect();
    records.sort_by_key(|(s, m, rec)| (*s, *m, rec.replication));
    Ok(records.into_iter().map(|(_, _, r)| r).collect())
}

/// Mean accuracy of one method on one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub noise_or_df: f64,
    pub method: Method,
    pub mean_accuracy: f64,
    /// Standard error of the mean (sample standard deviation over `sqrt(n)`).
    pub stderr: f64,
    pub n_reps: usize,
}

/// Per (scenario, method) means over successful records, in order of first
/// appearance.
pub fn summarize(records: &[BenchmarkRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut keys: Vec<(&str, Method, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(s, m, _)| *s == r.scenario_id && *m == r.method) {
            keys.push((&r.scenario_id, r.method, r.noise_or_df));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(scenario, method, noise_or_df)| {
            let acc: Vec<f64> = records
                .iter()
                .filter(|r| r.scenario_id == scenario && r.method == method && r.error.is_empty())
                .map(|r| r.accuracy)
                .collect();
            let n = acc.len();
            let mean = if n == 0 { f64::NAN } else { acc.iter().sum::<f64>() / n as f64 };
            let stderr = if n < 2 {
                0.0
            } else {
                let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            };
            SummaryRow {
                scenario_id: scenario.to_string(),
                noise_or_df,
                method,
                mean_accuracy: mean,
                stderr,
                n_reps: n,
            }
        })
        .collect())
}

fn write_metadata<W: Write>(out: &mut W, metadata: &[(String, String)]) -> Result<()> {
    for (key, value) in metadata {
        writeln!(out, "# {key}: {value}")?;
    }
    Ok(())
}

/// Results CSV preceded by `# key: value` metadata lines.
pub fn write_results_csv<W: Write>(
    mut out: W,
    records: &[BenchmarkRecord],
    metadata: &[(String, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(
    mut out: W,
    rows: &[SummaryRow],
    metadata: &[(String, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide table for plotting: one row per noise level (or df), one mean
/// accuracy column per method.
pub fn write_plot_csv<W: Write>(
    mut out: W,
    rows: &[SummaryRow],
    metadata: &[(String, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut methods: Vec<Method> = Vec::new();
    let mut xs: Vec<(&str, f64)> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !xs.iter().any(|(s, _)| *s == r.scenario_id) {
            xs.push((&r.scenario_id, r.noise_or_df));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["noise_or_df".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for (scenario, x) in xs {
        let mut line = vec![x.to_string()];
        for m in &methods {
            let cell = rows
                .iter()
                .find(|r| r.scenario_id == scenario && r.method == *m)
                .map_or(String::new(), |r| r.mean_accuracy.to_string());
            line.push(cell);
        }
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}
