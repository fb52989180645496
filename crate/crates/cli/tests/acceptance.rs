//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the report is always
//! printed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ktensors_core::baselines::{dist_affine_invariant, dist_euclidean, dist_logdet, DEFAULT_RIDGE};
use ktensors_core::cpc::{fast_cpc, fg_cpc_default, frame_angle};
use ktensors_core::evalbench::{accuracy, run_benchmark, summarize, BenchOptions, Method, SummaryRow};
use ktensors_core::ktensors::{fit, fit_fast, fit_hartigan, fit_lloyd, Algorithm, CpcSolver, FitConfig};
use ktensors_core::projection::{project, projection_index};
use ktensors_core::psd::{random_orthonormal, random_psd, OrthonormalFrame, PsdMatrix};
use ktensors_core::seeding::{derive_seed, rng_from_seed};
use ktensors_core::simgen::{generate, sample_wishart, scenario_grid, GridKind, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

// 1 ---------------------------------------------------------------------

/// `||psi - B diag(lambda) B^T||_F^2`, evaluated directly.
fn reconstruction_error(psi: &DMatrix<f64>, b: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    (psi - b * d * b.transpose()).norm_squared()
}

/// Coordinate-wise minimisation over `lambda >= 0`: bisection on the sign of
/// a central-difference derivative, cycled until no coordinate moves.
fn numeric_index(psi: &PsdMatrix, b: &OrthonormalFrame) -> Vec<f64> {
    let (psi, b) = (psi.as_matrix(), b.as_matrix());
    let p = psi.nrows();
    let upper = psi.norm() + 1.0;
    let h = 1e-4;
    let mut lambda = vec![0.0; p];
    for _ in 0..10 {
        let before = lambda.clone();
        for j in 0..p {
            let slope = |x: f64, lambda: &mut Vec<f64>| {
                lambda[j] = x + h;
                let hi = reconstruction_error(psi, b, lambda);
                lambda[j] = x - h;
                let lo = reconstruction_error(psi, b, lambda);
                (hi - lo) / (2.0 * h)
            };
            let (mut lo, mut hi) = (0.0, upper);
            if slope(0.0, &mut lambda) >= 0.0 {
                hi = 0.0;
            }
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if slope(mid, &mut lambda) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lambda[j] = 0.5 * (lo + hi);
        }
        if before.iter().zip(&lambda).all(|(a, b)| (a - b).abs() < 1e-12) {
            break;
        }
    }
    lambda
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let p = [2, 3, 5][i % 3];
        let psi = random_psd(p, 0.0, 5.0, &mut rng).unwrap();
        let b = random_orthonormal(p, &mut rng);
        let closed = projection_index(&psi, &b).unwrap();
        let numeric = numeric_index(&psi, &b);
        for (a, n) in closed.values().iter().zip(&numeric) {
            worst = worst.max((a - n).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("projection index vs numeric minimisation, 200 pairs: max |diff| {worst:.2e} (tol 1e-6), {secs:.2} s (limit 10 s)"),
    )
}

// 2 ---------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(202);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.random_range(2..=6);
        let psi = random_psd(p, 0.0, 10.0, &mut rng).unwrap();
        let b = random_orthonormal(p, &mut rng);
        let r = project(&psi, &b).unwrap();
        let total = psi.as_matrix().norm_squared();
        let lhs = r.residual * r.residual + r.index.norm().powi(2);
        worst = worst.max((lhs - total).abs() / total.max(f64::MIN_POSITIVE));
    }
    outcome(
        worst <= 1e-8,
        format!("residual^2 + ||index||^2 = ||psi||^2 on 1000 pairs: max relative error {worst:.2e} (tol 1e-8)"),
    )
}

// 3 ---------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..100u64 {
        let sample = generate(&ScenarioConfig {
            noise_level: 0.5,
            separation: 0.1,
            n_per_cluster: 20,
            seed,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let cfg = |algorithm, cpc_solver| FitConfig {
            algorithm,
            cpc_solver,
            restarts: 1,
            seed,
            ..FitConfig::default()
        };
        let fast = fit_fast(&sample.matrices, &cfg(Algorithm::Fast, CpcSolver::Fast)).unwrap();
        let lloyd = fit_lloyd(&sample.matrices, &cfg(Algorithm::Lloyd, CpcSolver::Fg)).unwrap();
        let hartigan = fit_hartigan(&sample.matrices, &cfg(Algorithm::Hartigan, CpcSolver::Fast)).unwrap();
        if !non_increasing(&fast.loss_trace) {
            bad.push(format!("fast seed {seed}"));
        }
        if !non_increasing(&lloyd.loss_trace) {
            bad.push(format!("lloyd seed {seed}"));
        }
        if !hartigan.move_trace.windows(2).all(|w| w[1] < w[0]) {
            bad.push(format!("hartigan seed {seed}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("monotone losses over 100 seeded runs (fast, lloyd, hartigan strict moves): violations {bad:?}"),
    )
}

// 4 ---------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = rng_from_seed(404);
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    let mut increases = 0;
    for _ in 0..50 {
        let sample: Vec<PsdMatrix> = (0..30).map(|_| random_psd(4, 0.0, 10.0, &mut rng).unwrap()).collect();
        let sol = fg_cpc_default(&sample).unwrap();
        if !sol.converged {
            unconverged += 1;
        }
        worst = worst.max(sol.stationarity_residual);
        if !non_increasing(&sol.objective_trace) {
            increases += 1;
        }
    }
    outcome(
        worst < 1e-7 && unconverged == 0 && increases == 0,
        format!(
            "FG stationarity on 50 samples (p=4, n=30): max residual {worst:.2e} (tol 1e-7), unconverged {unconverged}, objective increases {increases}"
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let p = 5;
    let truth = random_orthonormal(p, &mut rng_from_seed(505));
    let root = DMatrix::from_diagonal(&DVector::from_vec(
        [10.0f64, 7.0, 4.0, 2.0, 1.0].iter().map(|v| v.sqrt()).collect(),
    ));
    let factor = truth.as_matrix() * root;
    let error = |n: usize, seed: u64| {
        let mut rng = rng_from_seed(seed);
        let sample: Vec<PsdMatrix> = (0..n).map(|_| sample_wishart(&factor, 10, &mut rng).unwrap()).collect();
        frame_angle(&fast_cpc(&sample).unwrap().frame, &truth).unwrap()
    };
    let wins = (0..50u64)
        .filter(|&t| error(50, derive_seed(5, &[t, 0])) > error(1000, derive_seed(5, &[t, 1])))
        .count();
    outcome(
        wins >= 45,
        format!("fast CPC error shrinks with n: error(n=50) > error(n=1000) in {wins}/50 trials (need >= 45)"),
    )
}

// 6 ---------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let sample = generate(&ScenarioConfig {
            noise_level: 0.0,
            separation: 0.5,
            k: 2,
            seed,
            ..ScenarioConfig::default()
        })
        .unwrap();
        for (algorithm, cpc_solver) in
            [(Algorithm::Lloyd, CpcSolver::Fg), (Algorithm::Fast, CpcSolver::Fast), (Algorithm::Hartigan, CpcSolver::Fast)]
        {
            let model = fit(
                &sample.matrices,
                &FitConfig { algorithm, cpc_solver, restarts: 10, seed, ..FitConfig::default() },
            )
            .unwrap();
            let acc = accuracy(&model.assignments, &sample.labels, 2).unwrap();
            if acc != 1.0 || model.loss >= 1e-10 {
                failures.push(format!("{algorithm} seed {seed}: acc {acc}, loss {:.1e}", model.loss));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("exact recovery, noise 0, separation 0.5, 20 seeds x 3 variants: failures {failures:?}"),
    )
}

// 7 and 8 ---------------------------------------------------------------

fn means(rows: &[SummaryRow], method: Method) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.method == method)
        .map(|r| (r.noise_or_df, r.mean_accuracy))
        .collect()
}

fn fmt_means(m: &[(f64, f64)]) -> String {
    m.iter().map(|(x, a)| format!("{x}:{a:.3}")).collect::<Vec<_>>().join(" ")
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let grid = scenario_grid(GridKind::Table1);
    let methods = [Method::KtensorsLloyd, Method::Euclidean];
    let records = run_benchmark(&grid, &methods, 20, 0, &BenchOptions::default()).unwrap();
    let rows = summarize(&records).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut kt = means(&rows, Method::KtensorsLloyd);
    let mut eu = means(&rows, Method::Euclidean);
    kt.sort_by(|a, b| a.0.total_cmp(&b.0));
    eu.sort_by(|a, b| a.0.total_cmp(&b.0));
    let inversions = kt.windows(2).filter(|w| w[1].1 > w[0].1 + 1e-12).count();
    let min_gap = kt.iter().zip(&eu).map(|(k, e)| k.1 - e.1).fold(f64::INFINITY, f64::min);
    outcome(
        inversions <= 1 && min_gap >= 0.05 && secs < 300.0,
        format!(
            "noise sweep, 20 reps: ktensors [{}] euclidean [{}]; inversions {inversions} (max 1), min gap {min_gap:.3} (need >= 0.05), {secs:.1} s (limit 300 s)",
            fmt_means(&kt),
            fmt_means(&eu)
        ),
    )
}

fn criterion_8() -> Outcome {
    let grid = scenario_grid(GridKind::Table2);
    let records = run_benchmark(&grid, &Method::ALL, 20, 0, &BenchOptions::default()).unwrap();
    let rows = summarize(&records).unwrap();
    let kt = means(&rows, Method::KtensorsLloyd);
    let at = |m: &[(f64, f64)], df: f64| m.iter().find(|(x, _)| *x == df).map(|(_, a)| *a).unwrap();
    let rise = at(&kt, 45.0) - at(&kt, 10.0);
    let mut beaten = Vec::new();
    for method in [Method::Euclidean, Method::AffineInvariant, Method::LogDet] {
        let base = means(&rows, method);
        for &(df, acc) in kt.iter().filter(|(df, _)| *df >= 30.0) {
            if acc <= at(&base, df) {
                beaten.push(format!("{} at df {df}", method.as_str()));
            }
        }
    }
    let baselines: BTreeMap<&str, String> = [Method::Euclidean, Method::AffineInvariant, Method::LogDet]
        .iter()
        .map(|m| (m.as_str(), fmt_means(&means(&rows, *m))))
        .collect();
    outcome(
        rise >= 0.05 && beaten.is_empty(),
        format!(
            "df sweep, 20 reps: ktensors [{}]; rise df10->45 {rise:.3} (need >= 0.05); not above baseline: {beaten:?}; baselines {baselines:?}",
            fmt_means(&kt)
        ),
    )
}

// 9 ---------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut rng = rng_from_seed(909);
    let mut zero: f64 = 0.0;
    let mut congruence: f64 = 0.0;
    for _ in 0..50 {
        let p = rng.random_range(2..=5);
        let a = random_psd(p, 0.5, 5.0, &mut rng).unwrap();
        let b = random_psd(p, 0.5, 5.0, &mut rng).unwrap();
        zero = zero
            .max(dist_euclidean(&a, &a).unwrap())
            .max(dist_affine_invariant(&a, &a, DEFAULT_RIDGE).unwrap());
        // A well-conditioned invertible congruence: orthogonal times diagonal.
        let q = random_orthonormal(p, &mut rng);
        let s: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..2.0)).collect();
        let m = q.as_matrix() * DMatrix::from_diagonal(&DVector::from_vec(s));
        let act = |x: &PsdMatrix| PsdMatrix::new(&m * x.as_matrix() * m.transpose()).unwrap();
        let d = dist_affine_invariant(&a, &b, DEFAULT_RIDGE).unwrap();
        let dm = dist_affine_invariant(&act(&a), &act(&b), DEFAULT_RIDGE).unwrap();
        congruence = congruence.max((d - dm).abs());
    }
    let mut logdet: f64 = 0.0;
    for p in 2..=6 {
        let two = PsdMatrix::identity(p).scale(2.0).unwrap();
        let value = dist_logdet(&two, &PsdMatrix::identity(p), DEFAULT_RIDGE).unwrap();
        let pf = p as f64;
        logdet = logdet.max((value - (pf - pf * 2f64.ln())).abs());
    }
    outcome(
        zero <= 1e-12 && congruence <= 1e-7 && logdet <= 1e-12,
        format!(
            "distance identities: self-distance max {zero:.1e}, AI congruence max diff {congruence:.1e} (tol 1e-7), log-det (2I, I) max error {logdet:.1e} (tol 1e-12)"
        ),
    )
}

// 10 --------------------------------------------------------------------

fn bench_outputs(dir: &Path, threads: &str) -> Vec<String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ktensors"))
        .args(["bench", "--grid", "table2", "--reps", "3", "--seed", "10", "--restarts", "3", "--threads", threads])
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
        .status;
    assert!(status.success(), "bench exited with {status}");
    ["results.csv", "summary.csv", "plot_data.csv"]
        .iter()
        .map(|name| {
            let text = fs::read_to_string(dir.join(name)).unwrap();
            drop_runtime_column(&text)
        })
        .collect()
}

fn drop_runtime_column(text: &str) -> String {
    let mut col = None;
    let mut out = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            out.push_str(line);
        } else {
            let mut cells: Vec<&str> = line.split(',').collect();
            if col.is_none() {
                col = Some(cells.iter().position(|c| *c == "runtime_ms"));
            }
            if let Some(Some(c)) = col {
                cells.remove(c);
            }
            out.push_str(&cells.join(","));
        }
        out.push('\n');
    }
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(String, Vec<String>)> = [("1", "a"), ("1", "b"), ("8", "c"), ("8", "d")]
        .iter()
        .map(|(threads, name)| (threads.to_string(), bench_outputs(&tmp.path().join(name), threads)))
        .collect();
    let identical = runs.iter().all(|(_, files)| *files == runs[0].1);
    outcome(
        identical,
        "bench reruns with --threads 1 (x2) and --threads 8 (x2): CSVs identical modulo runtime_ms".to_string()
            + if identical { "" } else { " -- MISMATCH" },
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {id:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
