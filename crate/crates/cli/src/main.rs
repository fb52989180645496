//! `ktensors`: simulate, fit, evaluate and benchmark PSD-matrix clusterings.
//!
//! Exit codes: 0 success, 2 invalid flags, 3 fit stopped at the iteration
//! cap, 4 runtime or data errors.

mod files;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ktensors_core::baselines::{kmeans_metric, MetricKind, DEFAULT_RIDGE, KARCHER_MAX_ITER, KARCHER_TOL};
use ktensors_core::evalbench::{
    accuracy, adjusted_rand, parse_methods, run_benchmark, summarize, write_plot_csv, write_results_csv,
    write_summary_csv, BenchOptions,
};
use ktensors_core::ktensors::{fit, Algorithm, CpcSolver, FitConfig};
use ktensors_core::simgen::{generate, scenario_grid, Generator, GridKind, ScenarioConfig};
use ktensors_core::{simgen, Error};

use files::{read_json, write_json, FittedModel, ModelFile, SampleFile, SampleInput};

pub const TOOL: &str = concat!("ktensors ", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(name = "ktensors", version, about = "Cluster positive semi-definite matrices by eigenstructure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GeneratorArg {
    Cook,
    Wishart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AlgorithmArg {
    Lloyd,
    Fast,
    Hartigan,
    Euclidean,
    AffineInvariant,
    LogDet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CpcArg {
    Fg,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GridArg {
    Table1,
    Table2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled sample and write it as JSON.
    Simulate(SimulateArgs),
    /// Fit a clustering to a sample file.
    Fit(FitArgs),
    /// Score a fitted model against the labels of a sample file.
    Eval(EvalArgs),
    /// Run a benchmark grid and write results, summary and plot-data CSVs.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    generator: GeneratorArg,
    #[arg(long, default_value_t = simgen::DEFAULT_P)]
    p: usize,
    #[arg(long, default_value_t = simgen::DEFAULT_K)]
    k: usize,
    /// Observations per cluster.
    #[arg(long, default_value_t = simgen::DEFAULT_N_PER_CLUSTER)]
    n: usize,
    /// Cook: Frobenius norm of each noise matrix.
    #[arg(long, default_value_t = simgen::DEFAULT_NOISE_LEVEL)]
    noise: f64,
    /// Wishart: degrees of freedom.
    #[arg(long, default_value_t = simgen::DEFAULT_DF)]
    df: usize,
    #[arg(long, default_value_t = simgen::DEFAULT_SEPARATION)]
    separation: f64,
    #[arg(long, default_value_t = simgen::DEFAULT_EIGENVALUE_LAW[0])]
    eig_lo: f64,
    #[arg(long, default_value_t = simgen::DEFAULT_EIGENVALUE_LAW[1])]
    eig_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Lloyd)]
    algorithm: AlgorithmArg,
    /// CPC estimator for the lloyd algorithm.
    #[arg(long, value_enum, default_value_t = CpcArg::Fg)]
    cpc: CpcArg,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    grid: GridArg,
    /// `all` or a comma-separated list of method names.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn flags(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self { code: 4, message: e.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit_cmd(args),
        Command::Eval(args) => eval(args),
        Command::Bench(args) => bench(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let SimulateArgs { generator, p, k, n, noise, df, separation, eig_lo, eig_hi, seed, out, format } = args;
    let generator = match generator {
        GeneratorArg::Cook => Generator::Cook,
        GeneratorArg::Wishart => Generator::Wishart,
    };
    let config = ScenarioConfig {
        id: format!("{generator}_cli"),
        generator,
        p,
        n_per_cluster: n,
        k,
        noise_level: if generator == Generator::Cook { noise } else { 0.0 },
        df,
        separation,
        eigenvalue_law: [eig_lo, eig_hi],
        seed,
    };
    config.validate().map_err(|e| Failure::flags(e.to_string()))?;
    let sample = generate(&config)?;
    write_json(&out, &SampleFile::new(sample))?;
    let mut stdout = io::stdout().lock();
    match format {
        Format::Json => writeln!(stdout, "{}", serde_json::to_string(&config).map_err(Failure::runtime)?)?,
        Format::Csv => {
            writeln!(stdout, "id,generator,p,n_per_cluster,k,noise_level,df,separation,eig_lo,eig_hi,seed")?;
            writeln!(
                stdout,
                "{},{},{},{},{},{},{},{},{},{},{}",
                config.id,
                config.generator,
                config.p,
                config.n_per_cluster,
                config.k,
                config.noise_level,
                config.df,
                config.separation,
                config.eigenvalue_law[0],
                config.eigenvalue_law[1],
                config.seed
            )?;
        }
    }
    Ok(0)
}

fn fit_cmd(args: FitArgs) -> Result<u8, Failure> {
    let FitArgs { input, k, algorithm, cpc, restarts, max_iter, tol, seed, out, format } = args;
    if !(tol >= 0.0) {
        return Err(Failure::flags("--tol must be non-negative"));
    }
    let sample: SampleInput = read_json(&input)?;
    let config = FitConfig {
        k: k as usize,
        algorithm: Algorithm::Lloyd,
        cpc_solver: match cpc {
            CpcArg::Fg => CpcSolver::Fg,
            CpcArg::Fast => CpcSolver::Fast,
        },
        restarts: restarts as usize,
        max_iter: max_iter as usize,
        tol,
        seed,
    };
    let (config, model) = match algorithm {
        AlgorithmArg::Lloyd | AlgorithmArg::Fast | AlgorithmArg::Hartigan => {
            let (algorithm, cpc_solver) = match algorithm {
                AlgorithmArg::Lloyd => (Algorithm::Lloyd, config.cpc_solver),
                AlgorithmArg::Fast => (Algorithm::Fast, CpcSolver::Fast),
                _ => (Algorithm::Hartigan, CpcSolver::Fast),
            };
            let config = FitConfig { algorithm, cpc_solver, ..config };
            let model = FittedModel::KTensors(fit(&sample.matrices, &config)?);
            (config, model)
        }
        AlgorithmArg::Euclidean | AlgorithmArg::AffineInvariant | AlgorithmArg::LogDet => {
            let metric = match algorithm {
                AlgorithmArg::Euclidean => MetricKind::Euclidean,
                AlgorithmArg::AffineInvariant => MetricKind::AffineInvariant,
                _ => MetricKind::LogDet,
            };
            let model = FittedModel::Metric(kmeans_metric(&sample.matrices, config.k, metric, &config)?);
            (config, model)
        }
    };
    let (loss, iterations, converged) = model.summary();
    let method = algorithm.to_possible_value().expect("no skipped variants");
    write_json(&out, &ModelFile::new(method.get_name(), model, config))?;
    let mut stdout = io::stdout().lock();
    match format {
        Format::Csv => {
            writeln!(stdout, "loss,iterations,converged")?;
            writeln!(stdout, "{loss},{iterations},{converged}")?;
        }
        Format::Json => writeln!(
            stdout,
            "{}",
            json!({ "loss": loss, "iterations": iterations, "converged": converged })
        )?,
    }
    Ok(if converged { 0 } else { 3 })
}

fn eval(args: EvalArgs) -> Result<u8, Failure> {
    let EvalArgs { model, sample, format } = args;
    let model: ModelFile = read_json(&model)?;
    let sample: SampleInput = read_json(&sample)?;
    let labels = sample
        .labels
        .ok_or_else(|| Failure::runtime("sample file has no labels"))?;
    let pred = model.model.assignments();
    let k = model.model.k().max(labels.iter().max().map_or(0, |m| m + 1));
    let acc = accuracy(pred, &labels, k)?;
    let ari = adjusted_rand(pred, &labels)?;
    let mut stdout = io::stdout().lock();
    match format {
        Format::Csv => writeln!(stdout, "{acc:.6},{ari:.6}")?,
        Format::Json => writeln!(stdout, "{}", json!({ "accuracy": acc, "ari": ari }))?,
    }
    Ok(0)
}

fn bench(args: BenchArgs) -> Result<u8, Failure> {
    let BenchArgs { grid, methods, reps, seed, out_dir, restarts, max_iter, tol, threads, format } = args;
    let methods = parse_methods(&methods).map_err(|e| Failure::flags(e.to_string()))?;
    if !(tol >= 0.0) {
        return Err(Failure::flags("--tol must be non-negative"));
    }
    let kind = match grid {
        GridArg::Table1 => GridKind::Table1,
        GridArg::Table2 => GridKind::Table2,
    };
    let scenarios = scenario_grid(kind);
    let options = BenchOptions {
        restarts: restarts as usize,
        max_iter: max_iter as usize,
        tol,
        threads,
    };
    let records = run_benchmark(&scenarios, &methods, reps as usize, seed, &options)?;
    let summary = summarize(&records)?;

    let mut meta: Vec<(String, String)> = vec![
        ("tool".into(), TOOL.into()),
        ("grid".into(), kind.as_str().into()),
        ("methods".into(), methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")),
        ("replications".into(), reps.to_string()),
        ("seed".into(), seed.to_string()),
        ("fit".into(), serde_json::to_string(&options).map_err(Failure::runtime)?),
        ("ktensors_lloyd".into(), "algorithm=lloyd cpc=fg".into()),
        ("ktensors_fast".into(), "algorithm=fast cpc=fast".into()),
        ("ktensors_hartigan".into(), "algorithm=hartigan cpc=fast".into()),
    ];
    for m in MetricKind::ALL {
        meta.push((m.as_str().into(), format!("centroid={}", m.centroid_rule())));
    }
    meta.push(("ridge".into(), format!("{DEFAULT_RIDGE:e} x spectral radius")));
    meta.push(("karcher".into(), format!("max_iter={KARCHER_MAX_ITER} tol={KARCHER_TOL:e}")));
    meta.push(("sample_seed".into(), "derived per (scenario, replication); fit seeds derived per method".into()));
    for s in &scenarios {
        meta.push(("scenario".into(), serde_json::to_string(s).map_err(Failure::runtime)?));
    }

    fs::create_dir_all(&out_dir)?;
    let create = |name: &str| fs::File::create(out_dir.join(name)).map(io::BufWriter::new);
    write_results_csv(create("results.csv")?, &records, &meta)?;
    write_summary_csv(create("summary.csv")?, &summary, &meta)?;
    write_plot_csv(create("plot_data.csv")?, &summary, &meta)?;

    let mut stdout = io::stdout().lock();
    match format {
        Format::Csv => write_summary_csv(&mut stdout, &summary, &[])?,
        Format::Json => writeln!(stdout, "{}", serde_json::to_string(&summary).map_err(Failure::runtime)?)?,
    }
    let failed = records.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} fits failed; see the error column", records.len());
    }
    Ok(0)
}
