//! `mdfa`: fit factor models, run simulation and asymptotics studies,
//! render SE-versus-n charts.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 computational failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mdfa::asymptotics::{
    asymptotic_covariance, gamma_empirical, gamma_normal, normality_study, FitPath, GammaSource, NormalityConfig,
};
use mdfa::io::{matrix_to_rows, read_matrix, MatrixFormat};
use mdfa::model::{center_columns, covariance, phi_to_theta, Denominator, FactorParams};
use mdfa::report::{render_report, Metric};
use mdfa::simulation::{
    parse_records_csv, records_to_csv, records_to_jsonl, run_replications, summarize, summary_to_csv, Estimator,
    SettingId, SettingSpec, SimulationConfig,
};
use mdfa::{fit_mdfa, fit_mdfa_cov, FitOptions, Mat, MdfaError, Vector};

const DEFAULT_SEED: u64 = 20_240_101;

#[derive(Parser)]
#[command(name = "mdfa", version, about = "Matrix decomposition factor analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an MDFA model to a data matrix (rows = observations).
    Fit(FitArgs),
    /// Run a Monte Carlo study over settings, sample sizes and estimators.
    Simulate(SimulateArgs),
    /// Sandwich covariance of the echelon-form estimator, optionally checked
    /// by Monte Carlo.
    Asymptotics(AsymptoticsArgs),
    /// Render one SVG chart per setting from replication CSV files.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitTuning {
    /// Denominator of the sample covariance and loss.
    #[arg(long, default_value = "n-1")]
    denominator: Denominator,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Stop once the loss decreases by less than this.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

impl FitTuning {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            denominator: self.denominator,
            ..FitOptions::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Data matrix (.csv or .json).
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of common factors m.
    #[arg(long)]
    factors: usize,
    /// Keep Λ lower-trapezoid with nonnegative diagonal.
    #[arg(long)]
    ic5: bool,
    /// Keep only the K largest loadings.
    #[arg(long = "sparse-k", value_name = "K")]
    sparse_k: Option<usize>,
    /// Iterate on the sample covariance only (no scores in the output).
    #[arg(long)]
    cov_only: bool,
    /// Include the score matrices F and E in the output.
    #[arg(long)]
    scores: bool,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// The CSV input has a header row.
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    tuning: FitTuning,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for MatrixFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => MatrixFormat::Csv,
            Format::Json => MatrixFormat::Json,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for records.csv, records.jsonl and summary.csv.
    #[arg(long)]
    output: PathBuf,
    /// Settings to run (1-4).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    setting: Vec<SettingId>,
    /// Sample sizes; defaults to 100,400,1600,6400 (desk) or 100,200,…,1000
    /// (paper scale).
    #[arg(long = "n-grid", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Replications per (setting, n); defaults to 50 (desk) or 100 (paper).
    #[arg(long)]
    reps: Option<usize>,
    /// Estimators: mdfa, mdfa_cov, mdfa_sparse:K, pca, ols.
    #[arg(long, value_delimiter = ',', default_value = "mdfa,pca,ols")]
    estimators: Vec<Estimator>,
    /// Master seed.
    #[arg(long, env = "MDFA_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Use the full-size settings (p = 20 or 50, five factors).
    #[arg(long)]
    paper_scale: bool,
    /// Record wall-clock time per fit (makes output run-dependent).
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    tuning: FitTuning,
}

#[derive(Args)]
struct AsymptoticsArgs {
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// True loadings Λ* as a p×m matrix file (echelon form).
    #[arg(long, conflicts_with = "loadings")]
    input: Option<PathBuf>,
    /// One-factor loadings Λ* as a comma list.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.7,0.6,0.5,0.4")]
    loadings: Vec<f64>,
    /// Unique variances Ψ*²; defaults to 1 − diag(Λ*Λ*ᵀ).
    #[arg(long = "unique-variances", value_delimiter = ',')]
    unique_variances: Option<Vec<f64>>,
    /// Sample size of each Monte Carlo replication.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Monte Carlo replications; 0 reports V only.
    #[arg(long, default_value_t = 0)]
    reps: usize,
    /// Data file for an empirical Γ instead of the normal-theory one
    /// (no Monte Carlo in that case).
    #[arg(long = "gamma-data")]
    gamma_data: Option<PathBuf>,
    #[arg(long, env = "MDFA_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Monte Carlo fits iterate on the sample covariance (same iterates,
    /// faster).
    #[arg(long)]
    cov_only: bool,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value = "n-1")]
    denominator: Denominator,
}

#[derive(Args)]
struct ReportArgs {
    /// Replication CSV files written by `simulate`.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output directory for <setting>.svg files and summary.csv.
    #[arg(long)]
    output: PathBuf,
    /// Plot SE of the loadings only, or of loadings and unique variances.
    #[arg(long, value_enum, default_value = "se-lambda")]
    metric: MetricArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    SeLambda,
    SeTotal,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<MdfaError> for Failure {
    fn from(e: MdfaError) -> Self {
        let code = match e {
            MdfaError::InvalidInput(_)
            | MdfaError::DimensionError(_)
            | MdfaError::TooFewRows { .. }
            | MdfaError::NotIdentified(_)
            | MdfaError::NotIdentifiable(_)
            | MdfaError::InvalidSpec(_)
            | MdfaError::Parse(_) => 2,
            MdfaError::NotPsd { .. }
            | MdfaError::RankDeficient { .. }
            | MdfaError::EvalError { .. }
            | MdfaError::SingularHessian { .. } => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn to_json(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n"
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let x = read_matrix(&args.input, args.format.map(Into::into), args.header)?;
    let p = x.ncols();
    if args.factors == 0 || args.factors >= p {
        return Err(usage(format!(
            "--factors must satisfy 1 ≤ m < p; got m={} for p={p} variables",
            args.factors
        )));
    }
    let opts = FitOptions {
        ic5: args.ic5,
        sparsity_k: args.sparse_k,
        ..args.tuning.options()
    };
    let fit = if args.cov_only {
        let s = covariance(&center_columns(&x)?, opts.denominator);
        fit_mdfa_cov(&s, args.factors, &opts)?
    } else {
        fit_mdfa(&x, args.factors, &opts)?
    };
    let scores = match (&fit.scores, args.scores) {
        (Some(z), true) => json!({"f": matrix_to_rows(&z.f), "e": matrix_to_rows(&z.e)}),
        _ => serde_json::Value::Null,
    };
    let out = json!({
        "lambda": matrix_to_rows(&fit.params.lambda),
        "psi2": fit.params.unique_variances().as_slice(),
        "loss_trace": fit.loss_trace,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "denominator": opts.denominator,
        "scores": scores,
    });
    write_output(args.output.as_deref(), &to_json(&out))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let settings: Vec<SettingSpec> = args
        .setting
        .iter()
        .map(|&id| if args.paper_scale { SettingSpec::paper(id) } else { SettingSpec::desk(id) })
        .collect();
    let n_grid = args.n_grid.clone().unwrap_or_else(|| {
        if args.paper_scale {
            (1..=10).map(|k| 100 * k).collect()
        } else {
            vec![100, 400, 1600, 6400]
        }
    });
    let reps = args.reps.unwrap_or(if args.paper_scale { 100 } else { 50 });
    let mut config = SimulationConfig::new(settings, n_grid, reps, args.estimators.clone(), args.seed);
    config.workers = args.workers;
    config.fit = args.tuning.options();
    config.record_runtime = args.timings;
    let records = run_replications(&config).map_err(|e| match e {
        MdfaError::InvalidSpec(_) | MdfaError::InvalidInput(_) => Failure::from(e),
        other => Failure {
            code: 3,
            message: other.to_string(),
        },
    })?;
    create_dir(&args.output)?;
    let dir = &args.output;
    write_output(Some(&dir.join("records.csv")), &records_to_csv(&records))?;
    write_output(Some(&dir.join("records.jsonl")), &records_to_jsonl(&records))?;
    write_output(Some(&dir.join("summary.csv")), &summary_to_csv(&summarize(&records)))
}

fn true_loadings(args: &AsymptoticsArgs) -> Result<Mat, Failure> {
    match &args.input {
        Some(path) => Ok(read_matrix(path, args.format.map(Into::into), args.header)?),
        None => Ok(Mat::from_column_slice(args.loadings.len(), 1, &args.loadings)),
    }
}

fn cmd_asymptotics(args: &AsymptoticsArgs) -> Result<(), Failure> {
    let lambda = true_loadings(args)?;
    let (p, m) = lambda.shape();
    if m == 0 || m >= p {
        return Err(usage(format!("Λ* must be p×m with 1 ≤ m < p, got {p}x{m}")));
    }
    let psi2 = match &args.unique_variances {
        Some(v) if v.len() != p => {
            return Err(usage(format!("{} unique variances for p = {p}", v.len())));
        }
        Some(v) => Vector::from_column_slice(v),
        None => (&lambda * lambda.transpose()).diagonal().map(|c| 1.0 - c),
    };
    if psi2.iter().any(|v| *v <= 0.0) {
        return Err(usage("unique variances must be positive"));
    }
    let params = FactorParams::from_unique_variances(lambda, &psi2)?;
    let theta = phi_to_theta(&params)?;
    let sigma = params.implied_covariance();

    let report = if let Some(path) = &args.gamma_data {
        let x = read_matrix(path, args.format.map(Into::into), args.header)?;
        if x.ncols() != p {
            return Err(usage(format!("gamma data has {} columns, Λ* has {p} rows", x.ncols())));
        }
        let gamma = gamma_empirical(&center_columns(&x)?)?;
        asymptotic_covariance(&theta, &sigma, &gamma, GammaSource::Empirical)?
    } else if args.reps == 0 {
        asymptotic_covariance(&theta, &sigma, &gamma_normal(&sigma)?, GammaSource::NormalClosedForm)?
    } else {
        let mut config = NormalityConfig::new(p, m, theta, args.n, args.reps, args.seed);
        config.workers = args.workers;
        config.path = if args.cov_only { FitPath::Covariance } else { FitPath::Data };
        config.fit.denominator = args.denominator;
        normality_study(&config)?
    };
    write_output(args.output.as_deref(), &(report.to_json() + "\n"))
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let mut records = Vec::new();
    for path in &args.input {
        let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        records.extend(parse_records_csv(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))?);
    }
    let metric = match args.metric {
        MetricArg::SeLambda => Metric::MeanSeLambda,
        MetricArg::SeTotal => Metric::MeanSeTotal,
    };
    create_dir(&args.output)?;
    for (setting, svg) in render_report(&records, metric) {
        write_output(Some(&args.output.join(format!("{setting}.svg"))), &svg)?;
    }
    write_output(Some(&args.output.join("summary.csv")), &summary_to_csv(&summarize(&records)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
