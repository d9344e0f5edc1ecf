//! Simulation harness: true-parameter generators for the four settings,
//! Gaussian data, squared-error metrics and parallel replications.
//!
//! Each replication redraws `Λ*` and derives all randomness from
//! `(master seed, setting, n, replication)`, so the result table is
//! identical for any worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MdfaError, Result};
use crate::estimator::{fit_mdfa, fit_mdfa_cov, fit_ols, fit_pca, FitOptions};
use crate::linalg;
use crate::model::{center_columns, covariance};
use crate::rng;
use crate::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SettingId {
    S1,
    S2,
    S3,
    S4,
}

impl SettingId {
    pub const ALL: [SettingId; 4] = [SettingId::S1, SettingId::S2, SettingId::S3, SettingId::S4];

    fn index(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

impl FromStr for SettingId {
    type Err = MdfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches(['S', 's']) {
            "1" => Ok(SettingId::S1),
            "2" => Ok(SettingId::S2),
            "3" => Ok(SettingId::S3),
            "4" => Ok(SettingId::S4),
            _ => Err(MdfaError::InvalidSpec(format!("unknown setting '{s}'"))),
        }
    }
}

/// Knobs of the minor-factor model error term `WWᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelError {
    /// Share of each variable's unique variance due to model error.
    pub pi: f64,
    /// Geometric decay of successive minor factors.
    pub epsilon: f64,
    /// Number of minor factors.
    pub q: usize,
}

impl ModelError {
    pub const PAPER: ModelError = ModelError {
        pi: 0.2,
        epsilon: 0.1,
        q: 150,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: SettingId,
    pub p: usize,
    pub m: usize,
    pub loadings_per_factor: usize,
    /// Uniform interval for the nonzero loadings of each factor.
    pub loading_ranges: Vec<(f64, f64)>,
    pub model_error: Option<ModelError>,
}

const PAPER_RANGES: [(f64, f64); 5] = [
    (0.90, 0.95),
    (0.85, 0.90),
    (0.80, 0.85),
    (0.45, 0.50),
    (0.40, 0.45),
];

impl SettingSpec {
    /// Full-size settings: p = 20 (S1, S2) or 50 (S3, S4), five factors.
    pub fn paper(id: SettingId) -> Self {
        let (p, per) = match id {
            SettingId::S1 | SettingId::S2 => (20, 4),
            SettingId::S3 | SettingId::S4 => (50, 10),
        };
        SettingSpec {
            id,
            p,
            m: 5,
            loadings_per_factor: per,
            loading_ranges: PAPER_RANGES.to_vec(),
            model_error: matches!(id, SettingId::S2 | SettingId::S4).then_some(ModelError::PAPER),
        }
    }

    /// Desk-scale analogues: two factors with the two strongest loading
    /// intervals, 4 (S1, S2) or 10 (S3, S4) loadings per factor.
    pub fn desk(id: SettingId) -> Self {
        let per = match id {
            SettingId::S1 | SettingId::S2 => 4,
            SettingId::S3 | SettingId::S4 => 10,
        };
        SettingSpec {
            id,
            p: 2 * per,
            m: 2,
            loadings_per_factor: per,
            loading_ranges: PAPER_RANGES[..2].to_vec(),
            model_error: matches!(id, SettingId::S2 | SettingId::S4).then_some(ModelError::PAPER),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MdfaError::InvalidSpec(msg));
        if self.m == 0 || self.m >= self.p {
            return bad(format!("need 1 ≤ m < p, got m={}, p={}", self.m, self.p));
        }
        if self.loadings_per_factor == 0 || self.loadings_per_factor * self.m > self.p {
            return bad(format!(
                "{} loadings per factor × {} factors do not fit in p = {}",
                self.loadings_per_factor, self.m, self.p
            ));
        }
        if self.loading_ranges.len() != self.m {
            return bad(format!(
                "{} loading ranges for {} factors",
                self.loading_ranges.len(),
                self.m
            ));
        }
        for &(lo, hi) in &self.loading_ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi < 1.0) {
                return bad(format!("loading range [{lo}, {hi}] must lie in [0, 1)"));
            }
        }
        if let Some(me) = self.model_error {
            check_model_error(me.pi, me.epsilon, me.q)?;
        }
        Ok(())
    }
}

fn check_model_error(pi: f64, epsilon: f64, q: usize) -> Result<()> {
    if !(0.0..1.0).contains(&pi) || !(epsilon > 0.0 && epsilon < 1.0) || q == 0 {
        return Err(MdfaError::InvalidSpec(format!(
            "model error needs 0 ≤ π < 1, 0 < ε < 1, q ≥ 1 (got π={pi}, ε={epsilon}, q={q})"
        )));
    }
    Ok(())
}

/// Population quantities of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub lambda: Mat,
    /// `Ψ*²` of the generating model.
    pub psi2: Vector,
    pub sigma: Mat,
    pub minor: Option<Mat>,
    /// `1 − diag(Λ*Λ*ᵀ)`, the unique-variance target used by the SE metric.
    pub psi2_reference: Vector,
}

/// Draws `Λ*` with perfect simple structure and builds a unit-diagonal `Σ*`.
pub fn gen_true_params(spec: &SettingSpec, seed: u64) -> Result<TrueParams> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[]);
    let (p, m, per) = (spec.p, spec.m, spec.loadings_per_factor);
    let mut lambda = Mat::zeros(p, m);
    for (k, &(lo, hi)) in spec.loading_ranges.iter().enumerate() {
        for j in k * per..(k + 1) * per {
            lambda[(j, k)] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
    }
    let common = (&lambda * lambda.transpose()).diagonal();
    let unique = common.map(|c| 1.0 - c);

    let (psi2, minor) = match spec.model_error {
        None => (unique.clone(), None),
        Some(me) => {
            let w = gen_minor_factors(p, me.pi, me.epsilon, me.q, unique.as_slice(), rng.random())?;
            (unique.map(|u| (1.0 - me.pi) * u), Some(w))
        }
    };
    let mut sigma = &lambda * lambda.transpose() + Mat::from_diagonal(&psi2);
    if let Some(w) = &minor {
        sigma += w * w.transpose();
    }
    let sigma = linalg::symmetrize(&sigma);
    validate_sigma(&sigma)?;
    Ok(TrueParams {
        lambda,
        psi2,
        sigma,
        minor,
        psi2_reference: unique,
    })
}

fn validate_sigma(sigma: &Mat) -> Result<()> {
    for j in 0..sigma.nrows() {
        if (sigma[(j, j)] - 1.0).abs() > 1e-12 {
            return Err(MdfaError::InvalidSpec(format!(
                "Σ*[{j},{j}] = {} is not 1",
                sigma[(j, j)]
            )));
        }
    }
    let eig = linalg::sym_eigen(sigma)?;
    let min = eig.values[eig.values.len() - 1];
    if min <= 0.0 {
        return Err(MdfaError::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Minor-factor loadings `W` (p × q): Gaussian entries with column `k`
/// scaled by `(1 − ε)^k`, then each row rescaled so that
/// `(WWᵀ)_jj = π · unique_variances[j]`.
pub fn gen_minor_factors(
    p: usize,
    pi: f64,
    epsilon: f64,
    q: usize,
    unique_variances: &[f64],
    seed: u64,
) -> Result<Mat> {
    check_model_error(pi, epsilon, q)?;
    if unique_variances.len() != p {
        return Err(MdfaError::InvalidSpec(format!(
            "{} unique variances for p = {p}",
            unique_variances.len()
        )));
    }
    let mut rng = rng::stream(seed, &[]);
    let mut w = Mat::zeros(p, q);
    for j in 0..p {
        for k in 0..q {
            let z: f64 = rng.sample(StandardNormal);
            w[(j, k)] = z * (1.0 - epsilon).powi(k as i32);
        }
    }
    for j in 0..p {
        let target = pi * unique_variances[j];
        let norm2 = w.row(j).norm_squared();
        let scale = if norm2 > 0.0 { (target / norm2).sqrt() } else { 0.0 };
        w.row_mut(j).scale_mut(scale);
    }
    Ok(w)
}

/// `n` i.i.d. rows from `N(0, Σ)` through the Cholesky factor of `Σ`
/// (a symmetric square root when `Σ` is only semidefinite).
pub fn gen_dataset(sigma: &Mat, n: usize, seed: u64) -> Result<Mat> {
    if n < 2 {
        return Err(MdfaError::TooFewRows { rows: n });
    }
    linalg::ensure_symmetric(sigma, "Σ")?;
    let factor = match sigma.clone().cholesky() {
        Some(ch) => ch.l(),
        None => linalg::psd_sqrt(sigma)?,
    };
    let p = sigma.nrows();
    let mut rng = rng::stream(seed, &[]);
    let z: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Mat::from_row_slice(n, p, &z) * factor.transpose())
}

/// `min_{PᵀP = I} ‖Λ̂P − Λ*‖²_F`.
pub fn se_lambda(lambda_hat: &Mat, lambda_star: &Mat) -> Result<f64> {
    let p = linalg::procrustes(lambda_hat, lambda_star)?;
    Ok((lambda_hat * p - lambda_star).norm_squared())
}

/// `SE_Λ + ‖Ψ̂² − Ψ*²‖²`.
pub fn se_total(lambda_hat: &Mat, psi2_hat: &Vector, lambda_star: &Mat, psi2_star: &Vector) -> Result<f64> {
    if psi2_hat.len() != psi2_star.len() {
        return Err(MdfaError::DimensionError(format!(
            "unique variance lengths differ: {} vs {}",
            psi2_hat.len(),
            psi2_star.len()
        )));
    }
    Ok(se_lambda(lambda_hat, lambda_star)? + (psi2_hat - psi2_star).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    Mdfa,
    MdfaCov,
    MdfaSparse(usize),
    Pca,
    Ols,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Mdfa => write!(f, "mdfa"),
            Estimator::MdfaCov => write!(f, "mdfa_cov"),
            Estimator::MdfaSparse(k) => write!(f, "mdfa_sparse:{k}"),
            Estimator::Pca => write!(f, "pca"),
            Estimator::Ols => write!(f, "ols"),
        }
    }
}

impl FromStr for Estimator {
    type Err = MdfaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "mdfa" => return Ok(Estimator::Mdfa),
            "mdfa_cov" => return Ok(Estimator::MdfaCov),
            "pca" => return Ok(Estimator::Pca),
            "ols" => return Ok(Estimator::Ols),
            _ => {}
        }
        if let Some(k) = s.strip_prefix("mdfa_sparse:") {
            if let Ok(k) = k.parse::<usize>() {
                if k > 0 {
                    return Ok(Estimator::MdfaSparse(k));
                }
            }
        }
        Err(MdfaError::InvalidInput(format!(
            "unknown estimator '{s}' (expected mdfa, mdfa_cov, mdfa_sparse:K, pca or ols)"
        )))
    }
}

/// One `(setting, n, replication, estimator)` result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub setting: SettingId,
    pub n: usize,
    pub rep: usize,
    pub estimator: String,
    /// `None` when the fit failed.
    pub se_lambda: Option<f64>,
    /// `None` for PCA and for failed fits.
    pub se_total: Option<f64>,
    pub iters: usize,
    pub runtime_s: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub settings: Vec<SettingSpec>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    pub workers: usize,
    pub fit: FitOptions,
    /// Wall-clock timings make the table non-reproducible; off by default.
    pub record_runtime: bool,
}

impl SimulationConfig {
    pub fn new(settings: Vec<SettingSpec>, n_grid: Vec<usize>, reps: usize, estimators: Vec<Estimator>, seed: u64) -> Self {
        SimulationConfig {
            settings,
            n_grid,
            reps,
            estimators,
            seed,
            workers: 1,
            fit: FitOptions::default(),
            record_runtime: false,
        }
    }
}

struct Outcome {
    se_lambda: Option<f64>,
    se_total: Option<f64>,
    iters: usize,
    converged: bool,
}

fn run_estimator(est: Estimator, x: &Mat, truth: &TrueParams, m: usize, opts: &FitOptions) -> Result<Outcome> {
    let full = |lambda: &Mat, psi2: &Vector, iters, converged| -> Result<Outcome> {
        Ok(Outcome {
            se_lambda: Some(se_lambda(lambda, &truth.lambda)?),
            se_total: Some(se_total(lambda, psi2, &truth.lambda, &truth.psi2_reference)?),
            iters,
            converged,
        })
    };
    match est {
        Estimator::Mdfa | Estimator::MdfaSparse(_) => {
            let opts = FitOptions {
                sparsity_k: match est {
                    Estimator::MdfaSparse(k) => Some(k),
                    _ => None,
                },
                ..opts.clone()
            };
            let fit = fit_mdfa(x, m, &opts)?;
            full(&fit.params.lambda, &fit.params.unique_variances(), fit.iterations, fit.converged)
        }
        Estimator::MdfaCov => {
            let s = covariance(&center_columns(x)?, opts.denominator);
            let fit = fit_mdfa_cov(&s, m, opts)?;
            full(&fit.params.lambda, &fit.params.unique_variances(), fit.iterations, fit.converged)
        }
        Estimator::Pca => {
            let fit = fit_pca(&center_columns(x)?, m)?;
            Ok(Outcome {
                se_lambda: Some(se_lambda(&fit.lambda, &truth.lambda)?),
                se_total: None,
                iters: 0,
                converged: true,
            })
        }
        Estimator::Ols => {
            let s = covariance(&center_columns(x)?, opts.denominator);
            let fit = fit_ols(&s, m, opts)?;
            full(&fit.params.lambda, &fit.params.unique_variances(), fit.iterations, fit.converged)
        }
    }
}

fn replicate(config: &SimulationConfig, spec: &SettingSpec, n: usize, rep: usize) -> Result<Vec<ReplicationRecord>> {
    let path = [spec.id.index(), n as u64, rep as u64];
    let truth = gen_true_params(spec, rng::derive_seed(config.seed, &[path[0], path[1], path[2], 0]))?;
    let x = gen_dataset(&truth.sigma, n, rng::derive_seed(config.seed, &[path[0], path[1], path[2], 1]))?;
    let records = config
        .estimators
        .iter()
        .map(|&est| {
            let start = Instant::now();
            let outcome = run_estimator(est, &x, &truth, spec.m, &config.fit).unwrap_or_else(|e| {
                log::warn!("{} n={n} rep={rep} {est}: {e}", spec.id);
                Outcome {
                    se_lambda: None,
                    se_total: None,
                    iters: 0,
                    converged: false,
                }
            });
            ReplicationRecord {
                setting: spec.id,
                n,
                rep,
                estimator: est.to_string(),
                se_lambda: outcome.se_lambda,
                se_total: outcome.se_total,
                iters: outcome.iters,
                runtime_s: if config.record_runtime { start.elapsed().as_secs_f64() } else { 0.0 },
                converged: outcome.converged,
            }
        })
        .collect();
    Ok(records)
}

/// Runs `|settings|·|n_grid|·reps` replications with every estimator on the
/// same dataset. Individual fit failures are recorded, not propagated.
pub fn run_replications(config: &SimulationConfig) -> Result<Vec<ReplicationRecord>> {
    for spec in &config.settings {
        spec.validate()?;
    }
    if let Some(&n) = config.n_grid.iter().find(|&&n| n < 2) {
        return Err(MdfaError::InvalidSpec(format!("sample size {n} is too small")));
    }
    let tasks: Vec<(&SettingSpec, usize, usize)> = config
        .settings
        .iter()
        .flat_map(|s| {
            config
                .n_grid
                .iter()
                .flat_map(move |&n| (0..config.reps).map(move |r| (s, n, r)))
        })
        .collect();
    let run = || -> Result<Vec<Vec<ReplicationRecord>>> {
        tasks
            .par_iter()
            .map(|&(spec, n, r)| replicate(config, spec, n, r))
            .collect()
    };
    let nested = with_workers(config.workers, run)?;
    Ok(nested.into_iter().flatten().collect())
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub const RECORD_HEADER: &str = "setting,n,rep,estimator,se_lambda,se_total,iters,runtime_s,converged";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[ReplicationRecord]) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.setting,
            r.n,
            r.rep,
            r.estimator,
            opt(r.se_lambda),
            opt(r.se_total),
            r.iters,
            r.runtime_s,
            r.converged
        ));
    }
    out
}

pub fn records_to_jsonl(records: &[ReplicationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// Parses a result table written by [`records_to_csv`].
pub fn parse_records_csv(bytes: &[u8]) -> Result<Vec<ReplicationRecord>> {
    let perr = |msg: String| MdfaError::Parse(msg);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| perr(format!("csv: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RECORD_HEADER {
        return Err(perr(format!("unexpected header '{header}'")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| perr(format!("csv: {e}")))?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| perr(format!("line {line}: bad number '{}'", field(k))))
        };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<usize> {
            field(k)
                .parse::<usize>()
                .map_err(|_| perr(format!("line {line}: bad integer '{}'", field(k))))
        };
        let estimator: Estimator = field(3)
            .parse()
            .map_err(|_| perr(format!("line {line}: unknown estimator '{}'", field(3))))?;
        let converged = match field(8) {
            "true" => true,
            "false" => false,
            other => return Err(perr(format!("line {line}: bad flag '{other}'"))),
        };
        out.push(ReplicationRecord {
            setting: field(0)
                .parse()
                .map_err(|_| perr(format!("line {line}: bad setting '{}'", field(0))))?,
            n: int(1)?,
            rep: int(2)?,
            estimator: estimator.to_string(),
            se_lambda: opt_num(4)?,
            se_total: opt_num(5)?,
            iters: int(6)?,
            runtime_s: num(7)?,
            converged,
        });
    }
    Ok(out)
}

/// Per `(setting, estimator, n)` aggregate of the replication table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: SettingId,
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub mean_se_lambda: Option<f64>,
    pub median_se_lambda: Option<f64>,
    pub mean_se_total: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Groups records by `(setting, estimator, n)`; order is sorted and so
/// independent of the input order.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(SettingId, String, usize), Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.setting, r.estimator.clone(), r.n))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((setting, estimator, n), rows)| {
            let mut se: Vec<f64> = rows.iter().filter_map(|r| r.se_lambda).collect();
            let total: Vec<f64> = rows.iter().filter_map(|r| r.se_total).collect();
            SummaryRow {
                setting,
                estimator,
                n,
                reps: rows.len(),
                failures: rows.iter().filter(|r| r.se_lambda.is_none()).count(),
                mean_se_lambda: mean(&se),
                median_se_lambda: median(&mut se),
                mean_se_total: mean(&total),
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("setting,estimator,n,reps,failures,mean_se_lambda,median_se_lambda,mean_se_total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.setting,
            r.estimator,
            r.n,
            r.reps,
            r.failures,
            opt(r.mean_se_lambda),
            opt(r.median_se_lambda),
            opt(r.mean_se_total)
        ));
    }
    out
}
