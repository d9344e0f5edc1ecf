//! Sandwich covariance of the echelon-form estimator and a Monte Carlo
//! check of it.
//!
//! With `θ = (free loadings, unique variances)` and `L(θ, Σ)` the profile
//! loss, `√n(θ̂ − θ*) → N(0, V)` where `V = JΓJᵀ`, `J = −H⁻¹C`,
//! `H = ∂²L/∂θ∂θᵀ`, `C = ∂²L/∂θ∂vech(Σ)ᵀ` and `Γ` is the asymptotic
//! covariance of `√n vech(S)`. Derivatives are central finite differences.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{MdfaError, Result};
use crate::estimator::{fit_mdfa, fit_mdfa_cov, FitOptions, Init};
use crate::linalg;
use crate::model::{self, center_columns, covariance, phi_to_theta, theta_to_phi, ThetaVector};
use crate::population::{self, numeric_gradient, numeric_hessian};
use crate::rng;
use crate::simulation::{gen_dataset, with_workers};
use crate::tolerance;
use crate::{Mat, Vector};

/// Column-stacked lower triangle, diagonal included.
pub fn vech(s: &Mat) -> Result<Vector> {
    if !s.is_square() {
        return Err(MdfaError::InvalidInput(format!("vech needs a square matrix, got {:?}", s.shape())));
    }
    let scale = if s.is_empty() { 1.0 } else { s.amax().max(1.0) };
    if linalg::max_asymmetry(s) > tolerance::SYMMETRY * scale {
        return Err(MdfaError::InvalidInput("vech needs a symmetric matrix".into()));
    }
    let p = s.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for i in j..p {
            out.push(s[(i, j)]);
        }
    }
    Ok(Vector::from_vec(out))
}

pub fn unvech(v: &Vector, p: usize) -> Result<Mat> {
    if v.len() != p * (p + 1) / 2 {
        return Err(MdfaError::DimensionError(format!(
            "vech of a {p}x{p} matrix has {} entries, got {}",
            p * (p + 1) / 2,
            v.len()
        )));
    }
    let mut s = Mat::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            s[(i, j)] = v[k];
            s[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(s)
}

/// `(i, j)` row/column of each vech position.
fn vech_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| (j..p).map(move |i| (i, j))).collect()
}

/// Gaussian fourth-moment identity `Γ[(ij),(kl)] = σ_ik σ_jl + σ_il σ_jk`.
pub fn gamma_normal(sigma: &Mat) -> Result<Mat> {
    linalg::ensure_symmetric(sigma, "Σ")?;
    linalg::psd_eigen(sigma)?;
    let pairs = vech_pairs(sigma.nrows());
    let q = pairs.len();
    Ok(Mat::from_fn(q, q, |a, b| {
        let (i, j) = pairs[a];
        let (k, l) = pairs[b];
        sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
    }))
}

/// Sample covariance of `vech(xᵢxᵢᵀ)` over the rows of a centered `X`.
pub fn gamma_empirical(x: &Mat) -> Result<Mat> {
    linalg::ensure_finite(x, "X")?;
    let (n, p) = x.shape();
    if n < 2 {
        return Err(MdfaError::TooFewRows { rows: n });
    }
    let pairs = vech_pairs(p);
    let q = pairs.len();
    if n < 10 * q {
        log::warn!("only {n} rows for a {q}x{q} fourth-moment matrix");
    }
    let mut w = Mat::from_fn(n, q, |r, a| {
        let (i, j) = pairs[a];
        x[(r, i)] * x[(r, j)]
    });
    let means = w.row_mean();
    for mut row in w.row_iter_mut() {
        row -= &means;
    }
    Ok(linalg::symmetrize(&(w.transpose() * &w / (n as f64 - 1.0))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GammaSource {
    NormalClosedForm,
    Empirical,
}

fn numeric_rank(m: &Mat) -> usize {
    let Ok(sv) = linalg::singular_values(m) else {
        return 0;
    };
    let Some(&top) = sv.as_slice().first() else {
        return 0;
    };
    sv.iter().filter(|s| **s > 1e-9 * top.max(1.0)).count()
}

/// Whether deleting any row of `Λ` leaves two disjoint row blocks of rank `m`.
///
/// Exhaustive over deletions and bipartitions of the remaining rows, so
/// limited to `p ≤ 16`.
pub fn anderson_rubin(lambda: &Mat) -> Result<bool> {
    let (p, m) = lambda.shape();
    if p > 16 {
        return Err(MdfaError::InvalidInput(format!(
            "exhaustive Anderson–Rubin check is limited to p ≤ 16, got {p}"
        )));
    }
    if m == 0 || p < 2 * m + 1 {
        return Ok(false);
    }
    let rank_of = |rows: &[usize]| numeric_rank(&lambda.select_rows(rows.iter()));
    for deleted in 0..p {
        let rest: Vec<usize> = (0..p).filter(|&j| j != deleted).collect();
        let k = rest.len();
        // The first remaining row always sits in block A: halves the search.
        let found = (0u32..1 << (k - 1)).any(|mask| {
            let mask = (mask << 1) | 1;
            let (a, b): (Vec<usize>, Vec<usize>) = (0..k).map(|t| (t, rest[t])).fold(
                (Vec::new(), Vec::new()),
                |(mut a, mut b), (t, row)| {
                    if mask >> t & 1 == 1 {
                        a.push(row);
                    } else {
                        b.push(row);
                    }
                    (a, b)
                },
            );
            a.len() >= m && b.len() >= m && rank_of(&a) == m && rank_of(&b) == m
        });
        if !found {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub hessian_condition: f64,
    pub hessian_asymmetry: f64,
    /// `‖∇_θ L(θ*, Σ*)‖_∞`, zero at an exact minimizer.
    pub gradient_norm: f64,
    pub v_min_eigenvalue: f64,
    pub monte_carlo: Option<MonteCarloDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloDiagnostics {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    /// Mean of `√n(θ̂ − θ*)`.
    pub mean: Vec<f64>,
    /// Monte Carlo variance over `diag(V)`, per coordinate.
    pub variance_ratio: Vec<f64>,
    pub skewness: Vec<f64>,
    /// Non-excess kurtosis (3 for a Gaussian).
    pub kurtosis: Vec<f64>,
}

fn ser_mat<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::io::matrix_to_rows(m).serialize(s)
}

fn ser_opt_mat<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.as_ref().map(crate::io::matrix_to_rows).serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticReport {
    pub p: usize,
    pub m: usize,
    pub theta_star: ThetaVector,
    #[serde(rename = "V", serialize_with = "ser_mat")]
    pub v: Mat,
    #[serde(rename = "H", serialize_with = "ser_mat")]
    pub h: Mat,
    #[serde(rename = "J", serialize_with = "ser_mat")]
    pub j: Mat,
    pub gamma_source: GammaSource,
    #[serde(serialize_with = "ser_opt_mat")]
    pub mc_covariance: Option<Mat>,
    pub diagnostics: Diagnostics,
}

impl AsymptoticReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn infer_m(theta: &ThetaVector, p: usize) -> Result<usize> {
    if theta.unique_variances.len() != p {
        return Err(MdfaError::DimensionError(format!(
            "θ has {} unique variances for p = {p}",
            theta.unique_variances.len()
        )));
    }
    (1..p)
        .find(|&m| model::free_loading_count(p, m) == theta.free_loadings.len())
        .ok_or_else(|| {
            MdfaError::DimensionError(format!(
                "{} free loadings match no m < p = {p}",
                theta.free_loadings.len()
            ))
        })
}

fn loss_at(theta: &Vector, sigma: &Mat, p: usize, m: usize) -> f64 {
    let Ok(t) = ThetaVector::from_vector(theta, p, m) else {
        return f64::NAN;
    };
    if t.unique_variances.iter().any(|v| *v <= 0.0) {
        return f64::NAN;
    }
    match theta_to_phi(&t, p, m).and_then(|params| population::loss_terms(&params.phi(), sigma)) {
        Ok(l) => l.value,
        Err(_) => f64::NAN,
    }
}

fn checked(value: f64, theta: &Vector) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MdfaError::EvalError {
            point: theta.iter().copied().collect(),
            value,
        })
    }
}

/// `∂²L/∂θ∂vech(Σ)ᵀ` by nested central differences.
fn cross_derivative(theta: &Vector, sigma: &Mat, p: usize, m: usize) -> Result<Mat> {
    let v0 = vech(sigma)?;
    let mut c = Mat::zeros(theta.len(), v0.len());
    for a in 0..theta.len() {
        let h = tolerance::HESSIAN_STEP;
        for b in 0..v0.len() {
            let k = tolerance::HESSIAN_STEP * v0[b].abs().max(1.0);
            let corner = |sa: f64, sb: f64| -> Result<f64> {
                let mut t = theta.clone();
                t[a] += sa * h;
                let mut v = v0.clone();
                v[b] += sb * k;
                checked(loss_at(&t, &unvech(&v, p)?, p, m), &t)
            };
            let value = corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?;
            c[(a, b)] = value / (4.0 * h * k);
        }
    }
    Ok(c)
}

/// Spectral condition number, or `SingularHessian` above the threshold.
fn hessian_condition(h: &Mat) -> Result<f64> {
    let sv = linalg::singular_values(h)?;
    let condition = sv[0] / sv[sv.len() - 1];
    if !(condition <= tolerance::SINGULAR_HESSIAN_COND) {
        return Err(MdfaError::SingularHessian { condition });
    }
    Ok(condition)
}

/// Builds `H`, `C`, `J = −H⁻¹C` and `V = JΓJᵀ` at `(θ*, Σ*)`.
pub fn asymptotic_covariance(
    theta_star: &ThetaVector,
    sigma_star: &Mat,
    gamma: &Mat,
    gamma_source: GammaSource,
) -> Result<AsymptoticReport> {
    let p = sigma_star.nrows();
    linalg::ensure_symmetric(sigma_star, "Σ*")?;
    linalg::psd_eigen(sigma_star)?;
    let m = infer_m(theta_star, p)?;
    let q = p * (p + 1) / 2;
    if gamma.shape() != (q, q) {
        return Err(MdfaError::DimensionError(format!(
            "Γ must be {q}x{q}, got {:?}",
            gamma.shape()
        )));
    }
    let x0 = theta_star.to_vector();
    let f = |t: &Vector| loss_at(t, sigma_star, p, m);
    checked(f(&x0), &x0)?;

    let gradient = numeric_gradient(&f, &x0, tolerance::HESSIAN_STEP)?;
    let hessian = numeric_hessian(&f, &x0, tolerance::HESSIAN_STEP)?;
    let condition = hessian_condition(&hessian.matrix)?;
    let c = cross_derivative(&x0, sigma_star, p, m)?;
    let h_inv = hessian
        .matrix
        .clone()
        .try_inverse()
        .ok_or(MdfaError::SingularHessian { condition })?;
    let j = -(h_inv * c);
    let v = linalg::symmetrize(&(&j * gamma * j.transpose()));
    let v_min = linalg::sym_eigen(&v)?.values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AsymptoticReport {
        p,
        m,
        theta_star: theta_star.clone(),
        v,
        h: hessian.matrix,
        j,
        gamma_source,
        mc_covariance: None,
        diagnostics: Diagnostics {
            hessian_condition: condition,
            hessian_asymmetry: hessian.asymmetry,
            gradient_norm: gradient.amax(),
            v_min_eigenvalue: v_min,
            monte_carlo: None,
        },
    })
}

/// Which form of the alternation the Monte Carlo fits use. Both produce the
/// same iterates; the covariance path skips the `n × (m+p)` SVDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitPath {
    Data,
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityConfig {
    pub p: usize,
    pub m: usize,
    pub theta_star: ThetaVector,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Worker threads (0 = rayon default).
    pub workers: usize,
    pub path: FitPath,
    /// Standard deviation of the perturbation of `θ*` used as start.
    pub init_noise: f64,
    /// `ic5` and `init` are overridden per replication.
    pub fit: FitOptions,
}

impl NormalityConfig {
    pub fn new(p: usize, m: usize, theta_star: ThetaVector, n: usize, replications: usize, seed: u64) -> Self {
        NormalityConfig {
            p,
            m,
            theta_star,
            n,
            replications,
            seed,
            workers: 0,
            path: FitPath::Data,
            init_noise: 0.01,
            fit: FitOptions {
                tol: 1e-13,
                max_iter: 20_000,
                ..FitOptions::default()
            },
        }
    }
}

fn replicate(config: &NormalityConfig, sigma: &Mat, rep: usize) -> Result<Vector> {
    let (p, m) = (config.p, config.m);
    let x = gen_dataset(sigma, config.n, rng::derive_seed(config.seed, &[rep as u64, 0]))?;
    let mut noise = rng::stream(config.seed, &[rep as u64, 1]);
    let theta0 = config.theta_star.to_vector().map(|t| {
        let z: f64 = noise.sample(StandardNormal);
        t + config.init_noise * z
    });
    let mut start = ThetaVector::from_vector(&theta0, p, m)?;
    for (v, v_star) in start.unique_variances.iter_mut().zip(&config.theta_star.unique_variances) {
        if *v <= 0.0 {
            *v = *v_star;
        }
    }
    let opts = FitOptions {
        ic5: true,
        init: Init::User(theta_to_phi(&start, p, m)?),
        ..config.fit.clone()
    };
    let fit = match config.path {
        FitPath::Data => fit_mdfa(&x, m, &opts)?,
        FitPath::Covariance => fit_mdfa_cov(&covariance(&center_columns(&x)?, opts.denominator), m, &opts)?,
    };
    let theta_hat = phi_to_theta(&fit.params)?.to_vector();
    Ok((theta_hat - config.theta_star.to_vector()) * (config.n as f64).sqrt())
}

fn moments(draws: &[Vector], dim: usize) -> (Vector, Mat, Vec<f64>, Vec<f64>) {
    let r = draws.len() as f64;
    let mean = draws.iter().fold(Vector::zeros(dim), |acc, d| acc + d) / r;
    let mut cov = Mat::zeros(dim, dim);
    let mut m3 = vec![0.0; dim];
    let mut m4 = vec![0.0; dim];
    for d in draws {
        let c = d - &mean;
        cov += &c * c.transpose();
        for i in 0..dim {
            m3[i] += c[i].powi(3);
            m4[i] += c[i].powi(4);
        }
    }
    let var: Vec<f64> = (0..dim).map(|i| cov[(i, i)] / r).collect();
    let skew = (0..dim).map(|i| m3[i] / r / var[i].powf(1.5)).collect();
    let kurt = (0..dim).map(|i| m4[i] / r / (var[i] * var[i])).collect();
    (mean, linalg::symmetrize(&(cov / (r - 1.0))), skew, kurt)
}

/// Sandwich `V` under normal-theory `Γ` plus the Monte Carlo covariance of
/// `√n(θ̂ − θ*)` from `replications` echelon-mode fits on Gaussian data.
pub fn normality_study(config: &NormalityConfig) -> Result<AsymptoticReport> {
    let (p, m) = (config.p, config.m);
    if m == 0 || m >= p {
        return Err(MdfaError::DimensionError(format!("need 1 ≤ m < p, got m={m}, p={p}")));
    }
    if config.replications < 2 {
        return Err(MdfaError::InvalidInput("at least two replications are needed".into()));
    }
    let params = theta_to_phi(&config.theta_star, p, m)?;
    if (0..m).any(|k| params.lambda[(k, k)] <= 0.0) {
        return Err(MdfaError::NotIdentifiable("echelon diagonal of Λ* must be positive".into()));
    }
    if !anderson_rubin(&params.lambda)? {
        return Err(MdfaError::NotIdentifiable(
            "Λ* fails the Anderson–Rubin row-deletion condition".into(),
        ));
    }
    let sigma = params.implied_covariance();
    let mut report = asymptotic_covariance(&config.theta_star, &sigma, &gamma_normal(&sigma)?, GammaSource::NormalClosedForm)?;

    let outcomes: Vec<Result<Vector>> = with_workers(config.workers, || {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| replicate(config, &sigma, rep))
            .collect()
    });
    let mut failures = 0;
    let draws: Vec<Vector> = outcomes
        .into_iter()
        .filter_map(|o| match o {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("normality replication failed: {e}");
                failures += 1;
                None
            }
        })
        .collect();
    if draws.len() < 2 {
        return Err(MdfaError::InvalidInput(format!("{failures} of {} replications failed", config.replications)));
    }
    let dim = report.v.nrows();
    let (mean, cov, skewness, kurtosis) = moments(&draws, dim);
    report.diagnostics.monte_carlo = Some(MonteCarloDiagnostics {
        n: config.n,
        replications: config.replications,
        failures,
        mean: mean.iter().copied().collect(),
        variance_ratio: (0..dim).map(|i| cov[(i, i)] / report.v[(i, i)]).collect(),
        skewness,
        kurtosis,
    });
    report.mc_covariance = Some(cov);
    Ok(report)
}
