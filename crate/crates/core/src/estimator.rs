//! MDFA fitting routines and baselines.
//!
//! The alternating algorithm minimizes `L_n(Φ, Z) = ‖X − ZΦᵀ‖²_F / d` by
//! exact block updates: the score step uses the SVD of `XΦ/√d`, the
//! parameter step reads `[XᵀF/d, diag(XᵀE/d)]`. Because `XᵀẐ(Φ)/d` equals
//! `(Φᵀ)⁺(ΦᵀSΦ)^{1/2}`, the same iteration can run on the covariance alone.
//!
//! `loss_trace[t]` is always the concentrated loss `L_n(Φ_t)`, so both paths
//! record the same sequence.

use log::debug;
use rand::Rng;

use crate::error::{MdfaError, Result};
use crate::linalg;
use crate::model::{self, Bounds, CovarianceEstimate, Denominator, FactorParams, ScoreMatrix};
use crate::population;
use crate::rng;
use crate::tolerance;
use crate::{Mat, Vector};

/// Starting point of the alternation.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Leading principal components of `S` with
    /// `σ_j = sqrt(max(s_jj − (ΛΛᵀ)_jj, 0.1 s_jj))`.
    PcaBased,
    Random(u64),
    User(FactorParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once the loss decreases by less than this.
    pub tol: f64,
    pub denominator: Denominator,
    pub init: Init,
    /// Keep Λ lower-trapezoid and make `λ_jj ≥ 0` at the end.
    pub ic5: bool,
    /// Keep only the `k` largest loadings in magnitude.
    pub sparsity_k: Option<usize>,
    pub bounds: Bounds,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 5000,
            tol: 1e-9,
            denominator: Denominator::NMinus1,
            init: Init::PcaBased,
            ic5: false,
            sparsity_k: None,
            bounds: Bounds::default(),
        }
    }
}

impl FitOptions {
    fn validate(&self, p: usize, m: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MdfaError::InvalidInput(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(MdfaError::InvalidInput("max_iter must be positive".into()));
        }
        match self.sparsity_k {
            Some(0) => Err(MdfaError::InvalidInput("sparsity budget must be positive".into())),
            Some(k) if k > p * m => Err(MdfaError::InvalidInput(format!(
                "sparsity budget {k} exceeds p·m = {}",
                p * m
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FactorParams,
    pub scores: Option<ScoreMatrix>,
    pub loss_trace: Vec<f64>,
    /// Number of parameter updates performed.
    pub iterations: usize,
    pub converged: bool,
}

fn check_shapes(n: usize, p: usize, m: usize) -> Result<()> {
    if m == 0 || m >= p {
        return Err(MdfaError::DimensionError(format!(
            "need 1 ≤ m < p, got m={m}, p={p}"
        )));
    }
    if n <= m + p {
        return Err(MdfaError::DimensionError(format!(
            "need n > m + p, got n={n}, m={m}, p={p}"
        )));
    }
    Ok(())
}

/// Optimal scores `Ẑ(Φ) = √d (K̂L̂ᵀ + K̂⊥L̂⊥ᵀ)` for centered `X`.
///
/// `K̂⊥` is taken orthogonal to both `K̂` and `1_n`, so the scores stay
/// centered.
pub fn update_scores(x: &Mat, params: &FactorParams, denominator: Denominator) -> Result<ScoreMatrix> {
    let (n, p) = x.shape();
    let m = params.m();
    if params.p() != p {
        return Err(MdfaError::DimensionError(format!(
            "data has {p} columns but Φ has {} rows",
            params.p()
        )));
    }
    check_shapes(n, p, m)?;
    let d = denominator.divisor(n);
    let y = x * params.phi() / d.sqrt();
    let svd = linalg::thin_svd(&y, p)?;
    let lead = svd.d[0];
    let relative = if lead > 0.0 { (svd.d[p - 1] / lead).powi(2) } else { 0.0 };
    if relative < tolerance::RANK_DEFICIENT_REL {
        return Err(MdfaError::RankDeficient {
            relative_eigenvalue: relative,
        });
    }

    let mut aug = Mat::zeros(n, p + 1);
    aug.column_mut(0).fill(1.0 / (n as f64).sqrt());
    aug.columns_mut(1, p).copy_from(&svd.u);
    let k_perp = linalg::orth_complement(&aug, m)?;
    let l_perp = linalg::orth_complement(&svd.v, m)?;

    let z = (&svd.u * svd.v.transpose() + k_perp * l_perp.transpose()) * d.sqrt();
    Ok(ScoreMatrix::from_z(&z, m, denominator))
}

/// `[XᵀF/d, diag(XᵀE/d)]`, the unconstrained minimizer of `L_n(·, Z)`.
pub fn update_params(x: &Mat, z: &ScoreMatrix) -> FactorParams {
    let d = z.denominator.divisor(x.nrows());
    let lambda = x.transpose() * &z.f / d;
    let p = x.ncols();
    let psi = Vector::from_fn(p, |j, _| x.column(j).dot(&z.e.column(j)) / d);
    FactorParams {
        lambda,
        psi,
        bounds: Bounds::default(),
    }
}

/// `‖X − ZΦᵀ‖²_F / d`.
pub fn empirical_loss(x: &Mat, params: &FactorParams, z: &ScoreMatrix) -> f64 {
    let d = z.denominator.divisor(x.nrows());
    (x - z.z() * params.phi().transpose()).norm_squared() / d
}

/// Closed-form `min_Z L_n(Φ, Z)` computed from the covariance alone.
pub fn concentrated_loss(params: &FactorParams, s: &CovarianceEstimate) -> Result<f64> {
    linalg::psd_eigen(&s.s)?;
    Ok(population::loss_terms(&params.phi(), &s.s)?.value)
}

/// Zeroes all but the `k` largest loadings in magnitude; ties go to the
/// smaller `(row, col)` index.
pub fn keep_top_k(lambda: &mut Mat, k: usize) {
    let (p, m) = lambda.shape();
    let mut idx: Vec<(usize, usize)> = (0..p).flat_map(|j| (0..m).map(move |c| (j, c))).collect();
    idx.sort_by(|&a, &b| {
        lambda[b]
            .abs()
            .total_cmp(&lambda[a].abs())
            .then(a.cmp(&b))
    });
    for &pos in idx.iter().skip(k) {
        lambda[pos] = 0.0;
    }
}

fn project(lambda: Mat, psi: Vector, opts: &FitOptions) -> FactorParams {
    let mut params = FactorParams {
        lambda,
        psi,
        bounds: opts.bounds,
    };
    if opts.ic5 {
        params.zero_upper_triangle();
    }
    if let Some(k) = opts.sparsity_k {
        keep_top_k(&mut params.lambda, k);
    }
    params.clamp_to_bounds();
    params
}

fn project_raw(raw: &Mat, m: usize, opts: &FitOptions) -> FactorParams {
    let p = raw.nrows();
    let lambda = raw.columns(0, m).into_owned();
    let psi = Vector::from_fn(p, |j, _| raw[(j, m + j)]);
    project(lambda, psi, opts)
}

fn initial_params(s: &Mat, m: usize, opts: &FitOptions) -> Result<FactorParams> {
    let p = s.nrows();
    let params = match &opts.init {
        Init::PcaBased => {
            let eig = linalg::sym_eigen(s)?;
            let scale = Vector::from_fn(m, |k, _| eig.values[k].max(0.0).sqrt());
            let lambda = eig.vectors.columns(0, m) * Mat::from_diagonal(&scale);
            let common = (&lambda * lambda.transpose()).diagonal();
            let psi = Vector::from_fn(p, |j, _| {
                let sjj = s[(j, j)];
                (sjj - common[j]).max(0.1 * sjj).sqrt()
            });
            (lambda, psi)
        }
        Init::Random(seed) => {
            let mut rng = rng::stream(*seed, &[]);
            let lambda = Mat::from_fn(p, m, |j, _| {
                0.5 * s[(j, j)].sqrt() * rng.random_range(-1.0..1.0)
            });
            let psi = Vector::from_fn(p, |j, _| s[(j, j)].sqrt() * rng.random_range(0.5..1.0));
            (lambda, psi)
        }
        Init::User(user) => {
            if user.p() != p || user.m() != m {
                return Err(MdfaError::DimensionError(format!(
                    "initial Φ is {}x{} but the fit needs {p}x{m}",
                    user.p(),
                    user.m()
                )));
            }
            (user.lambda.clone(), user.psi.clone())
        }
    };
    Ok(project(params.0, params.1, opts))
}

/// One evaluation of the current iterate: its concentrated loss, the raw
/// update `XᵀẐ/d` and (data path only) the scores.
type Evaluation = (f64, Mat, Option<ScoreMatrix>);

fn alternate<E>(mut params: FactorParams, opts: &FitOptions, mut evaluate: E) -> Result<FitResult>
where
    E: FnMut(&FactorParams) -> Result<Evaluation>,
{
    let m = params.m();
    let mut trace: Vec<f64> = Vec::new();
    let mut scores: Option<ScoreMatrix>;
    let mut iterations = 0;
    let mut converged = false;
    let mut retried = false;
    loop {
        let (loss, raw, z) = match evaluate(&params) {
            Ok(v) => v,
            Err(MdfaError::RankDeficient { relative_eigenvalue }) if !retried => {
                debug!("rank-deficient iterate (relative eigenvalue {relative_eigenvalue:e}); perturbing Ψ");
                retried = true;
                for s in params.psi.iter_mut() {
                    *s += if *s < 0.0 { -1.0 } else { 1.0 } * tolerance::RANK_RETRY_PERTURBATION;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        trace.push(loss);
        scores = z;
        if let [.., prev, last] = trace.as_slice() {
            if prev - last < opts.tol {
                converged = true;
                break;
            }
        }
        if iterations == opts.max_iter {
            break;
        }
        params = project_raw(&raw, m, opts);
        iterations += 1;
    }
    if opts.ic5 {
        let flipped = params.normalize_diagonal_signs();
        if let Some(z) = scores.as_mut() {
            for j in flipped {
                z.f.column_mut(j).neg_mut();
            }
        }
    }
    Ok(FitResult {
        params,
        scores,
        loss_trace: trace,
        iterations,
        converged,
    })
}

/// Alternating MDFA fit on an `n × p` data matrix (centered internally).
pub fn fit_mdfa(x: &Mat, m: usize, opts: &FitOptions) -> Result<FitResult> {
    let (n, p) = x.shape();
    check_shapes(n, p, m)?;
    opts.validate(p, m)?;
    let xc = model::center_columns(x)?;
    let s = model::covariance(&xc, opts.denominator);
    let init = initial_params(&s.s, m, opts)?;
    let d = opts.denominator.divisor(n);
    alternate(init, opts, |params| {
        let z = update_scores(&xc, params, opts.denominator)?;
        let loss = empirical_loss(&xc, params, &z);
        let raw = xc.transpose() * z.z() / d;
        Ok((loss, raw, Some(z)))
    })
}

/// Covariance-only MDFA: iterates `Φ ← P((Φᵀ)⁺(ΦᵀSΦ)^{1/2})` where `P`
/// reads the loadings block and the diagonal of the uniqueness block.
pub fn fit_mdfa_cov(s: &CovarianceEstimate, m: usize, opts: &FitOptions) -> Result<FitResult> {
    let p = s.p();
    if m == 0 || m >= p {
        return Err(MdfaError::DimensionError(format!(
            "need 1 ≤ m < p, got m={m}, p={p}"
        )));
    }
    opts.validate(p, m)?;
    let eig = linalg::psd_eigen(&s.s)?;
    let min = eig.values[p - 1];
    if min <= 0.0 {
        return Err(MdfaError::NotPsd {
            min_eigenvalue: min,
        });
    }
    let init = initial_params(&s.s, m, opts)?;
    alternate(init, opts, |params| {
        let phi = params.phi();
        let parts = population::profile_parts(&phi, &s.s)?;
        if parts.rank() < p {
            let lead = parts.eigenvalues[0];
            return Err(MdfaError::RankDeficient {
                relative_eigenvalue: if lead > 0.0 { parts.eigenvalues[p - 1] / lead } else { 0.0 },
            });
        }
        let loss = parts.loss(&phi, &s.s).value;
        Ok((loss, parts.fixed_point_map(), None))
    })
}

/// Principal-component estimates `Λ̂ = L_mΔ_m/√n`, `F̂ = √n K_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub lambda: Mat,
    pub scores: Mat,
}

/// PCA closed form from the thin SVD of a centered `X`.
pub fn fit_pca(x: &Mat, m: usize) -> Result<PcaFit> {
    let n = x.nrows();
    if m == 0 || m > n.min(x.ncols()) {
        return Err(MdfaError::DimensionError(format!(
            "need 1 ≤ m ≤ min(n, p), got m={m}"
        )));
    }
    let svd = linalg::thin_svd(x, m)?;
    let root_n = (n as f64).sqrt();
    Ok(PcaFit {
        lambda: &svd.v * Mat::from_diagonal(&svd.d) / root_n,
        scores: svd.u * root_n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub params: FactorParams,
    /// `‖S − ΛΛᵀ − Ψ²‖²_F` after each full update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares factor analysis by principal-factor alternation.
pub fn fit_ols(s: &CovarianceEstimate, m: usize, opts: &FitOptions) -> Result<OlsFit> {
    let p = s.p();
    if m == 0 || m >= p {
        return Err(MdfaError::DimensionError(format!(
            "need 1 ≤ m < p, got m={m}, p={p}"
        )));
    }
    opts.validate(p, m)?;
    linalg::psd_eigen(&s.s)?;
    let diag = s.s.diagonal();
    // squared-multiple-correlation start when S is invertible
    let mut psi2 = match s.s.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            Vector::from_fn(p, |j, _| (1.0 / inv[(j, j)]).min(diag[j]).max(0.0))
        }
        None => diag * 0.5,
    };
    let mut lambda = Mat::zeros(p, m);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let reduced = &s.s - Mat::from_diagonal(&psi2);
        let eig = linalg::sym_eigen(&linalg::symmetrize(&reduced))?;
        let scale = Vector::from_fn(m, |k, _| eig.values[k].max(0.0).sqrt());
        lambda = eig.vectors.columns(0, m) * Mat::from_diagonal(&scale);
        let common = &lambda * lambda.transpose();
        psi2 = Vector::from_fn(p, |j, _| (s.s[(j, j)] - common[(j, j)]).max(0.0));
        let objective = (&s.s - common - Mat::from_diagonal(&psi2)).norm_squared();
        iterations += 1;
        trace.push(objective);
        if let [.., prev, last] = trace.as_slice() {
            if prev - last < opts.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(OlsFit {
        params: FactorParams {
            lambda,
            psi: psi2.map(f64::sqrt),
            bounds: opts.bounds,
        },
        objective_trace: trace,
        iterations,
        converged,
    })
}
