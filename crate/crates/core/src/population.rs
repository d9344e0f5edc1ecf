//! Population-level profile loss `L(Φ, Σ)`, the projector `A(Φ, Σ)` and
//! central finite differences.
//!
//! The same formula evaluated at `Σ = Ŝ_n` is the concentrated loss of the
//! estimator, so both share [`loss_terms`].

use serde::Serialize;

use crate::error::{MdfaError, Result};
use crate::linalg;
use crate::model::FactorParams;
use crate::tolerance;
use crate::{Mat, Vector};

/// Value of the profile loss split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossAtSigma {
    pub value: f64,
    /// `tr[(I − A)ᵀ Σ (I − A)]`
    pub term_projection: f64,
    /// `‖(Φᵀ)⁺ (ΦᵀΣΦ)^{1/2} − Φ‖²_F`
    pub term_sqrt: f64,
}

/// Intermediate quantities of the profile loss at `(Φ, Σ)`.
#[derive(Debug, Clone)]
pub struct ProfileParts {
    /// Leading eigenvectors `L(Φ, Σ)` of `ΦᵀΣΦ`, `(m+p) × r`.
    pub l: Mat,
    /// `(ΦᵀΣΦ)^{1/2}`
    pub sqrt: Mat,
    /// `Φ⁺`
    pub phi_pinv: Mat,
    /// `A = Φ L Lᵀ Φ⁺`
    pub a: Mat,
    /// All eigenvalues of `ΦᵀΣΦ`, nonincreasing.
    pub eigenvalues: Vector,
}

impl ProfileParts {
    /// `(Φᵀ)⁺ (ΦᵀΣΦ)^{1/2}`, the value of `XᵀẐ(Φ)/d` when `Σ = S`.
    pub fn fixed_point_map(&self) -> Mat {
        self.phi_pinv.transpose() * &self.sqrt
    }

    /// Number of retained eigenpairs of `ΦᵀΣΦ`.
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn loss(&self, phi: &Mat, sigma: &Mat) -> LossAtSigma {
        let p = phi.nrows();
        let resid = Mat::identity(p, p) - &self.a;
        let term_projection = (resid.transpose() * sigma * &resid).trace().max(0.0);
        let term_sqrt = (self.fixed_point_map() - phi).norm_squared();
        LossAtSigma {
            value: term_projection + term_sqrt,
            term_projection,
            term_sqrt,
        }
    }
}

/// Profile-loss intermediates. `Σ` must be PSD (not checked here); the rank
/// of `ΦᵀΣΦ` is capped at `p`.
pub fn profile_parts(phi: &Mat, sigma: &Mat) -> Result<ProfileParts> {
    let p = phi.nrows();
    if sigma.shape() != (p, p) {
        return Err(MdfaError::DimensionError(format!(
            "Σ is {:?} but Φ has {p} rows",
            sigma.shape()
        )));
    }
    let inner = linalg::symmetrize(&(phi.transpose() * sigma * phi));
    let eig = linalg::sym_eigen(&inner)?;
    let top = eig.values.get(0).copied().unwrap_or(0.0).max(0.0);
    let r = eig
        .values
        .iter()
        .take(p)
        .take_while(|&&v| v > tolerance::EIG_CLAMP_REL * top)
        .count();
    let l = eig.vectors.columns(0, r).into_owned();
    let root = Vector::from_iterator(r, eig.values.iter().take(r).map(|v| v.sqrt()));
    let sqrt = linalg::symmetrize(&(&l * Mat::from_diagonal(&root) * l.transpose()));
    let phi_pinv = linalg::pinv(phi)?;
    let a = phi * &l * l.transpose() * &phi_pinv;
    Ok(ProfileParts {
        l,
        sqrt,
        phi_pinv,
        a,
        eigenvalues: eig.values,
    })
}

/// Both terms of the profile loss for a PSD `Σ`.
pub fn loss_terms(phi: &Mat, sigma: &Mat) -> Result<LossAtSigma> {
    Ok(profile_parts(phi, sigma)?.loss(phi, sigma))
}

fn ensure_positive_definite(sigma: &Mat) -> Result<()> {
    let eig = linalg::sym_eigen(sigma)?;
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(MdfaError::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// `A(Φ, Σ) = Φ L Lᵀ Φ⁺` for positive definite `Σ`.
pub fn projector_a(params: &FactorParams, sigma: &Mat) -> Result<Mat> {
    ensure_positive_definite(sigma)?;
    Ok(profile_parts(&params.phi(), sigma)?.a)
}

/// `L(Φ, Σ)` for positive definite `Σ`.
pub fn population_loss(params: &FactorParams, sigma: &Mat) -> Result<LossAtSigma> {
    ensure_positive_definite(sigma)?;
    loss_terms(&params.phi(), sigma)
}

/// `max_Φ |L(Φ, S) − L(Φ, Σ)|` over a grid of parameters.
pub fn uniform_gap(grid: &[FactorParams], s: &Mat, sigma: &Mat) -> Result<f64> {
    let mut worst = 0.0f64;
    for params in grid {
        let phi = params.phi();
        let gap = (loss_terms(&phi, s)?.value - loss_terms(&phi, sigma)?.value).abs();
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn steps(x: &Vector, base: f64) -> Vector {
    x.map(|xi| base * xi.abs().max(1.0))
}

fn eval<F: Fn(&Vector) -> f64>(f: &F, x: &Vector) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MdfaError::EvalError {
            point: x.iter().copied().collect(),
            value: v,
        })
    }
}

/// Central-difference gradient with per-coordinate step `base·max(1, |x_i|)`.
pub fn numeric_gradient<F: Fn(&Vector) -> f64>(f: &F, x: &Vector, base: f64) -> Result<Vector> {
    let h = steps(x, base);
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h[i];
        let up = eval(f, &probe)?;
        probe[i] = x[i] - h[i];
        let down = eval(f, &probe)?;
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h[i]);
    }
    Ok(g)
}

/// Symmetrized finite-difference Hessian.
#[derive(Debug, Clone)]
pub struct HessianEstimate {
    pub matrix: Mat,
    /// `max |H − Hᵀ| / max(1, max |H|)` before symmetrization.
    pub asymmetry: f64,
}

/// Hessian as the central-difference Jacobian of the central-difference
/// gradient, symmetrized as `(H + Hᵀ)/2`.
pub fn numeric_hessian<F: Fn(&Vector) -> f64>(
    f: &F,
    x: &Vector,
    base: f64,
) -> Result<HessianEstimate> {
    let n = x.len();
    let h = steps(x, base);
    let mut raw = Mat::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        probe[j] = x[j] + h[j];
        let up = numeric_gradient(f, &probe, base)?;
        probe[j] = x[j] - h[j];
        let down = numeric_gradient(f, &probe, base)?;
        probe[j] = x[j];
        raw.set_column(j, &((up - down) / (2.0 * h[j])));
    }
    let scale = if raw.is_empty() { 1.0 } else { raw.amax().max(1.0) };
    let asymmetry = linalg::max_asymmetry(&raw) / scale;
    Ok(HessianEstimate {
        matrix: linalg::symmetrize(&raw),
        asymmetry,
    })
}
