//! Parameters, scores, covariance estimates and their constraint checks.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{MdfaError, Result};
use crate::linalg;
use crate::tolerance;
use crate::{Mat, Vector};

/// Divisor used for covariances, score constraints and the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Denominator {
    #[serde(rename = "n")]
    N,
    #[default]
    #[serde(rename = "n-1")]
    NMinus1,
}

impl Denominator {
    pub fn divisor(self, n: usize) -> f64 {
        match self {
            Denominator::N => n as f64,
            Denominator::NMinus1 => n as f64 - 1.0,
        }
    }
}

impl std::str::FromStr for Denominator {
    type Err = MdfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "N" => Ok(Denominator::N),
            "n-1" | "N-1" | "n_minus_1" => Ok(Denominator::NMinus1),
            other => Err(MdfaError::InvalidInput(format!(
                "unknown denominator '{other}' (expected n or n-1)"
            ))),
        }
    }
}

/// Box constraints of the parameter space: `|λ_jk| ≤ c_lambda`,
/// `c_lower ≤ |σ_j| ≤ c_upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub c_lambda: f64,
    pub c_lower: f64,
    pub c_upper: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            c_lambda: 10.0,
            c_lower: 1e-3,
            c_upper: 10.0,
        }
    }
}

/// `Φ = [Λ, Ψ]` with Ψ stored as the signed diagonal `σ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub lambda: Mat,
    pub psi: Vector,
    pub bounds: Bounds,
}

impl FactorParams {
    pub fn new(lambda: Mat, psi: Vector) -> Result<Self> {
        if lambda.nrows() != psi.len() {
            return Err(MdfaError::DimensionError(format!(
                "Λ has {} rows but Ψ has {} entries",
                lambda.nrows(),
                psi.len()
            )));
        }
        linalg::ensure_finite(&lambda, "Λ")?;
        if psi.iter().any(|x| !x.is_finite()) {
            return Err(MdfaError::InvalidInput("Ψ has non-finite entries".into()));
        }
        Ok(FactorParams {
            lambda,
            psi,
            bounds: Bounds::default(),
        })
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Builds the parameters from `Λ` and the unique variances `σ_j² ≥ 0`.
    pub fn from_unique_variances(lambda: Mat, psi2: &Vector) -> Result<Self> {
        if psi2.iter().any(|&v| v < 0.0) {
            return Err(MdfaError::InvalidInput(
                "unique variances must be nonnegative".into(),
            ));
        }
        Self::new(lambda, psi2.map(f64::sqrt))
    }

    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn m(&self) -> usize {
        self.lambda.ncols()
    }

    /// The `p × (m+p)` matrix `[Λ, diag(σ)]`.
    pub fn phi(&self) -> Mat {
        let (p, m) = self.lambda.shape();
        let mut phi = Mat::zeros(p, m + p);
        phi.columns_mut(0, m).copy_from(&self.lambda);
        for j in 0..p {
            phi[(j, m + j)] = self.psi[j];
        }
        phi
    }

    /// Unique variances `σ_j²`.
    pub fn unique_variances(&self) -> Vector {
        self.psi.map(|s| s * s)
    }

    /// Implied covariance `ΛΛᵀ + Ψ²`.
    pub fn implied_covariance(&self) -> Mat {
        let mut s = &self.lambda * self.lambda.transpose();
        for j in 0..self.p() {
            s[(j, j)] += self.psi[j] * self.psi[j];
        }
        s
    }

    /// Checks membership in the bounded parameter space.
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if let Some(x) = self.lambda.iter().find(|x| x.abs() > b.c_lambda) {
            return Err(MdfaError::InvalidInput(format!(
                "loading {x} exceeds c_lambda = {}",
                b.c_lambda
            )));
        }
        if let Some(s) = self
            .psi
            .iter()
            .find(|s| s.abs() < b.c_lower || s.abs() > b.c_upper)
        {
            return Err(MdfaError::InvalidInput(format!(
                "|σ| = {} outside [{}, {}]",
                s.abs(),
                b.c_lower,
                b.c_upper
            )));
        }
        Ok(())
    }

    /// Projects onto the bounded parameter space entrywise. Returns whether
    /// anything moved.
    pub fn clamp_to_bounds(&mut self) -> bool {
        let b = self.bounds;
        let mut moved = false;
        for x in self.lambda.iter_mut() {
            if x.abs() > b.c_lambda {
                *x = x.signum() * b.c_lambda;
                moved = true;
            }
        }
        for s in self.psi.iter_mut() {
            let mag = s.abs();
            if mag < b.c_lower || mag > b.c_upper {
                let sign = if *s < 0.0 { -1.0 } else { 1.0 };
                *s = sign * mag.clamp(b.c_lower, b.c_upper);
                moved = true;
            }
        }
        if moved {
            warn!("parameter iterate clamped to the bounded parameter space");
        }
        moved
    }

    /// Zeroes the strict upper triangle of Λ (the echelon form).
    pub fn zero_upper_triangle(&mut self) {
        let m = self.m();
        for k in 0..m {
            for j in 0..k.min(self.p()) {
                self.lambda[(j, k)] = 0.0;
            }
        }
    }

    /// Flips loading columns so that `λ_jj ≥ 0`; returns the flipped columns.
    pub fn normalize_diagonal_signs(&mut self) -> Vec<usize> {
        let mut flipped = Vec::new();
        for j in 0..self.m().min(self.p()) {
            if self.lambda[(j, j)] < 0.0 {
                self.lambda.column_mut(j).neg_mut();
                flipped.push(j);
            }
        }
        flipped
    }

    /// Random parameters with loadings uniform on `±loading_max` and
    /// `|σ_j|` uniform on `psi_range`.
    pub fn random<R: rand::Rng + ?Sized>(
        rng: &mut R,
        p: usize,
        m: usize,
        loading_max: f64,
        psi_range: (f64, f64),
    ) -> Self {
        let lambda = Mat::from_fn(p, m, |_, _| rng.random_range(-loading_max..=loading_max));
        let psi = Vector::from_fn(p, |_, _| rng.random_range(psi_range.0..=psi_range.1));
        FactorParams {
            lambda,
            psi,
            bounds: Bounds::default(),
        }
    }

    pub fn is_echelon(&self) -> bool {
        (0..self.m()).all(|k| (0..k.min(self.p())).all(|j| self.lambda[(j, k)] == 0.0))
    }
}

/// Number of free loadings under the echelon constraint: `pm − m(m−1)/2`.
pub fn free_loading_count(p: usize, m: usize) -> usize {
    p * m - m * (m.saturating_sub(1)) / 2
}

/// Length of the identified parameter vector `θ`.
pub fn theta_len(p: usize, m: usize) -> usize {
    free_loading_count(p, m) + p
}

/// Identified parameter vector: column-stacked lower trapezoid of Λ followed
/// by the unique variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub free_loadings: Vec<f64>,
    pub unique_variances: Vec<f64>,
}

impl ThetaVector {
    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(
            self.free_loadings.len() + self.unique_variances.len(),
            self.free_loadings
                .iter()
                .chain(self.unique_variances.iter())
                .copied(),
        )
    }

    pub fn from_vector(v: &Vector, p: usize, m: usize) -> Result<Self> {
        let k = free_loading_count(p, m);
        if v.len() != k + p {
            return Err(MdfaError::DimensionError(format!(
                "θ has length {} but p={p}, m={m} needs {}",
                v.len(),
                k + p
            )));
        }
        Ok(ThetaVector {
            free_loadings: v.rows(0, k).iter().copied().collect(),
            unique_variances: v.rows(k, p).iter().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.free_loadings.len() + self.unique_variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps echelon-form parameters to `θ`.
pub fn phi_to_theta(params: &FactorParams) -> Result<ThetaVector> {
    let (p, m) = params.lambda.shape();
    for k in 0..m {
        for j in 0..k.min(p) {
            let x = params.lambda[(j, k)];
            if x.abs() > tolerance::ECHELON_ZERO {
                return Err(MdfaError::NotIdentified(format!(
                    "λ[{j},{k}] = {x:e} above the diagonal"
                )));
            }
        }
    }
    let mut free = Vec::with_capacity(free_loading_count(p, m));
    for k in 0..m {
        for j in k..p {
            free.push(params.lambda[(j, k)]);
        }
    }
    Ok(ThetaVector {
        free_loadings: free,
        unique_variances: params.unique_variances().iter().copied().collect(),
    })
}

/// Inverse of [`phi_to_theta`]: zeros above the diagonal, `σ_j = +√σ_j²`.
pub fn theta_to_phi(theta: &ThetaVector, p: usize, m: usize) -> Result<FactorParams> {
    if m > p || theta.free_loadings.len() != free_loading_count(p, m) {
        return Err(MdfaError::DimensionError(format!(
            "θ has {} free loadings, p={p}, m={m} needs {}",
            theta.free_loadings.len(),
            free_loading_count(p, m)
        )));
    }
    if theta.unique_variances.len() != p {
        return Err(MdfaError::DimensionError(format!(
            "θ has {} unique variances, expected {p}",
            theta.unique_variances.len()
        )));
    }
    let mut lambda = Mat::zeros(p, m);
    let mut it = theta.free_loadings.iter();
    for k in 0..m {
        for j in k..p {
            lambda[(j, k)] = *it.next().expect("length checked");
        }
    }
    let psi2 = Vector::from_column_slice(&theta.unique_variances);
    FactorParams::from_unique_variances(lambda, &psi2)
}

/// Common and unique factor scores `Z = [F, E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub f: Mat,
    pub e: Mat,
    pub denominator: Denominator,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    /// The `n × (m+p)` matrix `[F, E]`.
    pub fn z(&self) -> Mat {
        let (n, m) = self.f.shape();
        let p = self.e.ncols();
        let mut z = Mat::zeros(n, m + p);
        z.columns_mut(0, m).copy_from(&self.f);
        z.columns_mut(m, p).copy_from(&self.e);
        z
    }

    pub fn from_z(z: &Mat, m: usize, denominator: Denominator) -> Self {
        let p = z.ncols() - m;
        ScoreMatrix {
            f: z.columns(0, m).into_owned(),
            e: z.columns(m, p).into_owned(),
            denominator,
        }
    }
}

/// Maximum absolute violation of each score constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreConstraintReport {
    /// `max |1ᵀF|`
    pub f_centered: f64,
    /// `max |1ᵀE|`
    pub e_centered: f64,
    /// `max |FᵀF/d − I_m|`
    pub f_orthonormal: f64,
    /// `max |EᵀE/d − I_p|`
    pub e_orthonormal: f64,
    /// `max |FᵀE|`
    pub cross: f64,
}

impl ScoreConstraintReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.f_centered,
            self.e_centered,
            self.f_orthonormal,
            self.e_orthonormal,
            self.cross,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

fn column_sum_violation(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.sum().abs())
        .fold(0.0, f64::max)
}

/// Evaluates the five score constraints.
pub fn check_scores(z: &ScoreMatrix) -> Result<ScoreConstraintReport> {
    let n = z.n();
    let (m, p) = (z.f.ncols(), z.e.ncols());
    if z.e.nrows() != n {
        return Err(MdfaError::DimensionError("F and E row counts differ".into()));
    }
    if n <= m + p {
        return Err(MdfaError::DimensionError(format!(
            "need n > m + p, got n={n}, m={m}, p={p}"
        )));
    }
    let d = z.denominator.divisor(n);
    let ftf = z.f.transpose() * &z.f / d - Mat::identity(m, m);
    let ete = z.e.transpose() * &z.e / d - Mat::identity(p, p);
    let fte = z.f.transpose() * &z.e;
    Ok(ScoreConstraintReport {
        f_centered: column_sum_violation(&z.f),
        e_centered: column_sum_violation(&z.e),
        f_orthonormal: ftf.amax(),
        e_orthonormal: ete.amax(),
        cross: if fte.is_empty() { 0.0 } else { fte.amax() },
    })
}

/// Sample covariance with its denominator tag.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub s: Mat,
    pub denominator: Denominator,
}

impl CovarianceEstimate {
    /// Wraps a user-supplied covariance after checking symmetry and PSD.
    pub fn from_matrix(s: Mat, denominator: Denominator) -> Result<Self> {
        linalg::psd_eigen(&s)?;
        Ok(CovarianceEstimate {
            s: linalg::symmetrize(&s),
            denominator,
        })
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }
}

/// Subtracts column means.
pub fn center_columns(x: &Mat) -> Result<Mat> {
    let n = x.nrows();
    if n < 2 {
        return Err(MdfaError::TooFewRows { rows: n });
    }
    linalg::ensure_finite(x, "data matrix")?;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    Ok(out)
}

/// `XᵀX / d` for a centered data matrix.
pub fn covariance(x: &Mat, denominator: Denominator) -> CovarianceEstimate {
    let d = denominator.divisor(x.nrows());
    let s = x.transpose() * x / d;
    CovarianceEstimate {
        s: linalg::symmetrize(&s),
        denominator,
    }
}
