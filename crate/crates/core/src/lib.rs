//! Matrix decomposition factor analysis (MDFA).
//!
//! The crate fits the factor model `x = Λf + Ψe` by jointly minimizing
//! `‖X − ZΦᵀ‖²_F / n` over parameters `Φ = [Λ, Ψ]` and constrained scores
//! `Z = [F, E]`, and ships the tooling needed to study the estimator:
//!
//! * [`linalg`]: dense kernels (thin SVD, symmetric eigendecomposition, PSD
//!   square root, pseudoinverse, orthogonal complements, Procrustes).
//! * [`model`]: parameter and score containers, constraint checkers and the
//!   echelon (lower-trapezoid) parameterization `θ ↔ Φ`.
//! * [`estimator`]: the alternating algorithm on data, the covariance-only
//!   fixed point, the concentrated loss, plus PCA and OLS baselines.
//! * [`population`]: population loss, projector and finite differences.
//! * [`asymptotics`]: sandwich covariance `V = JΓJᵀ` and a Monte Carlo check.
//! * [`simulation`]: true-parameter generators, data generation, SE metrics
//!   and the replication harness.
//! * [`io`] and [`report`]: matrix/record file formats and SVG charts.

pub mod asymptotics;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod population;
pub mod report;
pub mod rng;
pub mod simulation;
pub mod tolerance;

pub use error::{MdfaError, Result};
pub use estimator::{
    concentrated_loss, fit_mdfa, fit_mdfa_cov, fit_ols, fit_pca, FitOptions, FitResult, Init,
};
pub use model::{CovarianceEstimate, Denominator, FactorParams, ScoreMatrix, ThetaVector};

/// Dense matrix type used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
