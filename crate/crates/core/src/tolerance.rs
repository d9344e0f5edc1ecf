//! Numerical tolerances shared by every module.
//!
//! All thresholds live here so that tests and production code agree on what
//! "orthonormal", "symmetric" or "PSD" means.

/// Orthonormality of singular/eigenvector bases (Frobenius of `UᵀU − I`).
pub const ORTHONORMAL: f64 = 1e-10;

/// Maximum absolute asymmetry, relative to `max(1, max|a_ij|)`, accepted for
/// inputs that must be symmetric.
pub const SYMMETRY: f64 = 1e-10;

/// Eigenvalues below `EIG_CLAMP_REL · λ_max` are treated as zero before
/// square roots and pseudoinverses.
pub const EIG_CLAMP_REL: f64 = 1e-10;

/// Eigenvalues below `-NOT_PSD · max(1, λ_max)` make a matrix non-PSD.
pub const NOT_PSD: f64 = 1e-6;

/// Default absolute tolerance for the score constraints.
pub const SCORE_CONSTRAINT: f64 = 1e-8;

/// Upper-triangle entries of Λ above this magnitude violate the echelon form.
pub const ECHELON_ZERO: f64 = 1e-10;

/// Relative size of the p-th eigenvalue of `ΦᵀSΦ` below which the fit
/// reports rank deficiency.
pub const RANK_DEFICIENT_REL: f64 = 1e-10;

/// Additive perturbation of the unique standard deviations used once when a
/// rank-deficient iterate is hit.
pub const RANK_RETRY_PERTURBATION: f64 = 1e-6;

/// Condition number of the loss Hessian above which it is called singular.
pub const SINGULAR_HESSIAN_COND: f64 = 1e10;

/// Slack for monotone loss traces.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Default finite-difference base steps (scaled by `max(1, |x_i|)`).
pub const GRADIENT_STEP: f64 = 1e-5;
pub const HESSIAN_STEP: f64 = 1e-4;
