use thiserror::Error;

pub type Result<T> = std::result::Result<T, MdfaError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdfaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension error: {0}")]
    DimensionError(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("need at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },

    #[error("loading matrix is not lower-trapezoid: {0}")]
    NotIdentified(String),

    #[error("Anderson-Rubin condition violated: {0}")]
    NotIdentifiable(String),

    #[error("Φᵀ S Φ is rank deficient (relative eigenvalue {relative_eigenvalue:e})")]
    RankDeficient { relative_eigenvalue: f64 },

    #[error("non-finite function value {value} at {point:?}")]
    EvalError { point: Vec<f64>, value: f64 },

    #[error("Hessian is numerically singular (condition number {condition:e})")]
    SingularHessian { condition: f64 },

    #[error("invalid setting: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),
}
