#![allow(dead_code)]

use mdfa::model::{center_columns, Denominator, FactorParams, ScoreMatrix};
use mdfa::{Mat, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    mdfa::rng::stream(seed, &[0xC0FFEE])
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Centered columns, orthonormal after scaling by 1/√d.
pub fn feasible_scores(rng: &mut impl Rng, n: usize, m: usize, p: usize, den: Denominator) -> ScoreMatrix {
    let raw = center_columns(&gaussian(rng, n, m + p)).unwrap();
    let z = raw.qr().q() * den.divisor(n).sqrt();
    ScoreMatrix::from_z(&z, m, den)
}

/// Random parameters with moderate loadings and unique sd in [0.4, 1].
pub fn random_params(rng: &mut impl Rng, p: usize, m: usize) -> FactorParams {
    FactorParams::random(rng, p, m, 0.9, (0.4, 1.0))
}

/// Rows drawn from N(0, ΛΛᵀ + Ψ²) through the factor model itself.
pub fn factor_data(rng: &mut impl Rng, params: &FactorParams, n: usize) -> Mat {
    let (p, m) = (params.p(), params.m());
    let f = gaussian(rng, n, m);
    let e = gaussian(rng, n, p);
    f * params.lambda.transpose() + e * Mat::from_diagonal(&params.psi)
}

pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Mat {
    gaussian(rng, n, n).qr().q()
}

pub fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

pub fn is_nonincreasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}
