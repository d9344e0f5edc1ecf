//! Support code for the acceptance suite in `tests/acceptance.rs`.
//!
//! The matrix helpers here deliberately avoid the `mdfa::linalg` kernels so
//! the suite checks the library against an independent computation.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use mdfa::{Mat, Vector};
use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SEED: u64 = 20240101;

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs criteria one at a time so their wall-clock budgets are meaningful.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to the process stdout, past libtest's capture.
pub fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(criterion: u8, pass: bool, detail: &str) {
    emit(&format!(
        "criterion {criterion}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    ));
}

pub fn rng(path: &[u64]) -> ChaCha8Rng {
    mdfa::rng::stream(SEED ^ 0xACCE, path)
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Eigenvalues (nonincreasing) and matching eigenvectors of a symmetric matrix.
pub fn eigh(a: &Mat) -> (Vector, Mat) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Mat::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// Symmetric PSD square root with negative rounding noise clipped.
pub fn sqrtm(a: &Mat) -> Mat {
    let (values, vectors) = eigh(a);
    let root = values.map(|v| v.max(0.0).sqrt());
    &vectors * Mat::from_diagonal(&root) * vectors.transpose()
}

/// Largest absolute eigenvalue, i.e. the spectral norm of a symmetric matrix.
pub fn sym_norm2(a: &Mat) -> f64 {
    eigh(a).0.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `Φ⁺ = Φᵀ(ΦΦᵀ)⁻¹` for a wide full-row-rank `Φ`.
pub fn wide_pinv(phi: &Mat) -> Mat {
    let gram = phi * phi.transpose();
    phi.transpose() * gram.try_inverse().expect("ΦΦᵀ invertible")
}

/// Projector onto the leading `r` eigenvectors of a symmetric matrix.
pub fn top_projector(a: &Mat, r: usize) -> Mat {
    let (_, vectors) = eigh(a);
    let l = vectors.columns(0, r);
    l * l.transpose()
}

/// Sample covariance (denominator `n`) of the rows of `x` after centering.
pub fn sample_cov(x: &Mat) -> Mat {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    xc.transpose() * &xc / n
}

pub fn median(mut v: Vec<f64>) -> f64 {
    mdfa::simulation::median(&mut v).unwrap_or(f64::NAN)
}

/// All permutations of `0..m`.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(m - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, m - 1);
            out.push(p);
        }
    }
    out
}

/// Support-recovery F1 of `estimate` against `truth`, maximized over
/// column permutations of the estimate.
pub fn support_f1(estimate: &Mat, truth: &Mat) -> f64 {
    let (p, m) = truth.shape();
    permutations(m)
        .into_iter()
        .map(|perm| {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for j in 0..p {
                for k in 0..m {
                    let est = estimate[(j, perm[k])] != 0.0;
                    let tru = truth[(j, k)] != 0.0;
                    match (est, tru) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fneg += 1.0,
                        _ => {}
                    }
                }
            }
            if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) }
        })
        .fold(0.0, f64::max)
}
