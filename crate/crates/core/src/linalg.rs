//! Dense linear-algebra kernels.
//!
//! Every routine is a pure function with a fixed sign convention so that
//! identical input bits give identical output bits: for each singular or
//! eigen pair the entry of largest magnitude in the left vector is made
//! nonnegative (first index wins ties).


use crate::error::{MdfaError, Result};
use crate::tolerance;
use crate::{Mat, Vector};

/// Thin singular value decomposition `M ≈ U diag(d) Vᵀ` truncated to `k` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: Mat,
    pub d: Vector,
    pub v: Mat,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.d) * self.v.transpose()
    }
}

/// Symmetric eigendecomposition `A = L diag(values) Lᵀ`, values nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub vectors: Mat,
    pub values: Vector,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> Mat {
        &self.vectors * Mat::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub(crate) fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MdfaError::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Largest absolute asymmetry `max |a_ij − a_ji|`.
pub fn max_asymmetry(a: &Mat) -> f64 {
    let n = a.nrows().min(a.ncols());
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub(crate) fn ensure_symmetric(a: &Mat, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(MdfaError::DimensionError(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, what)?;
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > tolerance::SYMMETRY * scale {
        return Err(MdfaError::InvalidInput(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Index of the entry with largest magnitude; the first one wins ties.
fn argmax_abs(col: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in col.enumerate() {
        match best {
            Some((_, b)) if x.abs() <= b.abs() => {}
            _ => best = Some((i, x)),
        }
    }
    best
}

/// Flips column `j` of `primary` (and of `paired`, if given) so that the
/// largest-magnitude entry of the primary column is nonnegative.
fn fix_signs(primary: &mut Mat, mut paired: Option<&mut Mat>) {
    for j in 0..primary.ncols() {
        if let Some((_, x)) = argmax_abs(primary.column(j).iter().copied()) {
            if x < 0.0 {
                primary.column_mut(j).neg_mut();
                if let Some(other) = paired.as_deref_mut() {
                    other.column_mut(j).neg_mut();
                }
            }
        }
    }
}

/// Permutation that sorts `values` in nonincreasing order, stable on index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

// Decompositions go through faer: nalgebra's SVD returns wrong factors for
// some tall rank-deficient inputs such as XΦ.
fn to_faer(m: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn select_columns(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Thin SVD keeping the `k` leading triplets.
pub fn thin_svd(m: &Mat, k: usize) -> Result<ThinSvd> {
    ensure_finite(m, "matrix")?;
    let full = m.nrows().min(m.ncols());
    if k > full {
        return Err(MdfaError::DimensionError(format!(
            "rank bound {k} exceeds min(rows, cols) = {full}"
        )));
    }
    if full == 0 {
        return Ok(ThinSvd {
            u: Mat::zeros(m.nrows(), 0),
            d: Vector::zeros(0),
            v: Mat::zeros(m.ncols(), 0),
        });
    }
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|e| MdfaError::InvalidInput(format!("SVD did not converge: {e:?}")))?;
    let u = from_faer(svd.U());
    let v = from_faer(svd.V());
    let values = svd.S().column_vector();
    let sv: Vec<f64> = (0..values.nrows()).map(|i| values[i]).collect();
    let order: Vec<usize> = descending_order(&sv).into_iter().take(k).collect();
    let mut u = select_columns(&u, &order);
    let mut v = select_columns(&v, &order);
    let d = Vector::from_iterator(k, order.iter().map(|&i| sv[i].max(0.0)));
    fix_signs(&mut u, Some(&mut v));
    Ok(ThinSvd { u, d, v })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.
pub fn sym_eigen(a: &Mat) -> Result<SpectralDecomp> {
    ensure_symmetric(a, "matrix")?;
    let eig = to_faer(&symmetrize(a))
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| MdfaError::InvalidInput(format!("eigendecomposition did not converge: {e:?}")))?;
    let values = eig.S().column_vector();
    let vals: Vec<f64> = (0..values.nrows()).map(|i| values[i]).collect();
    let order = descending_order(&vals);
    let mut vectors = select_columns(&from_faer(eig.U()), &order);
    let values = Vector::from_iterator(order.len(), order.iter().map(|&i| vals[i]));
    fix_signs(&mut vectors, None);
    Ok(SpectralDecomp { vectors, values })
}

fn check_psd(values: &Vector) -> Result<()> {
    let Some(&min) = values.as_slice().last() else {
        return Ok(());
    };
    let max = values[0];
    if min < -tolerance::NOT_PSD * max.abs().max(1.0) {
        return Err(MdfaError::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Eigendecomposition of a PSD matrix with tiny or slightly negative
/// eigenvalues clamped to zero.
pub fn psd_eigen(a: &Mat) -> Result<SpectralDecomp> {
    let mut eig = sym_eigen(a)?;
    check_psd(&eig.values)?;
    let cutoff = tolerance::EIG_CLAMP_REL * eig.values.get(0).copied().unwrap_or(0.0).max(0.0);
    for v in eig.values.iter_mut() {
        if *v <= cutoff {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Symmetric PSD square root.
pub fn psd_sqrt(a: &Mat) -> Result<Mat> {
    let eig = psd_eigen(a)?;
    let root = eig.values.map(f64::sqrt);
    let r = &eig.vectors * Mat::from_diagonal(&root) * eig.vectors.transpose();
    Ok(symmetrize(&r))
}

/// Moore–Penrose pseudoinverse.
pub fn pinv(m: &Mat) -> Result<Mat> {
    let k = m.nrows().min(m.ncols());
    let svd = thin_svd(m, k)?;
    let cutoff = tolerance::EIG_CLAMP_REL * svd.d.get(0).copied().unwrap_or(0.0);
    let inv = svd.d.map(|s| if s > cutoff { 1.0 / s } else { 0.0 });
    Ok(&svd.v * Mat::from_diagonal(&inv) * svd.u.transpose())
}

/// Singular values, nonincreasing.
pub fn singular_values(m: &Mat) -> Result<Vector> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vector::zeros(0));
    }
    let sv = to_faer(m)
        .singular_values()
        .map_err(|e| MdfaError::InvalidInput(format!("SVD did not converge: {e:?}")))?;
    let mut sv: Vec<f64> = sv.into_iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(Vector::from_vec(sv))
}

/// Largest singular value (NaN for non-finite input).
pub fn spectral_norm(m: &Mat) -> f64 {
    match singular_values(m) {
        Ok(sv) => sv.get(0).copied().unwrap_or(0.0),
        Err(_) => f64::NAN,
    }
}

/// `m` orthonormal columns orthogonal to the column-orthonormal `k`.
///
/// Identity columns are ranked by their residual norm after projecting out
/// `k` (largest first, lowest index on ties) and orthonormalized by modified
/// Gram–Schmidt; candidates that collapse are skipped.
pub fn orth_complement(k: &Mat, m: usize) -> Result<Mat> {
    let (n, p) = k.shape();
    if p + m > n {
        return Err(MdfaError::DimensionError(format!(
            "cannot find {m} complement columns for {p} columns in dimension {n}"
        )));
    }
    ensure_finite(k, "basis")?;
    let residual: Vec<f64> = (0..n)
        .map(|i| 1.0 - k.row(i).iter().map(|x| x * x).sum::<f64>())
        .collect();
    let order = descending_order(&residual);

    let mut basis: Vec<Vector> = (0..p).map(|j| k.column(j).into_owned()).collect();
    let mut found: Vec<Vector> = Vec::with_capacity(m);
    for idx in order {
        if found.len() == m {
            break;
        }
        let mut v = Vector::zeros(n);
        v[idx] = 1.0;
        // two passes of MGS keep the result orthogonal to working precision
        for _ in 0..2 {
            for q in basis.iter() {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            v /= norm;
            basis.push(v.clone());
            found.push(v);
        }
    }
    if found.len() < m {
        return Err(MdfaError::DimensionError(format!(
            "only {} of {m} complement columns could be constructed",
            found.len()
        )));
    }
    let mut c = Mat::from_columns(&found);
    fix_signs(&mut c, None);
    Ok(c)
}

/// Orthogonal `P` minimizing `‖AP − B‖_F`: `P = UVᵀ` from the SVD of `AᵀB`.
pub fn procrustes(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.shape() != b.shape() {
        return Err(MdfaError::DimensionError(format!(
            "procrustes shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let cross = a.transpose() * b;
    let m = cross.nrows();
    let svd = thin_svd(&cross, m)?;
    Ok(&svd.u * svd.v.transpose())
}
