//! Dense helpers shared by the solvers: pseudoinverse, spectral norm and a
//! handful of norms.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-12;

/// Moore–Penrose pseudoinverse via SVD. Singular values at or below
/// `rcond * sigma_max` are treated as zero.
pub fn pseudoinverse(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * sigma_max;
    // Scale the rows of Vᵀ by 1/sigma, then Vᵀᵀ·(Σ⁺Uᵀ).
    let mut scaled_ut = u.transpose();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        scaled_ut.row_mut(i).scale_mut(inv);
    }
    v_t.transpose() * scaled_ut
}

/// Largest eigenvalue of `AᵀA` (the Lipschitz constant of the least-squares
/// gradient) by power iteration, stopping once successive estimates agree to
/// `rel_tol`.
pub fn largest_gram_eigenvalue(a: &DMatrix<f64>, rel_tol: f64, max_iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic, non-symmetric start so it is unlikely to be orthogonal
    // to the leading eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let av = a * &v;
        let mut w = a.tr_mul(&av);
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        w /= next;
        v = w;
        if (next - lambda).abs() <= rel_tol * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Scale every column to unit ℓ2 norm. Returns the indices of columns that
/// were exactly zero (left untouched).
pub fn normalize_columns(mat: &mut DMatrix<f64>) -> Vec<usize> {
    let mut zero = Vec::new();
    for (j, mut col) in mat.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm > 0.0 && norm.is_finite() {
            col /= norm;
        } else {
            zero.push(j);
        }
    }
    zero
}

/// `‖MᵀM − I‖_F²` for a matrix with `n` columns.
pub fn gram_deviation_sq(mat: &DMatrix<f64>) -> f64 {
    let mut gram = mat.tr_mul(mat);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    gram.norm_squared()
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn count_nonzero(v: &DVector<f64>) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Columns of `mat` selected by `cols`, in order.
pub fn select_columns(mat: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(mat.nrows(), cols.len(), |i, j| mat[(i, cols[j])])
}

/// Relative Frobenius asymmetry `‖M − Mᵀ‖_F / ‖M‖_F` (0 for the zero matrix).
pub fn relative_asymmetry(mat: &DMatrix<f64>) -> f64 {
    let denom = mat.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (mat - mat.transpose()).norm() / denom
}
