//! Conjugate gradient on the support-restricted system
//! `(W_S)ᵀ A_S · x_S = (W_S)ᵀ b`, whose matrix is symmetric by construction
//! of `W`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{linf_norm, select_columns};
use crate::problems::ProblemSetup;

/// Indices with `|xᵢ| > filter_ratio·‖x‖_∞`; empty for the zero vector.
pub fn estimate_support(x: &DVector<f64>, filter_ratio: f64) -> Vec<usize> {
    let peak = linf_norm(x);
    if peak == 0.0 {
        return Vec::new();
    }
    let cut = filter_ratio * peak;
    x.iter().enumerate().filter(|(_, v)| v.abs() > cut).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolve {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// Set when a direction with `dᵀQd ≤ 0` was met; `x` is then the
    /// lowest-residual iterate seen.
    pub breakdown: Option<usize>,
}

/// Textbook CG for a symmetric positive definite `q`, started at `x0`.
///
/// Stops after `max_iters` iterations or once `‖r‖₂ ≤ tol·‖rhs‖₂`.
/// `on_iter` sees every new iterate and may request an early stop by
/// returning `true`.
pub fn conjugate_gradient(
    q: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x0: &DVector<f64>,
    max_iters: usize,
    tol: f64,
    mut on_iter: impl FnMut(&DVector<f64>) -> bool,
) -> CgSolve {
    let mut x = x0.clone();
    let mut r = rhs - q * &x;
    let mut rr = r.norm_squared();
    let target = tol * rhs.norm();
    let mut best = (rr.sqrt(), x.clone());
    if rr.sqrt() <= target {
        return CgSolve { x, iterations: 0, residual_norm: rr.sqrt(), converged: true, breakdown: None };
    }
    let mut d = r.clone();
    let mut iterations = 0;
    for it in 0..max_iters {
        let qd = q * &d;
        let curvature = d.dot(&qd);
        if !(curvature > 0.0) {
            return CgSolve { x: best.1, iterations, residual_norm: best.0, converged: false, breakdown: Some(it) };
        }
        let step = rr / curvature;
        x.axpy(step, &d, 1.0);
        r.axpy(-step, &qd, 1.0);
        iterations += 1;
        let rr_next = r.norm_squared();
        let res = rr_next.sqrt();
        if res < best.0 {
            best = (res, x.clone());
        }
        let stop = on_iter(&x);
        if res <= target || stop {
            return CgSolve { x, iterations, residual_norm: res, converged: res <= target, breakdown: None };
        }
        d *= rr_next / rr;
        d += &r;
        rr = rr_next;
    }
    let residual_norm = rr.sqrt();
    CgSolve { x, iterations, residual_norm, converged: residual_norm <= target, breakdown: None }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgRefinement {
    /// Full-length solution, zero off the support.
    pub x: DVector<f64>,
    pub support: Vec<usize>,
    pub solve: CgSolve,
}

fn restricted_system(setup: &ProblemSetup, b: &DVector<f64>, support: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let w_s = select_columns(setup.w(), support);
    let a_s = select_columns(setup.a(), support);
    let q = w_s.tr_mul(&a_s);
    // WᵀA is symmetric in exact arithmetic; remove rounding asymmetry.
    let q = (&q + q.transpose()) * 0.5;
    (q, w_s.tr_mul(b))
}

fn scatter(n: usize, support: &[usize], xs: &DVector<f64>) -> DVector<f64> {
    let mut full = DVector::zeros(n);
    for (k, &i) in support.iter().enumerate() {
        full[i] = xs[k];
    }
    full
}

/// Solve the support-restricted system by CG, warm-started from `x_init`
/// on the support.
pub fn cg_refine(
    setup: &ProblemSetup,
    b: &DVector<f64>,
    x_init: &DVector<f64>,
    support: &[usize],
    max_iters: usize,
    tol: f64,
) -> Result<CgRefinement> {
    cg_refine_with(setup, b, x_init, support, max_iters, tol, |_| false)
}

/// As [`cg_refine`], reporting every full-length iterate to `on_iter`.
pub fn cg_refine_with(
    setup: &ProblemSetup,
    b: &DVector<f64>,
    x_init: &DVector<f64>,
    support: &[usize],
    max_iters: usize,
    tol: f64,
    mut on_iter: impl FnMut(&DVector<f64>) -> bool,
) -> Result<CgRefinement> {
    if support.is_empty() {
        return Err(Error::Empty("support"));
    }
    let n = setup.n();
    if let Some(&bad) = support.iter().find(|&&i| i >= n) {
        return Err(Error::dims("support index", format!("< {n}"), bad));
    }
    let (q, rhs) = restricted_system(setup, b, support);
    let x0 = DVector::from_iterator(support.len(), support.iter().map(|&i| x_init[i]));
    let solve = conjugate_gradient(&q, &rhs, &x0, max_iters, tol, |xs| on_iter(&scatter(n, support, xs)));
    if let Some(it) = solve.breakdown {
        log::warn!("CG breakdown at iteration {it}: restricted system is not positive definite");
    }
    Ok(CgRefinement { x: scatter(n, support, &solve.x), support: support.to_vec(), solve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_estimation_examples() {
        let v = |x: &[f64]| DVector::from_column_slice(x);
        assert_eq!(estimate_support(&v(&[1.0, 0.05, 0.0]), 0.1), vec![0]);
        assert!(estimate_support(&DVector::zeros(4), 0.3).is_empty());
        assert_eq!(estimate_support(&v(&[1.0, 0.2, -0.11]), 0.1), vec![0, 1, 2]);
        assert_eq!(estimate_support(&v(&[0.0, 1e-30, 0.0]), 0.0), vec![1]);
    }

    #[test]
    fn identity_solves_in_one_step() {
        let q = DMatrix::<f64>::identity(5, 5);
        let rhs = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let s = conjugate_gradient(&q, &rhs, &DVector::zeros(5), 5, 1e-14, |_| false);
        assert_eq!(s.iterations, 1);
        assert!((s.x - rhs).norm() < 1e-15);
    }

    #[test]
    fn finite_termination_on_pd_system() {
        let b = DMatrix::from_fn(8, 8, |i, j| ((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.4);
        let q = b.tr_mul(&b) + DMatrix::identity(8, 8);
        let rhs = DVector::from_fn(8, |i, _| (i as f64).sin());
        let s = conjugate_gradient(&q, &rhs, &DVector::zeros(8), 8, 0.0, |_| false);
        let direct = q.clone().lu().solve(&rhs).unwrap();
        assert!((s.x - &direct).norm() / direct.norm() < 1e-12);
    }

    #[test]
    fn indefinite_system_flags_breakdown() {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        let rhs = DVector::from_column_slice(&[1.0, 1.0]);
        let s = conjugate_gradient(&q, &rhs, &DVector::zeros(2), 10, 1e-14, |_| false);
        assert!(s.breakdown.is_some());
        assert!(s.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn early_stop_callback() {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0, 3.0]));
        let rhs = DVector::from_element(3, 1.0);
        let mut calls = 0;
        let s = conjugate_gradient(&q, &rhs, &DVector::zeros(3), 10, 0.0, |_| {
            calls += 1;
            true
        });
        assert_eq!((calls, s.iterations), (1, 1));
    }
}
