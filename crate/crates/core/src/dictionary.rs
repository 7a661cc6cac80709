//! Symmetric analytic weight via coherence minimisation.
//!
//! The solver alternates a projected gradient step on `D` for
//! `‖DᵀD − I‖_F² + (1/α)‖D − GA‖_F²` under unit column norms with the
//! closed-form `G ← D·A⁺`. When `f1 = ‖DᵀD − I‖_F²` stalls, both the penalty
//! weight `α` and the step `ζ` shrink; the run stops once `f1` agrees with
//! `f2 = ‖(GA)ᵀGA − I‖_F²`. The analytic weight is then `W = (GᵀG)A`, which
//! makes `WᵀA = (GA)ᵀ(GA)` symmetric.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gram_deviation_sq, normalize_columns, pseudoinverse, PINV_RCOND};
use crate::problems::ProblemSetup;

const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictSolverConfig {
    pub zeta0: f64,
    pub alpha0: f64,
    pub shrink_factor: f64,
    /// Relative change between consecutive `f1` values that ends a phase.
    pub inner_tol: f64,
    /// Relative `|f1 − f2|` gap that ends the run.
    pub outer_tol: f64,
    pub max_iters: usize,
}

impl Default for DictSolverConfig {
    fn default() -> Self {
        DictSolverConfig {
            zeta0: 0.1,
            alpha0: 0.1,
            shrink_factor: 0.1,
            inner_tol: 1e-6,
            outer_tol: 1e-4,
            max_iters: 200_000,
        }
    }
}

impl DictSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::config("shrink_factor must lie in (0, 1)"));
        }
        if !(self.zeta0 > 0.0 && self.alpha0 > 0.0) {
            return Err(Error::config("zeta0 and alpha0 must be positive"));
        }
        if !(self.inner_tol > 0.0 && self.outer_tol > 0.0) {
            return Err(Error::config("tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictIteration {
    pub iter: usize,
    pub f1: f64,
    pub f2: f64,
    pub alpha: f64,
    pub zeta: f64,
    /// `‖D − GA‖_F²` after the step.
    pub coupling: f64,
}

#[derive(Debug, Clone)]
pub struct DictSolveReport {
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub history: Vec<DictIteration>,
    pub iterations: usize,
    pub converged: bool,
}

impl DictSolveReport {
    pub fn f1_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.f1).collect()
    }

    pub fn f2_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.f2).collect()
    }

    pub fn final_f1(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.f1)
    }

    pub fn final_f2(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.f2)
    }

    /// CSV with columns `iter,f1,f2,alpha,zeta`.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,f1,f2,alpha,zeta")?;
        for h in &self.history {
            writeln!(out, "{},{:e},{:e},{:e},{:e}", h.iter, h.f1, h.f2, h.alpha, h.zeta)?;
        }
        Ok(())
    }
}

fn relative_gap(f1: f64, f2: f64) -> f64 {
    (f1 - f2).abs() / f1.max(1e-12)
}

/// One projected gradient step on `D`.
fn pgd_step(d: &DMatrix<f64>, ga: &DMatrix<f64>, zeta: f64, alpha: f64) -> DMatrix<f64> {
    let mut gram = d.tr_mul(d);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    let mut next = d * gram;
    next *= -zeta;
    next += d;
    next -= (d - ga) * (zeta / alpha);
    normalize_columns(&mut next);
    next
}

/// Solve for `D`, `G` by alternating projected gradient and closed-form steps.
pub fn solve_dictionary(a: &DMatrix<f64>, config: &DictSolverConfig) -> Result<DictSolveReport> {
    let a_pinv = pseudoinverse(a, PINV_RCOND);
    solve_dictionary_with_pinv(a, &a_pinv, config)
}

pub fn solve_dictionary_with_pinv(
    a: &DMatrix<f64>,
    a_pinv: &DMatrix<f64>,
    config: &DictSolverConfig,
) -> Result<DictSolveReport> {
    config.validate()?;
    let m = a.nrows();
    let mut d = a.clone();
    let mut g = DMatrix::<f64>::identity(m, m);
    let mut ga = a.clone();
    let mut alpha = config.alpha0;
    let mut zeta = config.zeta0;
    let mut prev_f1 = gram_deviation_sq(&d);
    let mut history = Vec::new();
    let mut converged = false;

    for iter in 0..config.max_iters {
        let mut halvings = 0;
        let (next_d, f1) = loop {
            let cand = pgd_step(&d, &ga, zeta, alpha);
            let f1 = gram_deviation_sq(&cand);
            if f1.is_finite() && cand.iter().all(|v| v.is_finite()) {
                break (cand, f1);
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::DictionaryDiverged { iteration: iter, halvings });
            }
            zeta *= 0.5;
        };
        d = next_d;
        g = &d * a_pinv;
        ga = &g * a;
        let f2 = gram_deviation_sq(&ga);
        let coupling = (&d - &ga).norm_squared();
        history.push(DictIteration { iter, f1, f2, alpha, zeta, coupling });

        if (f1 - prev_f1).abs() <= config.inner_tol * prev_f1.max(f64::MIN_POSITIVE) {
            alpha *= config.shrink_factor;
            zeta *= config.shrink_factor;
            if relative_gap(f1, f2) <= config.outer_tol {
                converged = true;
                break;
            }
        }
        prev_f1 = f1;
    }

    let iterations = history.len();
    if !converged {
        log::warn!("dictionary solver stopped after {iterations} iterations without converging");
    }
    Ok(DictSolveReport { d, g, history, iterations, converged })
}

/// `max_{i≠j} |(DᵀD)_{ij}|`.
pub fn mutual_coherence(d: &DMatrix<f64>) -> Result<f64> {
    let n = d.ncols();
    if n < 2 {
        return Err(Error::CoherenceUndefined(n));
    }
    Ok(max_off_diagonal(&d.tr_mul(d)))
}

/// Largest absolute off-diagonal entry of a square matrix.
pub fn max_off_diagonal(mat: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..mat.ncols() {
        for i in 0..mat.nrows() {
            if i != j {
                best = best.max(mat[(i, j)].abs());
            }
        }
    }
    best
}

/// Run the solver and assemble the full [`ProblemSetup`].
pub fn build_setup(a: &DMatrix<f64>, config: &DictSolverConfig) -> Result<(ProblemSetup, DictSolveReport)> {
    let col_err = crate::problems::max_column_norm_error(a);
    if col_err > 1e-10 {
        return Err(Error::config(format!("dictionary columns must be unit norm (max deviation {col_err:e})")));
    }
    let a_pinv = pseudoinverse(a, PINV_RCOND);
    let report = solve_dictionary_with_pinv(a, &a_pinv, config)?;
    let mu = mutual_coherence(&report.d)?;
    let setup = ProblemSetup::new(a.clone(), a_pinv, report.d.clone(), report.g.clone(), mu)?;
    let asym = linalg::relative_asymmetry(&setup.w().tr_mul(setup.a()));
    if asym > 1e-8 {
        return Err(Error::config(format!("WᵀA asymmetry {asym:e} exceeds 1e-8")));
    }
    Ok((setup, report))
}

/// `‖WᵀA − I‖_F²`, the coherence objective shared by both weight designs.
pub fn weight_coherence_objective(w: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let mut m = w.tr_mul(a);
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] -= 1.0;
    }
    m.norm_squared()
}

/// Unconstrained-symmetry analytic weight: minimise `‖WᵀA‖_F²` subject to
/// `diag(WᵀA) = 1` by projected gradient. The projection moves each column
/// `w_i` onto its affine constraint `a_iᵀw_i = 1`. Stops once an update moves
/// `W` by less than `rel_tol` relative to its norm.
///
/// Used as the reference against which the symmetric design is validated.
pub fn solve_alista_weight(a: &DMatrix<f64>, rel_tol: f64, max_iters: usize) -> DMatrix<f64> {
    let aat = a * a.transpose();
    let lip = 2.0 * linalg::largest_gram_eigenvalue(&a.transpose(), 1e-10, 100_000);
    let step = 1.0 / lip;
    let project = |w: &mut DMatrix<f64>| {
        for j in 0..w.ncols() {
            let aj = a.column(j);
            let norm_sq = aj.norm_squared();
            let gap = 1.0 - aj.dot(&w.column(j));
            w.column_mut(j).axpy(gap / norm_sq, &aj, 1.0);
        }
    };
    let mut w = a.clone();
    project(&mut w);
    for _ in 0..max_iters {
        let grad = &aat * &w * 2.0;
        let prev = w.clone();
        w -= &grad * step;
        project(&mut w);
        if (&w - &prev).norm() <= rel_tol * w.norm() {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::generate_dictionary;

    #[test]
    fn identity_converges_immediately() {
        let a = DMatrix::<f64>::identity(5, 5);
        let report = solve_dictionary(&a, &DictSolverConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.final_f1(), 0.0);
        assert_eq!(report.d, a);
        let ga = &report.g * &a;
        assert!(gram_deviation_sq(&ga) < 1e-20);
    }

    #[test]
    fn coherence_examples() {
        assert_eq!(mutual_coherence(&DMatrix::identity(3, 3)).unwrap(), 0.0);
        let twin = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(mutual_coherence(&twin).unwrap(), 1.0);
        let t: f64 = 0.7;
        let d = DMatrix::from_row_slice(2, 2, &[1.0, t.cos(), 0.0, t.sin()]);
        assert!((mutual_coherence(&d).unwrap() - t.cos().abs()).abs() < 1e-15);
        assert!(matches!(mutual_coherence(&DMatrix::from_element(3, 1, 1.0)), Err(Error::CoherenceUndefined(1))));
    }

    #[test]
    fn alista_weight_matches_closed_form() {
        // Each column decouples: w_i ∝ (AAᵀ)⁻¹a_i scaled so a_iᵀw_i = 1.
        let a = generate_dictionary(6, 12, 4).unwrap();
        let w = solve_alista_weight(&a, 1e-15, 200_000);
        let inv = (&a * a.transpose()).try_inverse().unwrap();
        for j in 0..12 {
            let v = &inv * a.column(j);
            let v = &v / a.column(j).dot(&v);
            assert!((w.column(j) - v).norm() < 1e-6, "column {j}");
        }
    }

    #[test]
    fn small_random_dictionary_invariants() {
        let a = generate_dictionary(10, 20, 7).unwrap();
        let (setup, report) = build_setup(&a, &DictSolverConfig::default()).unwrap();
        assert!(report.converged, "iterations {}", report.iterations);
        let gap = (report.final_f1() - report.final_f2()).abs();
        assert!(gap <= 1e-4 * report.final_f1().max(1e-12));
        assert!(crate::problems::max_column_norm_error(setup.d()) < 1e-12);
        let wta = setup.w().tr_mul(setup.a());
        assert!(linalg::relative_asymmetry(&wta) <= 1e-10);
        let ga = setup.g() * setup.a();
        assert!((wta - ga.tr_mul(&ga)).norm() <= 1e-12 * ga.norm_squared());
        // diag(WᵀA) = diag((GA)ᵀGA) is only approximately one: D carries
        // the exact unit norms and GA tracks it through the penalty.
        for i in 0..20 {
            assert!((ga.column(i).norm_squared() - 1.0).abs() < 2e-2);
        }
        assert!(setup.mu() > 0.0 && setup.mu() < 1.0);
    }

    #[test]
    fn penalised_objective_monotone_within_phases() {
        // The step descends f1/4 + ‖D − GA‖²/(2α); f1 alone can rise while
        // D is pulled into the row space of A.
        for seed in [1, 3, 7] {
            let a = generate_dictionary(10, 20, seed).unwrap();
            let report = solve_dictionary(&a, &DictSolverConfig::default()).unwrap();
            for pair in report.history.windows(2) {
                if pair[0].alpha == pair[1].alpha {
                    let l0 = pair[0].f1 / 4.0 + pair[0].coupling / (2.0 * pair[0].alpha);
                    let l1 = pair[1].f1 / 4.0 + pair[1].coupling / (2.0 * pair[1].alpha);
                    assert!(l1 <= l0 + 1e-9 * (1.0 + l0), "{pair:?}");
                }
            }
        }
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let a = generate_dictionary(10, 20, 3).unwrap();
        let cfg = DictSolverConfig { max_iters: 3, ..Default::default() };
        let report = solve_dictionary(&a, &cfg).unwrap();
        assert_eq!(report.iterations, 3);
        assert!(!report.converged);
    }

    #[test]
    fn intermediate_iterates_have_unit_columns() {
        let a = generate_dictionary(8, 16, 5).unwrap();
        for cap in 1..6 {
            let cfg = DictSolverConfig { max_iters: cap, ..Default::default() };
            let report = solve_dictionary(&a, &cfg).unwrap();
            assert!(crate::problems::max_column_norm_error(&report.d) < 1e-12);
        }
    }

    #[test]
    fn history_csv_has_header() {
        let a = generate_dictionary(4, 6, 1).unwrap();
        let report = solve_dictionary(&a, &DictSolverConfig { max_iters: 2, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        report.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,f1,f2,alpha,zeta\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn config_validation() {
        let a = DMatrix::<f64>::identity(2, 2);
        let bad = DictSolverConfig { shrink_factor: 1.0, ..Default::default() };
        assert!(solve_dictionary(&a, &bad).is_err());
    }
}
