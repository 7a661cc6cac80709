//! Problem model `b = A·x* + ε` and the synthetic data generator.
//!
//! Dictionaries have i.i.d. standard normal entries with unit-norm columns.
//! Sparse signals follow `N(0, σ²)·Bern(p)` (or a constant magnitude on the
//! Bernoulli support), and the additive noise is Gaussian, rescaled per
//! instance so that the realised SNR against `A·x*` matches the target.

mod io;

pub use io::{load_dataset, save_dataset, sidecar_path, Dataset, DatasetHeader, SectionInfo};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// RNG stream ids, so dictionaries and instances drawn from the same seed do
/// not share random numbers.
const DICTIONARY_STREAM: u64 = 0;
const INSTANCE_STREAM: u64 = 1;

/// The measurement model with every matrix the solvers reuse per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    a: DMatrix<f64>,
    a_pinv: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DMatrix<f64>,
    g: DMatrix<f64>,
    mu: f64,
}

impl ProblemSetup {
    /// Assemble a setup from solved `D`, `G`; computes `W = (GᵀG)A`.
    pub fn new(a: DMatrix<f64>, a_pinv: DMatrix<f64>, d: DMatrix<f64>, g: DMatrix<f64>, mu: f64) -> Result<Self> {
        let w = g.tr_mul(&g) * &a;
        Self::from_parts(a, a_pinv, w, d, g, mu)
    }

    /// Assemble a setup from stored parts without recomputing anything, so a
    /// loaded file reproduces the saved matrices bit for bit.
    pub fn from_parts(
        a: DMatrix<f64>,
        a_pinv: DMatrix<f64>,
        w: DMatrix<f64>,
        d: DMatrix<f64>,
        g: DMatrix<f64>,
        mu: f64,
    ) -> Result<Self> {
        let (m, n) = a.shape();
        check_shape("A_pinv", &a_pinv, (n, m))?;
        check_shape("W", &w, (m, n))?;
        check_shape("D", &d, (m, n))?;
        check_shape("G", &g, (m, m))?;
        if !(mu >= 0.0) {
            return Err(Error::config(format!("coherence must be nonnegative, got {mu}")));
        }
        Ok(ProblemSetup { a, a_pinv, w, d, g, mu })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_pinv(&self) -> &DMatrix<f64> {
        &self.a_pinv
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Generalized mutual coherence, `max_{i≠j} |(DᵀD)_{ij}|`.
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

fn check_shape(what: &str, mat: &DMatrix<f64>, expected: (usize, usize)) -> Result<()> {
    if mat.shape() != expected {
        return Err(Error::dims(
            what,
            format!("{}x{}", expected.0, expected.1),
            format!("{}x{}", mat.nrows(), mat.ncols()),
        ));
    }
    Ok(())
}

/// One sample of the linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x_star: DVector<f64>,
    pub epsilon: DVector<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonzeroMode {
    Gaussian,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub m: usize,
    pub n: usize,
    /// Bernoulli probability of a nonzero entry.
    pub sparsity_p: f64,
    /// Standard deviation of nonzero magnitudes in gaussian mode.
    pub magnitude_sigma: f64,
    /// Target SNR in dB; `None` means noiseless.
    pub snr_db: Option<f64>,
    pub nonzero_mode: NonzeroMode,
    pub seed: u64,
    pub count: usize,
}

impl GenConfig {
    /// Defaults of the synthetic benchmark: 250×500, p = 0.1, σ = 1, noiseless.
    pub fn standard(seed: u64, count: usize) -> Self {
        GenConfig {
            m: 250,
            n: 500,
            sparsity_p: 0.1,
            magnitude_sigma: 1.0,
            snr_db: None,
            nonzero_mode: NonzeroMode::Gaussian,
            seed,
            count,
        }
    }

    pub fn with_dims(mut self, m: usize, n: usize) -> Self {
        self.m = m;
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        if !(self.sparsity_p > 0.0 && self.sparsity_p < 1.0) {
            return Err(Error::config(format!("sparsity_p must lie in (0, 1), got {}", self.sparsity_p)));
        }
        match self.nonzero_mode {
            NonzeroMode::Gaussian if !(self.magnitude_sigma > 0.0) => {
                return Err(Error::config(format!("magnitude_sigma must be positive, got {}", self.magnitude_sigma)))
            }
            NonzeroMode::Constant(v) if v == 0.0 || !v.is_finite() => {
                return Err(Error::config("constant nonzero value must be finite and nonzero"))
            }
            _ => {}
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("snr_db must be finite"));
            }
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian dictionary with unit-norm columns, deterministic under `seed`.
pub fn generate_dictionary(m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 || n == 0 {
        return Err(Error::config("dictionary dimensions must be positive"));
    }
    let mut rng = stream_rng(seed, DICTIONARY_STREAM);
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        loop {
            let mut col = a.column_mut(j);
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                break;
            }
        }
    }
    Ok(a)
}

/// Draw `gen.count` instances for the dictionary `a`.
///
/// Every entry consumes one uniform and one normal draw, and every instance
/// consumes `m` noise draws, whatever the mode. Two configs that differ only
/// in `magnitude_sigma` or `snr_db` therefore share supports and directions,
/// which keeps distribution-shift comparisons paired.
pub fn generate_instances(a: &DMatrix<f64>, gen: &GenConfig) -> Result<Vec<Instance>> {
    gen.validate()?;
    if a.shape() != (gen.m, gen.n) {
        return Err(Error::dims(
            "dictionary vs generator config",
            format!("{}x{}", gen.m, gen.n),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let mut rng = stream_rng(gen.seed, INSTANCE_STREAM);
    let mut out = Vec::with_capacity(gen.count);
    while out.len() < gen.count {
        let mut x = DVector::zeros(gen.n);
        for xi in x.iter_mut() {
            let u: f64 = rng.random();
            let z: f64 = rng.sample(StandardNormal);
            if u < gen.sparsity_p {
                *xi = match gen.nonzero_mode {
                    NonzeroMode::Gaussian => gen.magnitude_sigma * z,
                    NonzeroMode::Constant(v) => v,
                };
            }
        }
        let mut noise = DVector::<f64>::zeros(gen.m);
        for e in noise.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        if x.iter().all(|v| *v == 0.0) {
            continue;
        }
        let clean = a * &x;
        let epsilon = match gen.snr_db {
            None => DVector::zeros(gen.m),
            Some(snr) => {
                let signal = clean.norm_squared();
                let raw = noise.norm_squared();
                if raw == 0.0 || signal == 0.0 {
                    continue;
                }
                let scale: f64 = (signal / (raw * 10f64.powf(snr / 10.0))).sqrt();
                noise * scale
            }
        };
        let b = &clean + &epsilon;
        out.push(Instance { x_star: x, epsilon, b });
    }
    Ok(out)
}

/// Realised SNR of an instance in dB, measured against `A·x*`.
pub fn realized_snr_db(a: &DMatrix<f64>, inst: &Instance) -> f64 {
    let clean = a * &inst.x_star;
    10.0 * (clean.norm_squared() / inst.epsilon.norm_squared()).log10()
}

/// Check the unit-column invariant of a dictionary.
pub fn max_column_norm_error(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// Relative reconstruction error of `A·A⁺·A` against `A`.
pub fn pinv_reconstruction_error(setup: &ProblemSetup) -> f64 {
    let a = setup.a();
    (a * setup.a_pinv() * a - a).norm() / a.norm()
}

/// Count nonzeros of every instance, for support statistics.
pub fn support_sizes(instances: &[Instance]) -> Vec<usize> {
    instances.iter().map(|i| linalg::count_nonzero(&i.x_star)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GenConfig {
        GenConfig { m: 20, n: 40, count: 16, ..GenConfig::standard(seed, 16) }
    }

    #[test]
    fn dictionary_columns_are_unit_norm() {
        let a = generate_dictionary(250, 500, 3).unwrap();
        assert!(max_column_norm_error(&a) <= 1e-12);
    }

    #[test]
    fn scalar_dictionary_is_plus_or_minus_one() {
        let a = generate_dictionary(1, 1, 11).unwrap();
        assert_eq!(a[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn dictionary_is_deterministic() {
        let a = generate_dictionary(4, 8, 42).unwrap();
        let b = generate_dictionary(4, 8, 42).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate_dictionary(4, 8, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(generate_dictionary(0, 3, 1).is_err());
    }

    #[test]
    fn noiseless_instances_are_exact() {
        let gen = small(5);
        let a = generate_dictionary(gen.m, gen.n, 1).unwrap();
        for inst in generate_instances(&a, &gen).unwrap() {
            assert!(inst.epsilon.iter().all(|e| *e == 0.0));
            assert_eq!(inst.b, &a * &inst.x_star);
            assert!(inst.x_star.iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn constant_mode_uses_exact_value() {
        let gen = GenConfig { m: 50, n: 100, nonzero_mode: NonzeroMode::Constant(1.0), ..GenConfig::standard(9, 20) };
        let a = generate_dictionary(50, 100, 2).unwrap();
        for inst in generate_instances(&a, &gen).unwrap() {
            assert!(inst.x_star.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }

    #[test]
    fn snr_is_met_per_instance() {
        let gen = GenConfig { snr_db: Some(30.0), ..small(8) };
        let a = generate_dictionary(gen.m, gen.n, 1).unwrap();
        for inst in generate_instances(&a, &gen).unwrap() {
            assert!((realized_snr_db(&a, &inst) - 30.0).abs() < 1e-9);
            let clean = &a * &inst.x_star;
            assert_eq!(inst.b, clean + &inst.epsilon);
        }
    }

    #[test]
    fn sigma_shift_scales_signals_exactly() {
        let base = small(21);
        let shifted = GenConfig { magnitude_sigma: 2.0, ..base.clone() };
        let a = generate_dictionary(base.m, base.n, 1).unwrap();
        let x1 = generate_instances(&a, &base).unwrap();
        let x2 = generate_instances(&a, &shifted).unwrap();
        for (i1, i2) in x1.iter().zip(&x2) {
            assert_eq!(i1.x_star.scale(2.0), i2.x_star);
        }
    }

    #[test]
    fn config_validation() {
        let a = generate_dictionary(20, 40, 1).unwrap();
        assert!(generate_instances(&a, &GenConfig { sparsity_p: 1.0, ..small(1) }).is_err());
        assert!(generate_instances(&a, &GenConfig { magnitude_sigma: 0.0, ..small(1) }).is_err());
        assert!(generate_instances(&a, &GenConfig { m: 21, ..small(1) }).is_err());
    }

    #[test]
    fn tiny_sparsity_resamples_zero_signals() {
        let gen = GenConfig { m: 3, n: 4, sparsity_p: 0.01, ..GenConfig::standard(4, 50) };
        let a = generate_dictionary(3, 4, 1).unwrap();
        let inst = generate_instances(&a, &gen).unwrap();
        assert_eq!(inst.len(), 50);
        assert!(support_sizes(&inst).iter().all(|s| *s > 0));
    }
}
