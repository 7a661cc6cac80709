//! The unrolled iteration family and the conjugate-gradient finish.
//!
//! Every solver starts at `x⁽⁰⁾ = 0` and records a [`RecoveryTrace`]. The
//! momentum layer is
//!
//! ```text
//! x⁽ᵏ⁺¹⁾ = η_θ^p( x⁽ᵏ⁾ + γ·Wᵀ(b − A·x⁽ᵏ⁾) + β·(x⁽ᵏ⁾ − x⁽ᵏ⁻¹⁾) )
//! ```
//!
//! with the momentum term dropped at `k = 0`. ALISTA is the `β = 0` case.

mod baseline;
mod cg;
mod trace;
mod unrolled;

pub use baseline::{run_ista, tune_fixed_schedule, FixedSchedule, FixedScheduleConfig};
pub use cg::{cg_refine, cg_refine_with, conjugate_gradient, estimate_support, CgRefinement, CgSolve};
pub use trace::{Phase, RecoveryTrace, TraceWarning};
pub use unrolled::{
    adaptive_params, ista_step, momentum_step, run_hyperlista, run_unrolled, InstanceContext, Schedule,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer parameters of the momentum iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub p: usize,
}

impl LayerParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.theta >= 0.0 && self.gamma > 0.0 && self.beta >= 0.0) || self.p > n {
            return Err(Error::config(format!("invalid layer parameters {self:?} for n = {n}")));
        }
        Ok(())
    }
}

/// When the unrolled phase hands over to conjugate gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CgTrigger {
    Off,
    /// Fire once `p⁽ᵏ⁾ ≥ fraction·n`.
    PThreshold {
        fraction: f64,
    },
    /// Fire once the estimated support has not changed for `window`
    /// consecutive layers.
    SupportStable {
        window: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSwitchConfig {
    pub trigger: CgTrigger,
    /// Entries below this fraction of the largest magnitude are dropped when
    /// estimating the support; 0 keeps every nonzero.
    pub support_filter: f64,
    /// Defaults to the size of the estimated support.
    pub max_cg_iters: Option<usize>,
    /// Relative residual tolerance for CG.
    pub cg_tol: f64,
    /// Stop as soon as the NMSE against the ground truth drops below this
    /// level (experiment mode; needs `x*`).
    pub stop_nmse_db: Option<f64>,
}

impl Default for CgSwitchConfig {
    fn default() -> Self {
        CgSwitchConfig {
            trigger: CgTrigger::PThreshold { fraction: 0.9 },
            support_filter: 0.1,
            max_cg_iters: None,
            cg_tol: 1e-15,
            stop_nmse_db: None,
        }
    }
}

impl CgSwitchConfig {
    pub fn off() -> Self {
        CgSwitchConfig { trigger: CgTrigger::Off, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.trigger {
            CgTrigger::PThreshold { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                return Err(Error::config("p_fraction must lie in (0, 1]"))
            }
            CgTrigger::SupportStable { window: 0 } => return Err(Error::config("stability window must be ≥ 1")),
            _ => {}
        }
        if !(self.support_filter >= 0.0 && self.support_filter < 1.0) {
            return Err(Error::config("support_filter must lie in [0, 1)"));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::config("cg_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// How `c3·min(ln ratio, n)` is turned into a support-selection count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportScale {
    /// The value is the number of entries.
    #[default]
    Count,
    /// The value is a percentage of `n`.
    Percent,
}

/// The three instance- and layer-invariant hyperparameters plus run switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Threshold scale.
    pub c1: f64,
    /// Momentum scale.
    pub c2: f64,
    /// Support-selection scale; 0 disables support selection.
    pub c3: f64,
    pub layers: usize,
    #[serde(default)]
    pub support_scale: SupportScale,
    pub cg: CgSwitchConfig,
}

impl HyperParams {
    pub fn new(c1: f64, c2: f64, c3: f64, layers: usize) -> Self {
        HyperParams { c1, c2, c3, layers, support_scale: SupportScale::Count, cg: CgSwitchConfig::default() }
    }

    pub fn with_cg(mut self, cg: CgSwitchConfig) -> Self {
        self.cg = cg;
        self
    }

    pub fn with_triple(mut self, (c1, c2, c3): (f64, f64, f64)) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self.c3 = c3;
        self
    }

    pub fn triple(&self) -> (f64, f64, f64) {
        (self.c1, self.c2, self.c3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) {
            return Err(Error::config(format!("c1 must be positive, got {}", self.c1)));
        }
        if !(self.c2 >= 0.0) {
            return Err(Error::config(format!("c2 must be nonnegative, got {}", self.c2)));
        }
        if !(0.0..=1.0).contains(&self.c3) {
            return Err(Error::config(format!("c3 must lie in [0, 1], got {}", self.c3)));
        }
        self.cg.validate()
    }
}
