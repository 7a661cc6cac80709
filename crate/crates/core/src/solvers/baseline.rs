//! Baselines: plain ISTA and fixed-schedule ALISTA / ALISTA-MM.
//!
//! The fixed schedules stand in for backprop-trained parameters. They are
//! fitted greedily, one layer at a time: for every layer a grid of
//! `(θ, γ)` pairs is tried on the tuning batch and the pair with the lowest
//! mean squared-error ratio after that layer is kept. ALISTA-MM additionally
//! sweeps a constant momentum `β`. The support-selection count follows the
//! usual linear ramp `p⁽ᵏ⁾ = min(p·(k+1), p_max)`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::{Phase, RecoveryTrace};
use super::unrolled::ista_step;
use super::LayerParams;
use crate::error::{Error, Result};
use crate::linalg::linf_norm;
use crate::problems::{Instance, ProblemSetup};
use crate::thresholding::{support_select_threshold_in_place, ThresholdSpec};

/// `layers` ISTA iterations with threshold `λ/L` and step `1/L`.
pub fn run_ista(
    setup: &ProblemSetup,
    inst: &Instance,
    lambda: f64,
    lipschitz: f64,
    layers: usize,
) -> Result<RecoveryTrace> {
    if !(lipschitz > 0.0) || !(lambda >= 0.0) {
        return Err(Error::config("ISTA needs L > 0 and λ ≥ 0"));
    }
    let mut trace = RecoveryTrace::start(setup.n());
    let params = LayerParams { theta: lambda / lipschitz, gamma: 1.0 / lipschitz, beta: 0.0, p: 0 };
    for _ in 0..layers {
        let next = ista_step(setup, &inst.b, trace.final_iterate(), lambda, lipschitz);
        trace.iterates.push(next);
        trace.params.push(params);
        trace.phases.push(Phase::Unrolled);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedScheduleConfig {
    /// Candidate momentum values; `[0.0]` gives plain ALISTA.
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Log-spaced θ candidates per layer, spanning `theta_decades` below the
    /// largest pre-activation magnitude (plus θ = 0).
    pub theta_points: usize,
    pub theta_decades: f64,
    /// Ramp slope and cap of the support-selection count, as fractions of n.
    pub p_per_layer: f64,
    pub p_max: f64,
}

impl FixedScheduleConfig {
    pub fn alista() -> Self {
        FixedScheduleConfig {
            betas: vec![0.0],
            gammas: vec![0.6, 0.8, 1.0, 1.2, 1.4],
            theta_points: 41,
            theta_decades: 5.0,
            p_per_layer: 0.012,
            p_max: 0.13,
        }
    }

    pub fn alista_mm() -> Self {
        FixedScheduleConfig { betas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], ..Self::alista() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSchedule {
    pub label: String,
    pub params: Vec<LayerParams>,
    /// Mean squared-error ratio on the tuning batch after the last layer.
    pub tuning_score: f64,
}

impl FixedSchedule {
    /// Extend to `layers` by repeating the last layer's parameters.
    pub fn extrapolate(&self, layers: usize) -> Vec<LayerParams> {
        let mut out = self.params.clone();
        if let Some(&last) = self.params.last() {
            while out.len() < layers {
                out.push(last);
            }
        }
        out.truncate(layers);
        out
    }
}

struct State {
    x: DVector<f64>,
    prev: Option<DVector<f64>>,
}

/// Pieces of the pre-activation that do not depend on the candidate; the
/// combination order matches the generic runner so replays are bit-exact.
struct Parts {
    grad: DVector<f64>,
    x: DVector<f64>,
    diff: Option<DVector<f64>>,
}

impl Parts {
    fn pre_activation(&self, gamma: f64, beta: f64) -> DVector<f64> {
        let mut v = &self.grad * gamma;
        v += &self.x;
        if let Some(diff) = &self.diff {
            if beta != 0.0 {
                v.axpy(beta, diff, 1.0);
            }
        }
        v
    }
}

fn error_ratio(x: &DVector<f64>, x_star: &DVector<f64>) -> f64 {
    (x - x_star).norm_squared() / x_star.norm_squared()
}

fn greedy_pass(
    setup: &ProblemSetup,
    instances: &[Instance],
    layers: usize,
    beta: f64,
    cfg: &FixedScheduleConfig,
) -> (Vec<LayerParams>, f64) {
    let n = setup.n();
    let mut states: Vec<State> = instances.iter().map(|_| State { x: DVector::zeros(n), prev: None }).collect();
    let mut params = Vec::with_capacity(layers);
    let mut score = 1.0;
    let p_cap = (cfg.p_max * n as f64).round() as usize;
    for k in 0..layers {
        let p = ((cfg.p_per_layer * n as f64 * (k + 1) as f64).round() as usize).min(p_cap).min(n);
        let beta_k = if k == 0 { 0.0 } else { beta };
        // Gradient direction and momentum part per instance.
        let parts: Vec<Parts> = states
            .par_iter()
            .zip(instances.par_iter())
            .map(|(s, inst)| {
                let r = &inst.b - setup.a() * &s.x;
                Parts {
                    grad: setup.w().tr_mul(&r),
                    x: s.x.clone(),
                    diff: s.prev.as_ref().filter(|_| beta_k != 0.0).map(|prev| &s.x - prev),
                }
            })
            .collect();
        let scale = parts.iter().map(|pt| linf_norm(&pt.pre_activation(1.0, beta_k))).sum::<f64>() / parts.len() as f64;
        let mut thetas = vec![0.0];
        let tp = cfg.theta_points.max(2);
        for j in 0..tp {
            thetas.push(scale * 10f64.powf(-cfg.theta_decades * j as f64 / (tp - 1) as f64));
        }
        let candidates: Vec<LayerParams> = cfg
            .gammas
            .iter()
            .flat_map(|&gamma| thetas.iter().map(move |&theta| LayerParams { theta, gamma, beta: beta_k, p }))
            .collect();
        let per_instance: Vec<Vec<f64>> = parts
            .par_iter()
            .zip(instances.par_iter())
            .map(|(pt, inst)| {
                candidates
                    .iter()
                    .map(|c| {
                        let mut v = pt.pre_activation(c.gamma, c.beta);
                        support_select_threshold_in_place(v.as_mut_slice(), ThresholdSpec { theta: c.theta, p: c.p });
                        error_ratio(&v, &inst.x_star)
                    })
                    .collect()
            })
            .collect();
        let mut best = (f64::INFINITY, 0usize);
        for (ci, _) in candidates.iter().enumerate() {
            let mean = per_instance.iter().map(|e| e[ci]).sum::<f64>() / per_instance.len() as f64;
            if mean < best.0 {
                best = (mean, ci);
            }
        }
        let chosen = candidates[best.1];
        score = best.0;
        for (s, pt) in states.iter_mut().zip(parts) {
            let mut v = pt.pre_activation(chosen.gamma, chosen.beta);
            support_select_threshold_in_place(v.as_mut_slice(), ThresholdSpec { theta: chosen.theta, p: chosen.p });
            s.prev = Some(std::mem::replace(&mut s.x, v));
        }
        params.push(chosen);
    }
    (params, score)
}

/// Fit a per-layer schedule on `instances` (layer-wise greedy grid search).
pub fn tune_fixed_schedule(
    setup: &ProblemSetup,
    instances: &[Instance],
    layers: usize,
    cfg: &FixedScheduleConfig,
    label: &str,
) -> Result<FixedSchedule> {
    if instances.is_empty() {
        return Err(Error::Empty("tuning instances"));
    }
    if cfg.betas.is_empty() || cfg.gammas.is_empty() {
        return Err(Error::config("fixed schedule grids must be non-empty"));
    }
    let mut best: Option<FixedSchedule> = None;
    for &beta in &cfg.betas {
        let (params, score) = greedy_pass(setup, instances, layers, beta, cfg);
        if best.as_ref().is_none_or(|b| score < b.tuning_score) {
            best = Some(FixedSchedule { label: label.to_string(), params, tuning_score: score });
        }
    }
    Ok(best.expect("at least one beta"))
}
