use nalgebra::DVector;

use super::trace::{Phase, RecoveryTrace, TraceWarning};
use super::{cg_refine_with, estimate_support, CgSwitchConfig, CgTrigger, HyperParams, LayerParams, SupportScale};
use crate::error::{Error, Result};
use crate::eval::nmse_db;
use crate::linalg::{count_nonzero, l1_norm};
use crate::problems::{Instance, ProblemSetup};
use crate::thresholding::{soft_threshold, support_select_threshold_in_place, ThresholdSpec};

/// Residual ratio below which the iterate is treated as exact.
const EXACT_RESIDUAL_RATIO: f64 = 1e-300;

/// One ISTA iteration `η_{λ/L}(x + (1/L)Aᵀ(b − Ax))`.
pub fn ista_step(
    setup: &ProblemSetup,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    lipschitz: f64,
) -> DVector<f64> {
    let r = b - setup.a() * x;
    let v = x + setup.a().tr_mul(&r) / lipschitz;
    soft_threshold(&v, lambda / lipschitz)
}

/// Pre-activation `x + γWᵀr + β(x − x_prev)` for a precomputed `r = b − Ax`.
fn pre_activation(
    setup: &ProblemSetup,
    residual: &DVector<f64>,
    x: &DVector<f64>,
    prev: Option<&DVector<f64>>,
    params: &LayerParams,
) -> DVector<f64> {
    let mut v = setup.w().tr_mul(residual) * params.gamma;
    v += x;
    if let Some(prev) = prev {
        if params.beta != 0.0 {
            v.axpy(params.beta, &(x - prev), 1.0);
        }
    }
    v
}

fn threshold(mut v: DVector<f64>, params: &LayerParams) -> DVector<f64> {
    let spec = ThresholdSpec { theta: params.theta, p: params.p.min(v.len()) };
    support_select_threshold_in_place(v.as_mut_slice(), spec);
    v
}

/// One momentum layer. `prev = None` (the first layer) drops the momentum
/// term, which leaves the plain ALISTA update.
pub fn momentum_step(
    setup: &ProblemSetup,
    b: &DVector<f64>,
    x: &DVector<f64>,
    prev: Option<&DVector<f64>>,
    params: &LayerParams,
) -> DVector<f64> {
    let r = b - setup.a() * x;
    threshold(pre_activation(setup, &r, x, prev, params), params)
}

/// Per-instance quantities reused at every layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceContext {
    /// `‖A⁺b‖₁`
    pub pinv_b_l1: f64,
}

impl InstanceContext {
    pub fn new(setup: &ProblemSetup, b: &DVector<f64>) -> Self {
        InstanceContext { pinv_b_l1: l1_norm(&(setup.a_pinv() * b)) }
    }
}

fn support_count(ratio: f64, hp: &HyperParams, n: usize) -> usize {
    let raw = hp.c3 * ratio.ln().min(n as f64);
    let scaled = match hp.support_scale {
        SupportScale::Count => raw,
        SupportScale::Percent => raw * n as f64 / 100.0,
    };
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else {
        (scaled.round() as usize).min(n)
    }
}

/// Instance-adaptive parameters from the residual `r = b − Ax` of layer `k`.
fn adaptive_from_residual(
    setup: &ProblemSetup,
    ctx: &InstanceContext,
    x: &DVector<f64>,
    residual: &DVector<f64>,
    k: usize,
    hp: &HyperParams,
) -> LayerParams {
    let n = setup.n();
    let gamma = 1.0;
    if ctx.pinv_b_l1 == 0.0 {
        return LayerParams { theta: 0.0, gamma, beta: 0.0, p: 0 };
    }
    let beta = if k == 0 { 0.0 } else { hp.c2 * setup.mu() * count_nonzero(x) as f64 };
    let res_l1 = l1_norm(&(setup.a_pinv() * residual));
    if res_l1 < EXACT_RESIDUAL_RATIO * ctx.pinv_b_l1 {
        return LayerParams { theta: 0.0, gamma, beta, p: n };
    }
    let theta = hp.c1 * setup.mu() * gamma * res_l1;
    let p = support_count(ctx.pinv_b_l1 / res_l1, hp, n);
    LayerParams { theta, gamma, beta, p }
}

/// `γ = 1`, `θ = c1·μ·γ·‖A⁺(Ax − b)‖₁`, `β = c2·μ·‖x‖₀` (0 at `k = 0`) and
/// `p = round(c3·min(ln(‖A⁺b‖₁ / ‖A⁺(Ax − b)‖₁), n))` clamped to `[0, n]`.
pub fn adaptive_params(
    setup: &ProblemSetup,
    ctx: &InstanceContext,
    b: &DVector<f64>,
    x: &DVector<f64>,
    k: usize,
    hp: &HyperParams,
) -> LayerParams {
    let r = b - setup.a() * x;
    adaptive_from_residual(setup, ctx, x, &r, k, hp)
}

/// Where layer parameters come from.
#[derive(Debug, Clone, Copy)]
pub enum Schedule<'a> {
    /// HyperLISTA: recomputed every layer, `hp.layers` layers, CG per `hp.cg`.
    Adaptive(&'a HyperParams),
    /// Fixed per-layer list (ALISTA / ALISTA-MM stand-ins); no CG.
    Fixed(&'a [LayerParams]),
}

impl Schedule<'_> {
    fn layers(&self) -> usize {
        match self {
            Schedule::Adaptive(hp) => hp.layers,
            Schedule::Fixed(list) => list.len(),
        }
    }
}

struct SupportTracker {
    last: Option<Vec<usize>>,
    stable: usize,
}

impl SupportTracker {
    /// Record the support of a new iterate; returns the number of
    /// consecutive layers it has stayed unchanged.
    fn observe(&mut self, support: Vec<usize>) -> usize {
        if !support.is_empty() && self.last.as_ref() == Some(&support) {
            self.stable += 1;
        } else {
            self.stable = 0;
        }
        self.last = Some(support);
        self.stable
    }
}

fn reached(stop: Option<f64>, x: &DVector<f64>, x_star: &DVector<f64>) -> bool {
    match stop {
        Some(level) => nmse_db(x, x_star).map(|v| v <= level).unwrap_or(false),
        None => false,
    }
}

/// Run the unrolled iteration from `x⁽⁰⁾ = 0`.
///
/// In adaptive mode the CG trigger in `hp.cg` is checked after every layer;
/// once it fires, the support of the latest iterate is estimated and CG
/// iterations are appended to the trace.
pub fn run_unrolled(setup: &ProblemSetup, inst: &Instance, schedule: Schedule<'_>) -> Result<RecoveryTrace> {
    let n = setup.n();
    let b = &inst.b;
    if b.len() != setup.m() {
        return Err(Error::dims("observation", setup.m(), b.len()));
    }
    let cg = match schedule {
        Schedule::Adaptive(hp) => {
            hp.validate()?;
            hp.cg
        }
        Schedule::Fixed(list) => {
            for p in list {
                p.validate(n)?;
            }
            CgSwitchConfig::off()
        }
    };
    let stop = cg.stop_nmse_db;
    let ctx = InstanceContext::new(setup, b);
    let mut trace = RecoveryTrace::start(n);
    let mut x = DVector::zeros(n);
    let mut prev: Option<DVector<f64>> = None;
    let mut tracker = SupportTracker { last: None, stable: 0 };
    let mut switch = false;

    for k in 0..schedule.layers() {
        let r = b - setup.a() * &x;
        let params = match schedule {
            Schedule::Adaptive(hp) => adaptive_from_residual(setup, &ctx, &x, &r, k, hp),
            Schedule::Fixed(list) => list[k],
        };
        let next = threshold(pre_activation(setup, &r, &x, prev.as_ref(), &params), &params);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: k,
                theta: params.theta,
                gamma: params.gamma,
                beta: params.beta,
                p: params.p,
            });
        }
        prev = Some(std::mem::replace(&mut x, next));
        trace.iterates.push(x.clone());
        trace.params.push(params);
        trace.phases.push(Phase::Unrolled);
        if reached(stop, &x, &inst.x_star) {
            return Ok(trace);
        }
        switch = match cg.trigger {
            CgTrigger::Off => false,
            CgTrigger::PThreshold { fraction } => params.p as f64 >= fraction * n as f64,
            CgTrigger::SupportStable { window } => tracker.observe(estimate_support(&x, cg.support_filter)) >= window,
        };
        if switch {
            break;
        }
    }

    if switch {
        let switch_layer = trace.steps();
        let support = estimate_support(&x, cg.support_filter);
        if support.is_empty() {
            log::warn!("empty support at CG switch (layer {switch_layer}); returning unrolled result");
            trace.warnings.push(TraceWarning::EmptySupportAtSwitch { layer: switch_layer });
            return Ok(trace);
        }
        trace.cg_switch_layer = Some(switch_layer);
        let max_iters = cg.max_cg_iters.unwrap_or(support.len());
        let mut cg_iterates = Vec::new();
        let refinement = cg_refine_with(setup, b, &x, &support, max_iters, cg.cg_tol, |full| {
            cg_iterates.push(full.clone());
            reached(stop, full, &inst.x_star)
        })?;
        if let Some(it) = refinement.solve.breakdown {
            trace.warnings.push(TraceWarning::CgBreakdown { iteration: it });
            // Replace the tail with the kept best iterate.
            cg_iterates.push(refinement.x.clone());
        }
        for it in cg_iterates {
            trace.iterates.push(it);
            trace.phases.push(Phase::Cg);
        }
    }
    Ok(trace)
}

/// HyperLISTA: adaptive unrolling with the CG switch configured in `hp`.
pub fn run_hyperlista(setup: &ProblemSetup, inst: &Instance, hp: &HyperParams) -> Result<RecoveryTrace> {
    run_unrolled(setup, inst, Schedule::Adaptive(hp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_setup, DictSolverConfig};
    use crate::linalg::pseudoinverse;
    use crate::problems::{generate_dictionary, generate_instances, GenConfig};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn setup_and_data(m: usize, n: usize, count: usize) -> (ProblemSetup, Vec<Instance>) {
        let a = generate_dictionary(m, n, 11).unwrap();
        let (setup, _) = build_setup(&a, &DictSolverConfig::default()).unwrap();
        let gen = GenConfig { m, n, ..GenConfig::standard(5, count) };
        let inst = generate_instances(&a, &gen).unwrap();
        (setup, inst)
    }

    fn identity_setup(n: usize) -> ProblemSetup {
        let a = DMatrix::<f64>::identity(n, n);
        ProblemSetup::new(a.clone(), a.clone(), a.clone(), a, 0.0).unwrap()
    }

    #[test]
    fn ista_fixed_point_and_zero() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let x = ista_step(&setup, &inst[0].b, &inst[0].x_star, 0.0, 5.0);
        assert!((x - &inst[0].x_star).norm() < 1e-12);
        let z = ista_step(&setup, &DVector::zeros(10), &DVector::zeros(20), 0.1, 5.0);
        assert_eq!(z, DVector::zeros(20));
    }

    #[test]
    fn zero_momentum_reduces_to_alista() {
        let (setup, inst) = setup_and_data(10, 20, 3);
        let x = &inst[1].x_star * 0.5;
        let prev = &inst[2].x_star * 0.3;
        let params = LayerParams { theta: 0.05, gamma: 0.9, beta: 0.0, p: 0 };
        let with_prev = momentum_step(&setup, &inst[0].b, &x, Some(&prev), &params);
        let alista = soft_threshold(&(&x + setup.w().tr_mul(&(&inst[0].b - setup.a() * &x)) * 0.9), 0.05);
        assert_eq!(with_prev, alista);
    }

    #[test]
    fn equal_iterates_ignore_beta() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let x = &inst[0].x_star * 0.7;
        let a =
            momentum_step(&setup, &inst[0].b, &x, Some(&x), &LayerParams { theta: 0.01, gamma: 1.0, beta: 0.0, p: 2 });
        let b =
            momentum_step(&setup, &inst[0].b, &x, Some(&x), &LayerParams { theta: 0.01, gamma: 1.0, beta: 0.8, p: 2 });
        assert_eq!(a, b);
    }

    #[test]
    fn exact_recovery_when_restricted_gram_is_identity() {
        let setup = identity_setup(6);
        let x_star = DVector::from_column_slice(&[0.0, 1.5, 0.0, -2.0, 0.0, 0.0]);
        let b = setup.a() * &x_star;
        let start = DVector::from_column_slice(&[0.0, 0.2, 0.0, 0.1, 0.0, 0.0]);
        let out = momentum_step(&setup, &b, &start, None, &LayerParams { theta: 0.0, gamma: 1.0, beta: 0.0, p: 0 });
        assert_eq!(out, x_star);
    }

    #[test]
    fn adaptive_params_at_zero_start() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let hp = HyperParams::new(0.7, 0.3, 0.5, 16);
        let ctx = InstanceContext::new(&setup, &inst[0].b);
        let p = adaptive_params(&setup, &ctx, &inst[0].b, &DVector::zeros(20), 0, &hp);
        assert_eq!(p.gamma, 1.0);
        assert_eq!(p.beta, 0.0);
        assert_eq!(p.p, 0);
        assert!((p.theta - 0.7 * setup.mu() * ctx.pinv_b_l1).abs() <= 1e-14 * p.theta);
    }

    #[test]
    fn adaptive_params_at_exact_solution() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let hp = HyperParams::new(0.7, 0.3, 0.5, 16);
        let ctx = InstanceContext::new(&setup, &inst[0].b);
        // Build b from x* exactly so the residual vanishes.
        let b = setup.a() * &inst[0].x_star;
        let p = adaptive_params(&setup, &ctx, &b, &inst[0].x_star, 3, &hp);
        assert_eq!((p.theta, p.p), (0.0, 20));
        let expected_beta = 0.3 * setup.mu() * count_nonzero(&inst[0].x_star) as f64;
        assert_eq!(p.beta, expected_beta);
    }

    #[test]
    fn zero_observation_gives_zero_params() {
        let (setup, _) = setup_and_data(10, 20, 1);
        let b = DVector::zeros(10);
        let hp = HyperParams::new(0.7, 0.3, 0.5, 16);
        let ctx = InstanceContext::new(&setup, &b);
        let p = adaptive_params(&setup, &ctx, &b, &DVector::zeros(20), 2, &hp);
        assert_eq!((p.theta, p.beta, p.p), (0.0, 0.0, 0));
    }

    #[test]
    fn c3_zero_disables_support_selection() {
        let (setup, inst) = setup_and_data(20, 40, 4);
        let hp = HyperParams::new(0.5, 0.1, 0.0, 16).with_cg(CgSwitchConfig::off());
        for i in &inst {
            let trace = run_hyperlista(&setup, i, &hp).unwrap();
            assert!(trace.params.iter().all(|p| p.p == 0));
        }
    }

    #[test]
    fn support_count_scales() {
        let mut hp = HyperParams::new(1.0, 0.0, 0.5, 1);
        assert_eq!(support_count(1.0, &hp, 100), 0);
        assert_eq!(support_count(0.5, &hp, 100), 0);
        assert_eq!(support_count(std::f64::consts::E.powi(10), &hp, 100), 5);
        hp.support_scale = SupportScale::Percent;
        assert_eq!(support_count(std::f64::consts::E.powi(10), &hp, 200), 10);
        hp.c3 = 1.0;
        assert_eq!(support_count(f64::INFINITY, &hp, 50), 25);
    }

    #[test]
    fn zero_layers_trace() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let hp = HyperParams::new(1.0, 0.0, 0.0, 0);
        let trace = run_hyperlista(&setup, &inst[0], &hp).unwrap();
        assert_eq!(trace.iterates, vec![DVector::zeros(20)]);
        assert!(trace.params.is_empty());
    }

    #[test]
    fn huge_threshold_keeps_zero() {
        let (setup, inst) = setup_and_data(10, 20, 2);
        let hp = HyperParams::new(1e6, 0.5, 0.5, 12);
        for i in &inst {
            let trace = run_hyperlista(&setup, i, &hp).unwrap();
            assert!(trace.iterates.iter().all(|x| x.iter().all(|v| *v == 0.0)));
            assert!(trace.cg_switch_layer.is_none());
        }
    }

    #[test]
    fn fixed_schedule_validates_entries() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let bad = [LayerParams { theta: -1.0, gamma: 1.0, beta: 0.0, p: 0 }];
        assert!(run_unrolled(&setup, &inst[0], Schedule::Fixed(&bad)).is_err());
    }

    #[test]
    fn non_finite_iterate_is_reported() {
        let (setup, inst) = setup_and_data(10, 20, 1);
        let bad = [LayerParams { theta: 0.0, gamma: f64::INFINITY, beta: 0.0, p: 0 }];
        let err = run_unrolled(&setup, &inst[0], Schedule::Fixed(&bad)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0, .. }), "{err}");
    }

    #[test]
    fn cg_switch_with_true_support_solves_exactly() {
        let (setup, inst) = setup_and_data(20, 40, 6);
        let hp = HyperParams::new(0.3, 0.05, 1.0, 60).with_cg(CgSwitchConfig {
            trigger: CgTrigger::SupportStable { window: 5 },
            support_filter: 0.0,
            max_cg_iters: Some(40),
            ..Default::default()
        });
        let mut solved = 0;
        for i in &inst {
            let trace = run_hyperlista(&setup, i, &hp).unwrap();
            if let Some(layer) = trace.cg_switch_layer {
                let truth = estimate_support(&i.x_star, 0.0);
                let found = estimate_support(&trace.iterates[layer], 0.0);
                if truth.iter().all(|t| found.contains(t)) {
                    let db = nmse_db(trace.final_iterate(), &i.x_star).unwrap();
                    assert!(db <= -200.0, "{db}");
                    solved += 1;
                }
            }
        }
        assert!(solved > 0);
    }

    #[test]
    fn traces_are_deterministic() {
        let (setup, inst) = setup_and_data(10, 20, 2);
        let hp = HyperParams::new(0.5, 0.1, 0.5, 10);
        assert_eq!(run_hyperlista(&setup, &inst[1], &hp).unwrap(), run_hyperlista(&setup, &inst[1], &hp).unwrap());
    }

    #[test]
    fn pinv_of_identity_setup() {
        let s = identity_setup(3);
        assert_eq!(pseudoinverse(s.a(), 1e-12), DMatrix::identity(3, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn beta_zero_step_equals_alista_step(seed in 0u64..1000, theta in 0.0f64..0.5, gamma in 0.2f64..1.5, p in 0usize..20) {
            let a = generate_dictionary(6, 12, seed).unwrap();
            let pinv = pseudoinverse(&a, 1e-12);
            let setup = ProblemSetup::new(a.clone(), pinv, a.clone(), DMatrix::identity(6, 6), 0.3).unwrap();
            let x = DVector::from_fn(12, |i, _| ((i as u64 * 7 + seed) % 5) as f64 - 2.0);
            let prev = DVector::from_fn(12, |i, _| ((i as u64 * 3 + seed) % 4) as f64 - 1.0);
            let b = DVector::from_fn(6, |i, _| (i as f64 + seed as f64).cos());
            let params = LayerParams { theta, gamma, beta: 0.0, p: p.min(12) };
            let with_prev = momentum_step(&setup, &b, &x, Some(&prev), &params);
            let without = momentum_step(&setup, &b, &x, None, &params);
            prop_assert_eq!(with_prev, without);
        }
    }
}
