//! Metrics and experiment orchestration.

mod experiments;
mod metrics;

pub use experiments::{
    adaptivity_test_sets, evaluate_method, fit_fixed_baselines, momentum_ablation, run_adaptivity_suite,
    run_extrapolation, run_superlinear_experiment, switch_rates, tune_models, ExperimentConfig, FrozenModels, Method,
    MomentumAblation, Profile, SuperlinearConfig, SuperlinearReport,
};
pub use metrics::{
    hp_fingerprint, mean_curve, nmse_db, nmse_ratio, ratio_to_db, MetricCurve, NmseAveraging, NMSE_CEIL_DB,
    NMSE_FLOOR_DB,
};
