use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{hp_fingerprint, mean_curve, nmse_db, MetricCurve, NmseAveraging};
use crate::dictionary::{build_setup, DictSolverConfig};
use crate::error::{Error, Result};
use crate::hypersearch::{evaluate_triple, grid_search, GridSpec, SearchReport};
use crate::linalg::largest_gram_eigenvalue;
use crate::problems::{generate_dictionary, generate_instances, GenConfig, Instance, NonzeroMode, ProblemSetup};
use crate::solvers::{
    run_hyperlista, run_ista, run_unrolled, tune_fixed_schedule, CgSwitchConfig, CgTrigger, FixedSchedule,
    FixedScheduleConfig, HyperParams, RecoveryTrace, Schedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ista,
    AlistaFixed,
    AlistaMmFixed,
    Hyperlista,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ista => "ista",
            Method::AlistaFixed => "alista_fixed",
            Method::AlistaMmFixed => "alista_mm_fixed",
            Method::Hyperlista => "hyperlista",
        }
    }

    pub fn all() -> Vec<Method> {
        vec![Method::Ista, Method::AlistaFixed, Method::AlistaMmFixed, Method::Hyperlista]
    }
}

/// Train / validation / test sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Quick,
    Full,
}

impl Profile {
    pub fn sizes(self) -> (usize, usize, usize) {
        match self {
            Profile::Quick => (2048, 256, 256),
            Profile::Full => (51_200, 2048, 2048),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub train_gen: GenConfig,
    pub test_gen: GenConfig,
    pub layers_train: usize,
    pub layers_test: usize,
    pub grid: GridSpec,
    /// Switches shared by every HyperLISTA run (CG trigger etc.); the triple
    /// and depth are overwritten.
    pub hyper_base: HyperParams,
    /// Number of training instances used to fit the fixed schedules.
    pub baseline_batch: usize,
    pub ista_lambda: f64,
    pub averaging: NmseAveraging,
}

impl ExperimentConfig {
    /// Defaults for an `m × n` problem with the given profile; training and
    /// test sets use different seeds.
    pub fn profile(profile: Profile, m: usize, n: usize, seed: u64) -> Self {
        let (train, _, test) = profile.sizes();
        ExperimentConfig {
            methods: Method::all(),
            train_gen: GenConfig::standard(seed, train).with_dims(m, n),
            test_gen: GenConfig::standard(seed.wrapping_add(1000), test).with_dims(m, n),
            layers_train: 16,
            layers_test: 16,
            grid: GridSpec::default(),
            hyper_base: HyperParams::new(1.0, 0.0, 0.0, 16).with_cg(CgSwitchConfig::off()),
            baseline_batch: 256,
            ista_lambda: 0.05,
            averaging: NmseAveraging::RatioMean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("method list must not be empty"));
        }
        if self.layers_train == 0 || self.layers_test == 0 {
            return Err(Error::config("layer counts must be at least 1"));
        }
        if self.baseline_batch == 0 {
            return Err(Error::config("baseline_batch must be positive"));
        }
        self.train_gen.validate()?;
        self.test_gen.validate()?;
        self.grid.validate()
    }
}

/// Everything fitted on the training distribution and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenModels {
    pub hyper: HyperParams,
    pub search: Option<SearchReport>,
    pub alista: Option<FixedSchedule>,
    pub alista_mm: Option<FixedSchedule>,
    pub ista_lambda: f64,
    pub lipschitz: f64,
}

impl FrozenModels {
    /// Wrap an already-searched triple; fixed schedules still need fitting.
    pub fn from_hyper(setup: &ProblemSetup, hyper: HyperParams, ista_lambda: f64) -> Self {
        FrozenModels {
            hyper,
            search: None,
            alista: None,
            alista_mm: None,
            ista_lambda,
            lipschitz: largest_gram_eigenvalue(setup.a(), 1e-10, 100_000),
        }
    }
}

fn fit_baselines(
    setup: &ProblemSetup,
    train: &[Instance],
    cfg: &ExperimentConfig,
    models: &mut FrozenModels,
) -> Result<()> {
    let batch = &train[..cfg.baseline_batch.min(train.len())];
    if cfg.methods.contains(&Method::AlistaFixed) {
        models.alista =
            Some(tune_fixed_schedule(setup, batch, cfg.layers_train, &FixedScheduleConfig::alista(), "alista_fixed")?);
    }
    if cfg.methods.contains(&Method::AlistaMmFixed) {
        models.alista_mm = Some(tune_fixed_schedule(
            setup,
            batch,
            cfg.layers_train,
            &FixedScheduleConfig::alista_mm(),
            "alista_mm_fixed",
        )?);
    }
    Ok(())
}

/// Grid-search HyperLISTA and fit the fixed-schedule baselines on `train`.
pub fn tune_models(setup: &ProblemSetup, train: &[Instance], cfg: &ExperimentConfig) -> Result<FrozenModels> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training instances"));
    }
    let base = HyperParams { layers: cfg.layers_train, ..cfg.hyper_base };
    let mut models = FrozenModels::from_hyper(setup, base, cfg.ista_lambda);
    if cfg.methods.contains(&Method::Hyperlista) {
        let report = grid_search(setup, train, &cfg.grid, &base, Some(cfg.train_gen.seed))?;
        models.hyper = report.hyperparams;
        models.search = Some(report);
    }
    fit_baselines(setup, train, cfg, &mut models)?;
    Ok(models)
}

/// Fit only the fixed schedules, keeping a given HyperLISTA configuration.
pub fn fit_fixed_baselines(
    setup: &ProblemSetup,
    train: &[Instance],
    cfg: &ExperimentConfig,
    hyper: HyperParams,
) -> Result<FrozenModels> {
    let mut models = FrozenModels::from_hyper(setup, hyper, cfg.ista_lambda);
    fit_baselines(setup, train, cfg, &mut models)?;
    Ok(models)
}

/// Run one frozen method for `layers` layers on every instance. Fixed
/// schedules longer than they were fitted for reuse their last layer.
pub fn evaluate_method(
    setup: &ProblemSetup,
    models: &FrozenModels,
    method: Method,
    instances: &[Instance],
    layers: usize,
) -> Result<Vec<RecoveryTrace>> {
    let missing = |what| Error::config(format!("{what} schedule has not been fitted"));
    let fixed = match method {
        Method::AlistaFixed => Some(models.alista.as_ref().ok_or_else(|| missing("alista"))?.extrapolate(layers)),
        Method::AlistaMmFixed => {
            Some(models.alista_mm.as_ref().ok_or_else(|| missing("alista_mm"))?.extrapolate(layers))
        }
        _ => None,
    };
    let hyper = HyperParams { layers, ..models.hyper };
    instances
        .par_iter()
        .map(|inst| match method {
            Method::Ista => run_ista(setup, inst, models.ista_lambda, models.lipschitz, layers),
            Method::Hyperlista => run_hyperlista(setup, inst, &hyper),
            Method::AlistaFixed | Method::AlistaMmFixed => {
                run_unrolled(setup, inst, Schedule::Fixed(fixed.as_deref().expect("fixed schedule")))
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn method_curve(
    setup: &ProblemSetup,
    models: &FrozenModels,
    method: Method,
    instances: &[Instance],
    layers: usize,
    averaging: NmseAveraging,
    config_label: &str,
    method_label: &str,
) -> Result<MetricCurve> {
    let traces = evaluate_method(setup, models, method, instances, layers)?;
    let mut curve = mean_curve(&traces, instances, averaging, method_label, config_label)?;
    curve.hp_fingerprint = Some(hp_fingerprint(&models.hyper));
    Ok(curve)
}

/// The matched set and the three shifted variants (sparsity, magnitude,
/// noise), all drawn with the same seed so that shifts are paired.
pub fn adaptivity_test_sets(matched: &GenConfig) -> Vec<(&'static str, GenConfig)> {
    vec![
        ("matched", matched.clone()),
        ("p=0.15", GenConfig { sparsity_p: 0.15, ..matched.clone() }),
        ("sigma=2", GenConfig { magnitude_sigma: 2.0, ..matched.clone() }),
        ("snr=30", GenConfig { snr_db: Some(30.0), ..matched.clone() }),
    ]
}

/// One curve per (test set, method) with the frozen models, at
/// `cfg.layers_test` layers.
pub fn run_adaptivity_suite(
    setup: &ProblemSetup,
    cfg: &ExperimentConfig,
    models: &FrozenModels,
) -> Result<Vec<MetricCurve>> {
    cfg.validate()?;
    let mut curves = Vec::new();
    for (label, gen) in adaptivity_test_sets(&cfg.test_gen) {
        let instances = generate_instances(setup.a(), &gen)?;
        for &method in &cfg.methods {
            curves.push(method_curve(
                setup,
                models,
                method,
                &instances,
                cfg.layers_test,
                cfg.averaging,
                label,
                method.label(),
            )?);
        }
    }
    Ok(curves)
}

/// Run every method to `cfg.layers_test` on the matched test set. Fixed
/// schedules are extended by repeating their last layer, reported under an
/// `_extra` label.
pub fn run_extrapolation(
    setup: &ProblemSetup,
    cfg: &ExperimentConfig,
    models: &FrozenModels,
) -> Result<Vec<MetricCurve>> {
    cfg.validate()?;
    let instances = generate_instances(setup.a(), &cfg.test_gen)?;
    let config_label = format!("layers={}", cfg.layers_test);
    cfg.methods
        .iter()
        .map(|&method| {
            let label = match method {
                Method::AlistaFixed | Method::AlistaMmFixed if cfg.layers_test > cfg.layers_train => {
                    format!("{}_extra", method.label())
                }
                _ => method.label().to_string(),
            };
            method_curve(setup, models, method, &instances, cfg.layers_test, cfg.averaging, &config_label, &label)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumAblation {
    pub with_momentum: SearchReport,
    pub without_momentum: SearchReport,
    /// Pooled final NMSE on the test set.
    pub with_db: f64,
    pub without_db: f64,
}

/// Search `(c1, c2, c3)` and, separately, `(c1, 0, c3)`; score both on `test`.
pub fn momentum_ablation(
    setup: &ProblemSetup,
    train: &[Instance],
    test: &[Instance],
    grid: &GridSpec,
    base: &HyperParams,
) -> Result<MomentumAblation> {
    let with_momentum = grid_search(setup, train, grid, base, None)?;
    let no_c2 = GridSpec { c2_range: (0.0, 0.0), ..grid.clone() };
    let without_momentum = grid_search(setup, train, &no_c2, base, None)?;
    let with_db = evaluate_triple(setup, test, &with_momentum.hyperparams, grid.averaging)?;
    let without_db = evaluate_triple(setup, test, &without_momentum.hyperparams, grid.averaging)?;
    Ok(MomentumAblation { with_momentum, without_momentum, with_db, without_db })
}

/// Small constant-magnitude problem with the support-stability CG switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearConfig {
    pub m: usize,
    pub n: usize,
    pub sparsity_p: f64,
    pub magnitude: f64,
    pub dict_seed: u64,
    pub data_seed: u64,
    pub count: usize,
    /// When `None`, `(c1, c2)` are searched (with `c3 = 0`) on a separate
    /// tuning set.
    pub c1_c2: Option<(f64, f64)>,
    pub tuning_count: usize,
    pub tuning_layers: usize,
    pub grid: GridSpec,
    /// Cap on unrolled layers before the switch.
    pub max_layers: usize,
    pub window: usize,
    pub support_filter: f64,
    pub stop_nmse_db: f64,
    pub max_cg_iters: Option<usize>,
    pub dict: DictSolverConfig,
}

impl Default for SuperlinearConfig {
    fn default() -> Self {
        SuperlinearConfig {
            m: 50,
            n: 100,
            sparsity_p: 0.1,
            magnitude: 1.0,
            dict_seed: 11,
            data_seed: 12,
            count: 100,
            c1_c2: None,
            tuning_count: 128,
            tuning_layers: 16,
            grid: GridSpec { c3_range: (0.0, 0.0), ..GridSpec::default() },
            max_layers: 400,
            window: 10,
            support_filter: 0.1,
            stop_nmse_db: -250.0,
            max_cg_iters: None,
            dict: DictSolverConfig::default(),
        }
    }
}

impl SuperlinearConfig {
    fn gen(&self, seed: u64, count: usize) -> GenConfig {
        GenConfig {
            m: self.m,
            n: self.n,
            sparsity_p: self.sparsity_p,
            magnitude_sigma: 1.0,
            snr_db: None,
            nonzero_mode: NonzeroMode::Constant(self.magnitude),
            seed,
            count,
        }
    }

    fn cg(&self) -> CgSwitchConfig {
        CgSwitchConfig {
            trigger: CgTrigger::SupportStable { window: self.window },
            support_filter: self.support_filter,
            max_cg_iters: self.max_cg_iters,
            cg_tol: 0.0,
            stop_nmse_db: Some(self.stop_nmse_db),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearReport {
    pub hyperparams: HyperParams,
    pub search: Option<SearchReport>,
    /// Per-iteration NMSE (dB) of the first instance.
    pub single_curve: Vec<f64>,
    pub single_switch: Option<usize>,
    /// Mean dB decrease per unrolled layer before the switch.
    pub pre_switch_rate: Option<f64>,
    /// Mean dB decrease per CG iteration after the switch.
    pub post_switch_rate: Option<f64>,
    /// Mean-of-dB curve over all instances (shorter runs padded).
    pub mean_curve: MetricCurve,
    pub switch_layers: Vec<Option<usize>>,
    pub final_db: Vec<f64>,
    pub success_rate: f64,
    /// Final NMSE of CG-off runs given each instance's CG-on step budget.
    pub ablation_final_db: Vec<f64>,
    pub ablation_successes: usize,
}

/// Switch-relative convergence rates of a per-iteration curve.
pub fn switch_rates(curve: &[f64], switch: usize) -> (Option<f64>, Option<f64>) {
    let last = curve.len() - 1;
    let pre = (switch > 0).then(|| (curve[0] - curve[switch]) / switch as f64);
    let post = (last > switch).then(|| (curve[switch] - curve[last]) / (last - switch) as f64);
    (pre, post)
}

pub fn run_superlinear_experiment(cfg: &SuperlinearConfig) -> Result<SuperlinearReport> {
    if cfg.count == 0 {
        return Err(Error::Empty("superlinear instances"));
    }
    let a = generate_dictionary(cfg.m, cfg.n, cfg.dict_seed)?;
    let (setup, _) = build_setup(&a, &cfg.dict)?;
    let (c1, c2, search) = match cfg.c1_c2 {
        Some((c1, c2)) => (c1, c2, None),
        None => {
            let tuning = generate_instances(&a, &cfg.gen(cfg.data_seed.wrapping_add(1), cfg.tuning_count))?;
            let base = HyperParams::new(1.0, 0.0, 0.0, cfg.tuning_layers).with_cg(CgSwitchConfig::off());
            let grid = GridSpec { c3_range: (0.0, 0.0), ..cfg.grid.clone() };
            let report = grid_search(&setup, &tuning, &grid, &base, Some(cfg.data_seed.wrapping_add(1)))?;
            (report.best.c1, report.best.c2, Some(report))
        }
    };
    let hp = HyperParams::new(c1, c2, 0.0, cfg.max_layers).with_cg(cfg.cg());
    let instances = generate_instances(&a, &cfg.gen(cfg.data_seed, cfg.count))?;
    let traces: Vec<RecoveryTrace> =
        instances.par_iter().map(|i| run_hyperlista(&setup, i, &hp)).collect::<Result<_>>()?;
    let final_db: Vec<f64> =
        traces.iter().zip(&instances).map(|(t, i)| nmse_db(t.final_iterate(), &i.x_star)).collect::<Result<_>>()?;
    let successes = final_db.iter().filter(|&&d| d <= cfg.stop_nmse_db).count();

    let ablation_hp = HyperParams { cg: CgSwitchConfig { trigger: CgTrigger::Off, ..hp.cg }, ..hp };
    let ablation_final_db: Vec<f64> = traces
        .par_iter()
        .zip(&instances)
        .map(|(t, i)| {
            let budget = HyperParams { layers: t.steps(), ..ablation_hp };
            let off = run_hyperlista(&setup, i, &budget)?;
            nmse_db(off.final_iterate(), &i.x_star)
        })
        .collect::<Result<_>>()?;
    let ablation_successes = ablation_final_db.iter().filter(|&&d| d <= cfg.stop_nmse_db).count();

    let single_curve = traces[0].nmse_curve(&instances[0].x_star);
    let single_switch = traces[0].cg_switch_layer;
    let (pre_switch_rate, post_switch_rate) = match single_switch {
        Some(s) => switch_rates(&single_curve, s),
        None => (None, None),
    };
    let mut mean = mean_curve(&traces, &instances, NmseAveraging::DbMean, "hyperlista", "superlinear")?;
    mean.hp_fingerprint = Some(hp_fingerprint(&hp));
    Ok(SuperlinearReport {
        hyperparams: hp,
        search,
        single_curve,
        single_switch,
        pre_switch_rate,
        post_switch_rate,
        mean_curve: mean,
        switch_layers: traces.iter().map(|t| t.cg_switch_layer).collect(),
        final_db,
        success_rate: successes as f64 / cfg.count as f64,
        ablation_final_db,
        ablation_successes,
    })
}
