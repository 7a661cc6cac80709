use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use hyperlista::dictionary::{build_setup, DictSolverConfig};
use hyperlista::eval::{
    run_adaptivity_suite, run_extrapolation, run_superlinear_experiment, ExperimentConfig, FrozenModels, Method,
    MetricCurve, NmseAveraging, SuperlinearConfig,
};
use hyperlista::hypersearch::{grid_search, GridSpec, SearchReport};
use hyperlista::problems::{generate_dictionary, generate_instances, load_dataset, save_dataset, Dataset};
use hyperlista::solvers::{run_hyperlista, SupportScale};
use hyperlista::{CgSwitchConfig, CgTrigger, GenConfig, HyperParams, NonzeroMode};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::resolved;
use crate::manifest::{manifest_path_for, Manifest};
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value.as_ref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

/// Print an output path for scripts.
fn announce(path: &Path) {
    println!("{}", path.display());
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn parse_nonzero(spec: &str) -> anyhow::Result<NonzeroMode> {
    match spec.split_once(':') {
        None if spec == "gaussian" => Ok(NonzeroMode::Gaussian),
        Some(("constant", v)) => {
            v.parse().map(NonzeroMode::Constant).map_err(|_| usage(format!("bad constant value in --nonzero {spec}")))
        }
        _ => Err(usage(format!("--nonzero must be `gaussian` or `constant:<value>`, got `{spec}`"))),
    }
}

fn parse_cg(spec: &str) -> anyhow::Result<CgTrigger> {
    let bad =
        || usage(format!("--cg must be `off`, `p-threshold:<fraction>` or `support-stable:<window>`, got `{spec}`"));
    match spec.split_once(':') {
        None if spec == "off" => Ok(CgTrigger::Off),
        Some(("p-threshold", f)) => Ok(CgTrigger::PThreshold { fraction: f.parse().map_err(|_| bad())? }),
        Some(("support-stable", w)) => Ok(CgTrigger::SupportStable { window: w.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

fn parse_averaging(spec: Option<&str>) -> anyhow::Result<NmseAveraging> {
    match spec.unwrap_or("ratio-mean") {
        "ratio-mean" => Ok(NmseAveraging::RatioMean),
        "db-mean" => Ok(NmseAveraging::DbMean),
        other => Err(usage(format!("--averaging must be `ratio-mean` or `db-mean`, got `{other}`"))),
    }
}

fn parse_range(v: &Option<Vec<f64>>, default: (f64, f64), flag: &str) -> anyhow::Result<(f64, f64)> {
    match v.as_deref() {
        None => Ok(default),
        Some([lo, hi]) => Ok((*lo, *hi)),
        Some(_) => Err(usage(format!("--{flag} takes `lo,hi`"))),
    }
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Bernoulli probability of a nonzero entry.
    #[arg(long)]
    pub p: Option<f64>,
    /// Standard deviation of Gaussian nonzeros.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// No measurement noise (the default unless --snr is given).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub noiseless: Option<bool>,
    /// Measurement SNR in dB.
    #[arg(long)]
    pub snr: Option<f64>,
    /// `gaussian` or `constant:<value>`.
    #[arg(long)]
    pub nonzero: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Seed of the instances.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the dictionary (defaults to --seed).
    #[arg(long)]
    pub dict_seed: Option<u64>,
    /// Reuse the dictionary (and setup, if present) of an existing file.
    #[arg(long)]
    pub dict_from: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen(args: &GenArgs) -> anyhow::Result<()> {
    let out = required(&args.out, "out")?;
    if args.noiseless == Some(true) && args.snr.is_some() {
        return Err(usage("--noiseless and --snr are mutually exclusive"));
    }
    let seed = args.seed.unwrap_or(0);
    let dict_seed = args.dict_seed.unwrap_or(seed);
    let (dictionary, setup) = match &args.dict_from {
        Some(path) => {
            let src = load(path)?;
            (src.dictionary, src.setup)
        }
        None => {
            let m = args.m.unwrap_or(250);
            let n = args.n.unwrap_or(500);
            (generate_dictionary(m, n, dict_seed)?, None)
        }
    };
    let (m, n) = dictionary.shape();
    if args.m.is_some_and(|v| v != m) || args.n.is_some_and(|v| v != n) {
        return Err(usage(format!("--m/--n disagree with the reused {m}×{n} dictionary")));
    }
    let gen = GenConfig {
        m,
        n,
        sparsity_p: args.p.unwrap_or(0.1),
        magnitude_sigma: args.sigma.unwrap_or(1.0),
        snr_db: args.snr,
        nonzero_mode: parse_nonzero(args.nonzero.as_deref().unwrap_or("gaussian"))?,
        seed,
        count: args.count.unwrap_or(2048),
    };
    let instances = generate_instances(&dictionary, &gen)?;
    let data = Dataset {
        dictionary,
        setup,
        gen: Some(gen),
        instances,
        meta: json!({ "dict_seed": args.dict_from.is_none().then_some(dict_seed) }),
    };
    let sidecar = save_dataset(out, &data)?;
    log::info!("wrote {} instances ({m}×{n}) to {}", data.instances.len(), out.display());

    let mut manifest = Manifest::new("gen", resolved(args), json!({ "seed": seed, "dict_seed": dict_seed }));
    manifest.add(out)?;
    manifest.add(&sidecar)?;
    manifest.write(&manifest_path_for(out))?;
    announce(out);
    Ok(())
}

// ---------------------------------------------------------------- dict

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictArgs {
    /// Dataset whose dictionary is used.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub zeta0: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub shrink: Option<f64>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub outer_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Also write the per-iteration f1/f2 history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

pub fn dict(args: &DictArgs) -> anyhow::Result<()> {
    let input = required(&args.input, "in")?;
    let out = required(&args.out, "out")?;
    let defaults = DictSolverConfig::default();
    let cfg = DictSolverConfig {
        zeta0: args.zeta0.unwrap_or(defaults.zeta0),
        alpha0: args.alpha0.unwrap_or(defaults.alpha0),
        shrink_factor: args.shrink.unwrap_or(defaults.shrink_factor),
        inner_tol: args.inner_tol.unwrap_or(defaults.inner_tol),
        outer_tol: args.outer_tol.unwrap_or(defaults.outer_tol),
        max_iters: args.max_iters.unwrap_or(defaults.max_iters),
    };
    let data = load(input)?;
    let (setup, report) = build_setup(&data.dictionary, &cfg)?;
    let results = json!({
        "f1": report.final_f1(),
        "f2": report.final_f2(),
        "mu": setup.mu(),
        "iterations": report.iterations,
        "converged": report.converged,
    });
    eprintln!(
        "f1 = {:.6e}  f2 = {:.6e}  mu = {:.6}  iterations = {}  converged = {}",
        report.final_f1(),
        report.final_f2(),
        setup.mu(),
        report.iterations,
        report.converged
    );
    let mut manifest = Manifest::new("dict", resolved(args), json!({}));
    let sidecar = save_dataset(
        out,
        &Dataset {
            dictionary: data.dictionary,
            setup: Some(setup),
            gen: None,
            instances: Vec::new(),
            meta: results.clone(),
        },
    )?;
    manifest.add(out)?;
    manifest.add(&sidecar)?;
    if let Some(path) = &args.history {
        report.write_history_csv(create(path)?)?;
        manifest.add(path)?;
        announce(path);
    }
    manifest.results = results;
    manifest.write(&manifest_path_for(out))?;
    announce(out);
    Ok(())
}

// ---------------------------------------------------------------- search

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchArgs {
    /// Setup file written by `dict`.
    #[arg(long)]
    pub setup: Option<PathBuf>,
    /// Training dataset (same dictionary as the setup).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// `default` or a JSON grid specification.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub coarse: Option<usize>,
    #[arg(long)]
    pub fine: Option<usize>,
    #[arg(long)]
    pub zoom: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub c1_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub c2_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub c3_range: Option<Vec<f64>>,
    /// `off`, `p-threshold:<fraction>` or `support-stable:<window>`.
    #[arg(long)]
    pub cg: Option<String>,
    #[arg(long)]
    pub support_filter: Option<f64>,
    /// `count` or `percent`.
    #[arg(long)]
    pub support_scale: Option<String>,
    /// `ratio-mean` or `db-mean`.
    #[arg(long)]
    pub averaging: Option<String>,
    /// SearchReport JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-triple evaluations as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn load_setup_and_data(setup_path: &Path, data_path: &Path) -> anyhow::Result<(hyperlista::ProblemSetup, Dataset)> {
    let setup = load(setup_path)?
        .setup
        .ok_or_else(|| anyhow::anyhow!("{} holds no setup; run `dict` first", setup_path.display()))?;
    let data = load(data_path)?;
    if &data.dictionary != setup.a() {
        anyhow::bail!("{} was generated for a different dictionary than {}", data_path.display(), setup_path.display());
    }
    Ok((setup, data))
}

fn cg_config(spec: Option<&str>, filter: Option<f64>) -> anyhow::Result<CgSwitchConfig> {
    let mut cg = CgSwitchConfig::off();
    if let Some(spec) = spec {
        cg.trigger = parse_cg(spec)?;
    }
    if let Some(f) = filter {
        cg.support_filter = f;
    }
    Ok(cg)
}

pub fn search(args: &SearchArgs) -> anyhow::Result<()> {
    let out = required(&args.out, "out")?;
    let (setup, data) = load_setup_and_data(required(&args.setup, "setup")?, required(&args.train, "train")?)?;
    let mut spec = match args.grid.as_deref() {
        None | Some("default") => GridSpec::default(),
        Some(path) => {
            serde_json::from_str(&std::fs::read_to_string(path).with_context(|| format!("reading grid {path}"))?)
                .map_err(|e| usage(format!("bad grid file {path}: {e}")))?
        }
    };
    spec.c1_range = parse_range(&args.c1_range, spec.c1_range, "c1-range")?;
    spec.c2_range = parse_range(&args.c2_range, spec.c2_range, "c2-range")?;
    spec.c3_range = parse_range(&args.c3_range, spec.c3_range, "c3-range")?;
    spec.coarse_points = args.coarse.unwrap_or(spec.coarse_points);
    spec.fine_points = args.fine.unwrap_or(spec.fine_points);
    spec.zoom_factor = args.zoom.unwrap_or(spec.zoom_factor);
    spec.minibatch_size = args.minibatch.unwrap_or(spec.minibatch_size);
    if args.averaging.is_some() {
        spec.averaging = parse_averaging(args.averaging.as_deref())?;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let support_scale = match args.support_scale.as_deref() {
        None | Some("count") => SupportScale::Count,
        Some("percent") => SupportScale::Percent,
        Some(other) => return Err(usage(format!("--support-scale must be `count` or `percent`, got `{other}`"))),
    };
    let base = HyperParams {
        support_scale,
        ..HyperParams::new(1.0, 0.0, 0.0, args.layers.unwrap_or(16))
            .with_cg(cg_config(args.cg.as_deref(), args.support_filter)?)
    };
    let seed = data.gen.as_ref().map(|g| g.seed);
    let report = grid_search(&setup, &data.instances, &spec, &base, seed)?;
    eprintln!(
        "best c1 = {}  c2 = {}  c3 = {}  ({:.3} dB)",
        report.best.c1, report.best.c2, report.best.c3, report.best.nmse_db
    );
    write_json(out, &report)?;
    let mut manifest = Manifest::new("search", resolved(args), json!({ "tuning_seed": seed }));
    manifest.add(out)?;
    if let Some(csv) = &args.csv {
        report.write_csv(create(csv)?)?;
        manifest.add(csv)?;
        announce(csv);
    }
    manifest.results = json!({ "best": report.best });
    manifest.write(&manifest_path_for(out))?;
    announce(out);
    Ok(())
}

/// Accept either a SearchReport or bare HyperParams JSON.
fn load_hyperparams(path: &Path) -> anyhow::Result<HyperParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(report) = serde_json::from_str::<SearchReport>(&text) {
        return Ok(report.hyperparams);
    }
    serde_json::from_str::<HyperParams>(&text)
        .with_context(|| format!("{} is neither a search report nor hyperparameters", path.display()))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// `adaptivity` or `extrapolate`.
    #[arg(long)]
    pub suite: Option<String>,
    /// Search report (or hyperparameter JSON) with the frozen triple.
    #[arg(long)]
    pub hp: Option<PathBuf>,
    #[arg(long)]
    pub setup: Option<PathBuf>,
    /// Training dataset used to fit the fixed-schedule baselines; its
    /// generator settings define the matched test distribution.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test_seed: Option<u64>,
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Evaluation depth (default: training depth, or 40 for `extrapolate`).
    #[arg(long)]
    pub layers: Option<usize>,
    /// Subset of `ista,alista_fixed,alista_mm_fixed,hyperlista`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub baseline_batch: Option<usize>,
    #[arg(long)]
    pub ista_lambda: Option<f64>,
    /// `ratio-mean` or `db-mean`.
    #[arg(long)]
    pub averaging: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_methods(list: &Option<Vec<String>>) -> anyhow::Result<Vec<Method>> {
    let Some(list) = list else { return Ok(Method::all()) };
    list.iter()
        .map(|s| {
            Method::all().into_iter().find(|m| m.label() == s).ok_or_else(|| usage(format!("unknown method `{s}`")))
        })
        .collect()
}

fn file_label(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' }).collect()
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let out = required(&args.out, "out")?;
    let suite = required(&args.suite, "suite")?.as_str();
    if !matches!(suite, "adaptivity" | "extrapolate") {
        return Err(usage(format!("--suite must be `adaptivity` or `extrapolate`, got `{suite}`")));
    }
    let hyper = load_hyperparams(required(&args.hp, "hp")?)?;
    let (setup, train) = load_setup_and_data(required(&args.setup, "setup")?, required(&args.train, "train")?)?;
    let train_gen = train.gen.clone().ok_or_else(|| anyhow::anyhow!("training file lacks generator settings"))?;
    let test_seed = args.test_seed.unwrap_or(train_gen.seed.wrapping_add(1000));
    let layers_test = args.layers.unwrap_or(if suite == "extrapolate" { 40 } else { hyper.layers });
    let cfg = ExperimentConfig {
        methods: parse_methods(&args.methods)?,
        test_gen: GenConfig { seed: test_seed, count: args.test_count.unwrap_or(256), ..train_gen.clone() },
        train_gen,
        layers_train: hyper.layers,
        layers_test,
        grid: GridSpec::default(),
        hyper_base: hyper,
        baseline_batch: args.baseline_batch.unwrap_or(256),
        ista_lambda: args.ista_lambda.unwrap_or(0.05),
        averaging: parse_averaging(args.averaging.as_deref())?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let models = hyperlista::eval::fit_fixed_baselines(&setup, &train.instances, &cfg, hyper)?;
    let curves = match suite {
        "adaptivity" => run_adaptivity_suite(&setup, &cfg, &models)?,
        _ => run_extrapolation(&setup, &cfg, &models)?,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest =
        Manifest::new("eval", resolved(args), json!({ "train_seed": cfg.train_gen.seed, "test_seed": test_seed }));
    for curve in &curves {
        let path =
            out.join(format!("{suite}_{}_{}.csv", file_label(&curve.config_label), file_label(&curve.method_label)));
        curve.write_csv(create(&path)?)?;
        manifest.add(&path)?;
        announce(&path);
        log::info!("{:>10} {:>22}  final {:8.3} dB", curve.config_label, curve.method_label, curve.final_db());
    }
    let report_path = out.join(format!("{suite}_report.json"));
    write_json(&report_path, &EvalReport { suite, config: &cfg, models: &models, curves: &curves })?;
    manifest.add(&report_path)?;
    manifest.write(&out.join("manifest.json"))?;
    announce(&report_path);
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    suite: &'a str,
    config: &'a ExperimentConfig,
    models: &'a FrozenModels,
    curves: &'a [MetricCurve],
}

// ---------------------------------------------------------------- superlinear

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperlinearArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Value of every nonzero entry.
    #[arg(long)]
    pub magnitude: Option<f64>,
    #[arg(long)]
    pub dict_seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Fix c1 instead of searching (requires --c2).
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub tuning_count: Option<usize>,
    #[arg(long)]
    pub tuning_layers: Option<usize>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub filter: Option<f64>,
    #[arg(long)]
    pub stop_db: Option<f64>,
    #[arg(long)]
    pub max_cg_iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn superlinear(args: &SuperlinearArgs) -> anyhow::Result<()> {
    let out = required(&args.out, "out")?;
    let d = SuperlinearConfig::default();
    let c1_c2 = match (args.c1, args.c2) {
        (Some(c1), Some(c2)) => Some((c1, c2)),
        (None, None) => None,
        _ => return Err(usage("--c1 and --c2 must be given together")),
    };
    let cfg = SuperlinearConfig {
        m: args.m.unwrap_or(d.m),
        n: args.n.unwrap_or(d.n),
        sparsity_p: args.p.unwrap_or(d.sparsity_p),
        magnitude: args.magnitude.unwrap_or(d.magnitude),
        dict_seed: args.dict_seed.unwrap_or(d.dict_seed),
        data_seed: args.data_seed.unwrap_or(d.data_seed),
        count: args.count.unwrap_or(d.count),
        c1_c2,
        tuning_count: args.tuning_count.unwrap_or(d.tuning_count),
        tuning_layers: args.tuning_layers.unwrap_or(d.tuning_layers),
        max_layers: args.max_layers.unwrap_or(d.max_layers),
        window: args.window.unwrap_or(d.window),
        support_filter: args.filter.unwrap_or(d.support_filter),
        stop_nmse_db: args.stop_db.unwrap_or(d.stop_nmse_db),
        max_cg_iters: args.max_cg_iters.or(d.max_cg_iters),
        ..d
    };
    let report = run_superlinear_experiment(&cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest =
        Manifest::new("superlinear", resolved(args), json!({ "dict_seed": cfg.dict_seed, "data_seed": cfg.data_seed }));
    let single = MetricCurve {
        per_layer_nmse_db: report.single_curve.clone(),
        method_label: "hyperlista".into(),
        config_label: "single".into(),
        averaging: NmseAveraging::DbMean,
        instances: 1,
        hp_fingerprint: report.mean_curve.hp_fingerprint.clone(),
    };
    for (name, curve) in [("superlinear_single.csv", &single), ("superlinear_mean.csv", &report.mean_curve)] {
        let path = out.join(name);
        curve.write_csv(create(&path)?)?;
        manifest.add(&path)?;
        announce(&path);
    }
    let report_path = out.join("superlinear_report.json");
    write_json(&report_path, &json!({ "config": cfg, "report": report }))?;
    manifest.add(&report_path)?;
    manifest.results = json!({
        "success_rate": report.success_rate,
        "single_switch": report.single_switch,
        "pre_switch_rate": report.pre_switch_rate,
        "post_switch_rate": report.post_switch_rate,
        "ablation_successes": report.ablation_successes,
    });
    manifest.write(&out.join("manifest.json"))?;
    eprintln!(
        "success rate {:.2}; switch at layer {:?}; pre {:?} dB/layer, post {:?} dB/iter; CG-off successes {}",
        report.success_rate,
        report.single_switch,
        report.pre_switch_rate,
        report.post_switch_rate,
        report.ablation_successes
    );
    announce(&report_path);
    Ok(())
}

// ---------------------------------------------------------------- trace

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceArgs {
    #[arg(long)]
    pub setup: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Instance index within the dataset.
    #[arg(long)]
    pub index: Option<usize>,
    /// Search report or hyperparameter JSON; otherwise --c1/--c2/--c3.
    #[arg(long)]
    pub hp: Option<PathBuf>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub c3: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// `off`, `p-threshold:<fraction>` or `support-stable:<window>`.
    #[arg(long)]
    pub cg: Option<String>,
    #[arg(long)]
    pub support_filter: Option<f64>,
    /// Per-layer CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the trace as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn trace(args: &TraceArgs) -> anyhow::Result<()> {
    let out = required(&args.out, "out")?;
    let (setup, data) = load_setup_and_data(required(&args.setup, "setup")?, required(&args.data, "data")?)?;
    let mut hp = match &args.hp {
        Some(path) => load_hyperparams(path)?,
        None => HyperParams::new(*required(&args.c1, "c1")?, args.c2.unwrap_or(0.0), args.c3.unwrap_or(0.0), 16),
    };
    hp.c1 = args.c1.unwrap_or(hp.c1);
    hp.c2 = args.c2.unwrap_or(hp.c2);
    hp.c3 = args.c3.unwrap_or(hp.c3);
    hp.layers = args.layers.unwrap_or(hp.layers);
    if args.cg.is_some() || args.support_filter.is_some() {
        let mut cg = cg_config(args.cg.as_deref(), args.support_filter)?;
        if args.cg.is_none() {
            cg.trigger = hp.cg.trigger;
        }
        hp.cg = cg;
    }
    hp.validate().map_err(|e| usage(e.to_string()))?;
    let index = args.index.unwrap_or(0);
    let inst = data
        .instances
        .get(index)
        .ok_or_else(|| usage(format!("--index {index} out of range ({} instances)", data.instances.len())))?;
    let tr = run_hyperlista(&setup, inst, &hp)?;
    tr.write_csv(create(out)?, &inst.x_star)?;
    let mut manifest = Manifest::new("trace", resolved(args), json!({}));
    manifest.add(out)?;
    if let Some(path) = &args.json {
        write_json(path, &tr.to_json(&inst.x_star))?;
        manifest.add(path)?;
        announce(path);
    }
    manifest.results = json!({ "layers": tr.steps(), "cg_switch_layer": tr.cg_switch_layer, "hyperparams": hp });
    manifest.write(&manifest_path_for(out))?;
    announce(out);
    Ok(())
}
