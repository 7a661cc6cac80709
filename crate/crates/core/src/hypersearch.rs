//! Coarse-to-fine grid search over the HyperLISTA triple `(c1, c2, c3)`.
//!
//! A triple is scored by the pooled NMSE after the last layer on a
//! minibatch of training instances; lower is better. The coarse pass covers
//! the full box, the fine pass a box of `zoom_factor` times the width
//! centred on the coarse winner (clipped to the bounds). The coarse winner is
//! always part of the fine grid, so the fine pass can never do worse.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{nmse_ratio, NmseAveraging};
use crate::problems::{Instance, ProblemSetup};
use crate::solvers::{run_hyperlista, HyperParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c1_range: (f64, f64),
    pub c2_range: (f64, f64),
    pub c3_range: (f64, f64),
    pub coarse_points: usize,
    pub fine_points: usize,
    pub zoom_factor: f64,
    /// Number of training instances used to score a triple.
    pub minibatch_size: usize,
    #[serde(default)]
    pub averaging: NmseAveraging,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c1_range: (0.05, 2.0),
            c2_range: (0.0, 1.0),
            c3_range: (0.0, 1.0),
            coarse_points: 8,
            fine_points: 8,
            zoom_factor: 0.25,
            minibatch_size: 256,
            averaging: NmseAveraging::RatioMean,
        }
    }
}

/// A range narrower than this (relative) collapses to its lower end.
const DEGENERATE_WIDTH: f64 = 1e-9;

fn is_degenerate((lo, hi): (f64, f64)) -> bool {
    hi - lo <= DEGENERATE_WIDTH * lo.abs().max(hi.abs()).max(1.0)
}

fn linspace((lo, hi): (f64, f64), points: usize) -> Vec<f64> {
    if is_degenerate((lo, hi)) || points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("c1", self.c1_range), ("c2", self.c2_range), ("c3", self.c3_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] is empty or not finite")));
            }
        }
        if !(self.c1_range.0 > 0.0) {
            return Err(Error::config("c1 range must be strictly positive"));
        }
        if self.c2_range.0 < 0.0 {
            return Err(Error::config("c2 range must be nonnegative"));
        }
        if self.c3_range.0 < 0.0 || self.c3_range.1 > 1.0 {
            return Err(Error::config("c3 range must lie within [0, 1]"));
        }
        if self.coarse_points < 2 || self.fine_points < 2 {
            return Err(Error::config("grids need at least two points per axis"));
        }
        if !(self.zoom_factor > 0.0 && self.zoom_factor <= 1.0) {
            return Err(Error::config("zoom_factor must lie in (0, 1]"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch_size must be positive"));
        }
        Ok(())
    }

    fn axes(&self) -> [(f64, f64); 3] {
        [self.c1_range, self.c2_range, self.c3_range]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub pass: Pass,
    pub nmse_db: f64,
}

impl Evaluation {
    pub fn triple(&self) -> (f64, f64, f64) {
        (self.c1, self.c2, self.c3)
    }
}

/// Lower score first; ties broken lexicographically on `(c1, c2, c3)`.
fn better(a: &Evaluation, b: &Evaluation) -> bool {
    a.nmse_db.total_cmp(&b.nmse_db).then(a.c1.total_cmp(&b.c1)).then(a.c2.total_cmp(&b.c2)).then(a.c3.total_cmp(&b.c3))
        == Ordering::Less
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub evaluations: Vec<Evaluation>,
    pub best: Evaluation,
    /// Best triple merged into the base run configuration.
    pub hyperparams: HyperParams,
    pub spec: GridSpec,
    pub tuning_seed: Option<u64>,
}

impl SearchReport {
    /// CSV `c1,c2,c3,pass,nmse_db`, one row per evaluated triple.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "c1,c2,c3,pass,nmse_db")?;
        for e in &self.evaluations {
            let pass = match e.pass {
                Pass::Coarse => "coarse",
                Pass::Fine => "fine",
            };
            writeln!(out, "{},{},{},{pass},{}", e.c1, e.c2, e.c3, e.nmse_db)?;
        }
        Ok(())
    }
}

/// Pooled final-layer NMSE (dB) of HyperLISTA with `hp` over `instances`.
///
/// An instance whose run fails or ends non-finite contributes a ratio of 1
/// (the 0 dB of the all-zero estimate) so that one bad instance cannot
/// dominate the pooled score.
pub fn evaluate_triple(
    setup: &ProblemSetup,
    instances: &[Instance],
    hp: &HyperParams,
    averaging: NmseAveraging,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("evaluation instances"));
    }
    hp.validate()?;
    let ratios: Vec<f64> = instances
        .par_iter()
        .map(|inst| {
            run_hyperlista(setup, inst, hp)
                .and_then(|t| nmse_ratio(t.final_iterate(), &inst.x_star))
                .ok()
                .filter(|r| r.is_finite())
                .unwrap_or(1.0)
        })
        .collect();
    Ok(averaging.pool(&ratios))
}

fn evaluate_grid(
    setup: &ProblemSetup,
    batch: &[Instance],
    base: &HyperParams,
    grid: &[(f64, f64, f64)],
    pass: Pass,
    averaging: NmseAveraging,
) -> Result<Vec<Evaluation>> {
    grid.iter()
        .map(|&t| {
            let score = evaluate_triple(setup, batch, &base.with_triple(t), averaging)?;
            log::debug!("{pass:?} ({:.4}, {:.4}, {:.4}) -> {score:.3} dB", t.0, t.1, t.2);
            Ok(Evaluation { c1: t.0, c2: t.1, c3: t.2, pass, nmse_db: score })
        })
        .collect()
}

fn cartesian(axes: &[Vec<f64>; 3]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                out.push((a, b, c));
            }
        }
    }
    out
}

fn fine_axis((lo, hi): (f64, f64), centre: f64, zoom: f64, points: usize) -> Vec<f64> {
    if is_degenerate((lo, hi)) {
        return vec![lo];
    }
    let half = zoom * (hi - lo) / 2.0;
    let mut axis = linspace(((centre - half).max(lo), (centre + half).min(hi)), points);
    axis.push(centre);
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    axis
}

/// Grid-search `(c1, c2, c3)` on the first `minibatch_size` of `instances`,
/// keeping every other setting of `base`.
pub fn grid_search(
    setup: &ProblemSetup,
    instances: &[Instance],
    spec: &GridSpec,
    base: &HyperParams,
    tuning_seed: Option<u64>,
) -> Result<SearchReport> {
    spec.validate()?;
    if instances.is_empty() {
        return Err(Error::Empty("tuning instances"));
    }
    let batch = &instances[..spec.minibatch_size.min(instances.len())];
    let coarse_axes = spec.axes().map(|r| linspace(r, spec.coarse_points));
    let mut evaluations = evaluate_grid(setup, batch, base, &cartesian(&coarse_axes), Pass::Coarse, spec.averaging)?;
    let coarse_best = *evaluations.iter().reduce(|a, b| if better(b, a) { b } else { a }).expect("non-empty grid");

    let centre = [coarse_best.c1, coarse_best.c2, coarse_best.c3];
    let mut fine_axes: [Vec<f64>; 3] = Default::default();
    for (i, r) in spec.axes().into_iter().enumerate() {
        fine_axes[i] = fine_axis(r, centre[i], spec.zoom_factor, spec.fine_points);
    }
    evaluations.extend(evaluate_grid(setup, batch, base, &cartesian(&fine_axes), Pass::Fine, spec.averaging)?);
    let best = *evaluations.iter().reduce(|a, b| if better(b, a) { b } else { a }).expect("non-empty grid");
    log::info!("grid search best ({:.4}, {:.4}, {:.4}) at {:.3} dB", best.c1, best.c2, best.c3, best.nmse_db);
    Ok(SearchReport {
        evaluations,
        best,
        hyperparams: base.with_triple(best.triple()),
        spec: spec.clone(),
        tuning_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::build_setup;
    use crate::problems::{generate_dictionary, generate_instances, GenConfig};
    use crate::solvers::CgSwitchConfig;

    fn small() -> (ProblemSetup, Vec<Instance>) {
        let a = generate_dictionary(20, 40, 3).unwrap();
        let (s, _) = build_setup(&a, &Default::default()).unwrap();
        let gen = GenConfig { m: 20, n: 40, ..GenConfig::standard(9, 8) };
        let inst = generate_instances(&a, &gen).unwrap();
        (s, inst)
    }

    fn quick_spec() -> GridSpec {
        GridSpec { coarse_points: 3, fine_points: 3, ..GridSpec::default() }
    }

    #[test]
    fn linspace_and_degenerate_ranges() {
        assert_eq!(linspace((0.0, 1.0), 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace((0.5, 0.5), 8), vec![0.5]);
        assert_eq!(linspace((0.5, 0.5 + 1e-12), 8), vec![0.5]);
    }

    #[test]
    fn fine_axis_contains_centre_and_stays_in_bounds() {
        let axis = fine_axis((0.0, 1.0), 1.0 / 7.0, 0.25, 8);
        assert!(axis.contains(&(1.0 / 7.0)));
        assert!(axis.iter().all(|v| (0.0..=1.0).contains(v)));
        let edge = fine_axis((0.0, 1.0), 0.0, 0.25, 4);
        assert_eq!(edge[0], 0.0);
        assert!(*edge.last().unwrap() <= 0.125 + 1e-15);
    }

    #[test]
    fn repeated_instance_scores_like_single() {
        let (s, inst) = small();
        let hp = HyperParams::new(0.5, 0.1, 0.2, 8).with_cg(CgSwitchConfig::off());
        let one = evaluate_triple(&s, &inst[..1], &hp, NmseAveraging::RatioMean).unwrap();
        let ten = vec![inst[0].clone(); 10];
        let many = evaluate_triple(&s, &ten, &hp, NmseAveraging::RatioMean).unwrap();
        assert!((one - many).abs() < 1e-12);
    }

    #[test]
    fn fine_pass_never_worse_than_coarse() {
        let (s, inst) = small();
        let base = HyperParams::new(1.0, 0.0, 0.0, 6).with_cg(CgSwitchConfig::off());
        let r = grid_search(&s, &inst, &quick_spec(), &base, Some(9)).unwrap();
        let coarse =
            r.evaluations.iter().filter(|e| e.pass == Pass::Coarse).map(|e| e.nmse_db).fold(f64::INFINITY, f64::min);
        assert!(r.best.nmse_db <= coarse);
        assert_eq!(r.evaluations.iter().filter(|e| e.pass == Pass::Coarse).count(), 27);
        assert_eq!(r.hyperparams.triple(), r.best.triple());
        assert_eq!(r.hyperparams.layers, 6);
    }

    #[test]
    fn collapsed_axis_is_honoured() {
        let (s, inst) = small();
        let base = HyperParams::new(1.0, 0.0, 0.0, 4).with_cg(CgSwitchConfig::off());
        let spec = GridSpec { c3_range: (0.0, 0.0), ..quick_spec() };
        let r = grid_search(&s, &inst, &spec, &base, None).unwrap();
        assert!(r.evaluations.iter().all(|e| e.c3 == 0.0));
    }

    #[test]
    fn search_is_deterministic() {
        let (s, inst) = small();
        let base = HyperParams::new(1.0, 0.0, 0.0, 4).with_cg(CgSwitchConfig::off());
        let a = grid_search(&s, &inst, &quick_spec(), &base, None).unwrap();
        let b = grid_search(&s, &inst, &quick_spec(), &base, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            GridSpec { c1_range: (0.0, 1.0), ..GridSpec::default() },
            GridSpec { c3_range: (0.0, 1.5), ..GridSpec::default() },
            GridSpec { c2_range: (1.0, 0.5), ..GridSpec::default() },
            GridSpec { coarse_points: 1, ..GridSpec::default() },
            GridSpec { minibatch_size: 0, ..GridSpec::default() },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn csv_has_one_row_per_evaluation() {
        let (s, inst) = small();
        let base = HyperParams::new(1.0, 0.0, 0.0, 3).with_cg(CgSwitchConfig::off());
        let r = grid_search(&s, &inst, &quick_spec(), &base, None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("c1,c2,c3,pass,nmse_db\n"));
        assert_eq!(text.lines().count(), r.evaluations.len() + 1);
    }
}
