use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Instance;
use crate::solvers::{HyperParams, RecoveryTrace};

pub const NMSE_FLOOR_DB: f64 = -320.0;
pub const NMSE_CEIL_DB: f64 = 100.0;

/// `‖x̂ − x*‖² / ‖x*‖²`.
pub fn nmse_ratio(x_hat: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
    let denom = x_star.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroSignal);
    }
    if x_hat.len() != x_star.len() {
        return Err(Error::dims("estimate", x_star.len(), x_hat.len()));
    }
    Ok((x_hat - x_star).norm_squared() / denom)
}

/// Ratio to dB, clamped to `[NMSE_FLOOR_DB, NMSE_CEIL_DB]`; non-finite
/// ratios map to the ceiling.
pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio.is_nan() || ratio == f64::INFINITY {
        return NMSE_CEIL_DB;
    }
    if ratio <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * ratio.log10()).clamp(NMSE_FLOOR_DB, NMSE_CEIL_DB)
}

/// Normalised squared error in dB.
pub fn nmse_db(x_hat: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
    nmse_ratio(x_hat, x_star).map(ratio_to_db)
}

/// How per-instance errors are pooled into one curve value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmseAveraging {
    /// dB of the mean squared-error ratio.
    #[default]
    RatioMean,
    /// Mean of the per-instance dB values.
    DbMean,
}

impl NmseAveraging {
    /// Pool per-instance ratios.
    pub fn pool(self, ratios: &[f64]) -> f64 {
        let k = ratios.len() as f64;
        match self {
            NmseAveraging::RatioMean => {
                let clean = ratios.iter().map(|r| if r.is_finite() { *r } else { f64::INFINITY });
                ratio_to_db(clean.sum::<f64>() / k)
            }
            NmseAveraging::DbMean => ratios.iter().map(|r| ratio_to_db(*r)).sum::<f64>() / k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    /// Entry `k` is the pooled NMSE of `x⁽ᵏ⁾`; entry 0 is the zero start.
    pub per_layer_nmse_db: Vec<f64>,
    pub method_label: String,
    pub config_label: String,
    pub averaging: NmseAveraging,
    pub instances: usize,
    /// Fingerprint of the frozen hyperparameters used, if any.
    pub hp_fingerprint: Option<String>,
}

impl MetricCurve {
    pub fn final_db(&self) -> f64 {
        *self.per_layer_nmse_db.last().expect("curve has layer 0")
    }

    pub fn at(&self, layer: usize) -> f64 {
        self.per_layer_nmse_db[layer.min(self.per_layer_nmse_db.len() - 1)]
    }

    /// CSV `layer,nmse_db`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "layer,nmse_db")?;
        for (k, v) in self.per_layer_nmse_db.iter().enumerate() {
            writeln!(out, "{k},{v}")?;
        }
        Ok(())
    }
}

/// Pool per-layer errors over aligned traces and instances. Shorter traces
/// (early stop, CG finish) are padded with their final iterate.
pub fn mean_curve(
    traces: &[RecoveryTrace],
    instances: &[Instance],
    averaging: NmseAveraging,
    method_label: &str,
    config_label: &str,
) -> Result<MetricCurve> {
    if traces.len() != instances.len() {
        return Err(Error::dims("traces vs instances", instances.len(), traces.len()));
    }
    if traces.is_empty() {
        return Err(Error::Empty("traces"));
    }
    let ratios: Vec<Vec<f64>> = traces
        .iter()
        .zip(instances)
        .map(|(t, i)| t.iterates.iter().map(|x| nmse_ratio(x, &i.x_star)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let len = ratios.iter().map(Vec::len).max().unwrap_or(0);
    let mut per_layer = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(ratios.len());
    for k in 0..len {
        column.clear();
        column.extend(ratios.iter().map(|r| r[k.min(r.len() - 1)]));
        per_layer.push(averaging.pool(&column));
    }
    Ok(MetricCurve {
        per_layer_nmse_db: per_layer,
        method_label: method_label.to_string(),
        config_label: config_label.to_string(),
        averaging,
        instances: instances.len(),
        hp_fingerprint: None,
    })
}

/// Stable FNV-1a fingerprint of the `(c1, c2, c3)` triple.
pub fn hp_fingerprint(hp: &HyperParams) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in [hp.c1, hp.c2, hp.c3] {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Phase;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn trace_of(iterates: Vec<DVector<f64>>) -> RecoveryTrace {
        let steps = iterates.len() - 1;
        RecoveryTrace {
            iterates,
            params: Vec::new(),
            phases: vec![Phase::Unrolled; steps],
            cg_switch_layer: None,
            warnings: Vec::new(),
        }
    }

    fn inst(x: &[f64]) -> Instance {
        Instance { x_star: dv(x), epsilon: DVector::zeros(1), b: DVector::zeros(1) }
    }

    #[test]
    fn nmse_examples() {
        let x = dv(&[1.0, -2.0, 0.5]);
        assert_eq!(nmse_db(&x, &x).unwrap(), NMSE_FLOOR_DB);
        assert_eq!(nmse_db(&DVector::zeros(3), &x).unwrap(), 0.0);
        assert_eq!(nmse_db(&(&x * 2.0), &x).unwrap(), 0.0);
        assert!(matches!(nmse_db(&x, &DVector::zeros(3)), Err(Error::ZeroSignal)));
        assert_eq!(nmse_db(&dv(&[f64::NAN, 0.0, 0.0]), &x).unwrap(), NMSE_CEIL_DB);
        assert_eq!(nmse_db(&(&x * 1e60), &x).unwrap(), NMSE_CEIL_DB);
    }

    #[test]
    fn single_instance_curve() {
        let i = inst(&[1.0, 0.0]);
        let t = trace_of(vec![dv(&[0.0, 0.0]), dv(&[0.5, 0.0]), dv(&[0.9, 0.0])]);
        for avg in [NmseAveraging::RatioMean, NmseAveraging::DbMean] {
            let c = mean_curve(std::slice::from_ref(&t), std::slice::from_ref(&i), avg, "m", "c").unwrap();
            assert_eq!(c.per_layer_nmse_db, t.nmse_curve(&i.x_star));
        }
    }

    #[test]
    fn zero_iterates_give_flat_zero_curve() {
        let t = trace_of(vec![DVector::zeros(2); 5]);
        let c =
            mean_curve(&[t.clone(), t], &[inst(&[1.0, 2.0]), inst(&[0.0, 3.0])], NmseAveraging::RatioMean, "m", "c")
                .unwrap();
        assert_eq!(c.per_layer_nmse_db, vec![0.0; 5]);
    }

    #[test]
    fn db_mean_averages_entrywise() {
        let i1 = inst(&[1.0]);
        let i2 = inst(&[1.0]);
        let t1 = trace_of(vec![dv(&[0.0]), dv(&[0.9])]);
        let t2 = trace_of(vec![dv(&[0.0]), dv(&[0.99])]);
        let c =
            mean_curve(&[t1.clone(), t2.clone()], &[i1.clone(), i2.clone()], NmseAveraging::DbMean, "m", "c").unwrap();
        let a = t1.nmse_curve(&i1.x_star);
        let b = t2.nmse_curve(&i2.x_star);
        for k in 0..2 {
            assert!((c.per_layer_nmse_db[k] - (a[k] + b[k]) / 2.0).abs() < 1e-12);
        }
        let r = mean_curve(&[t1, t2], &[i1, i2], NmseAveraging::RatioMean, "m", "c").unwrap();
        let expected = 10.0 * ((0.01 + 0.0001) / 2.0f64).log10();
        assert!((r.per_layer_nmse_db[1] - expected).abs() < 1e-9);
    }

    #[test]
    fn ragged_traces_are_padded() {
        let i = inst(&[1.0]);
        let short = trace_of(vec![dv(&[0.0]), dv(&[1.0])]);
        let long = trace_of(vec![dv(&[0.0]), dv(&[0.5]), dv(&[0.9])]);
        let c = mean_curve(&[short, long], &[i.clone(), i], NmseAveraging::DbMean, "m", "c").unwrap();
        assert_eq!(c.per_layer_nmse_db.len(), 3);
        assert!((c.per_layer_nmse_db[2] - (NMSE_FLOOR_DB + -20.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn misaligned_inputs_error() {
        let t = trace_of(vec![dv(&[0.0])]);
        assert!(mean_curve(&[t], &[], NmseAveraging::DbMean, "m", "c").is_err());
    }

    #[test]
    fn fingerprint_tracks_triple_only() {
        let a = HyperParams::new(0.5, 0.1, 0.2, 16);
        let b = HyperParams { layers: 40, ..a };
        let c = HyperParams::new(0.5, 0.1, 0.3, 16);
        assert_eq!(hp_fingerprint(&a), hp_fingerprint(&b));
        assert_ne!(hp_fingerprint(&a), hp_fingerprint(&c));
    }
}
