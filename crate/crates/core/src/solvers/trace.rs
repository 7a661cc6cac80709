use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::LayerParams;
use crate::eval::nmse_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Unrolled,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceWarning {
    /// The trigger fired but the estimated support was empty; CG skipped.
    EmptySupportAtSwitch { layer: usize },
    /// `dᵀQd ≤ 0` during CG; the best iterate so far was kept.
    CgBreakdown { iteration: usize },
}

/// Iterates and parameters of one solver run. `iterates[0]` is the zero
/// start; `phases[k]` and (for unrolled layers) `params[k]` describe the step
/// that produced `iterates[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryTrace {
    pub iterates: Vec<DVector<f64>>,
    pub params: Vec<LayerParams>,
    pub phases: Vec<Phase>,
    /// Index of the iterate CG started from, if it ran.
    pub cg_switch_layer: Option<usize>,
    pub warnings: Vec<TraceWarning>,
}

#[derive(Serialize)]
struct TraceJson<'a> {
    layers: usize,
    cg_switch_layer: Option<usize>,
    params: &'a [LayerParams],
    phases: &'a [Phase],
    warnings: &'a [TraceWarning],
    nmse_db: Vec<f64>,
}

impl RecoveryTrace {
    pub(crate) fn start(n: usize) -> Self {
        RecoveryTrace {
            iterates: vec![DVector::zeros(n)],
            params: Vec::new(),
            phases: Vec::new(),
            cg_switch_layer: None,
            warnings: Vec::new(),
        }
    }

    /// Number of executed steps (unrolled layers plus CG iterations).
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn final_iterate(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace always holds x0")
    }

    /// Per-iterate NMSE in dB against `x_star`.
    pub fn nmse_curve(&self, x_star: &DVector<f64>) -> Vec<f64> {
        self.iterates.iter().map(|x| nmse_db(x, x_star).unwrap_or(f64::NAN)).collect()
    }

    /// CSV with columns `layer,nmse_db,theta,gamma,beta,p,phase`; parameter
    /// fields are blank for layer 0 and for CG iterations.
    pub fn write_csv<W: Write>(&self, mut out: W, x_star: &DVector<f64>) -> std::io::Result<()> {
        writeln!(out, "layer,nmse_db,theta,gamma,beta,p,phase")?;
        let curve = self.nmse_curve(x_star);
        writeln!(out, "0,{},,,,,start", curve[0])?;
        for (k, phase) in self.phases.iter().enumerate() {
            let layer = k + 1;
            match phase {
                Phase::Unrolled => {
                    let p = &self.params[k];
                    writeln!(out, "{layer},{},{},{},{},{},unrolled", curve[layer], p.theta, p.gamma, p.beta, p.p)?;
                }
                Phase::Cg => writeln!(out, "{layer},{},,,,,cg", curve[layer])?,
            }
        }
        Ok(())
    }

    pub fn to_json(&self, x_star: &DVector<f64>) -> serde_json::Value {
        serde_json::to_value(TraceJson {
            layers: self.steps(),
            cg_switch_layer: self.cg_switch_layer,
            params: &self.params,
            phases: &self.phases,
            warnings: &self.warnings,
            nmse_db: self.nmse_curve(x_star),
        })
        .expect("trace serialises")
    }
}
