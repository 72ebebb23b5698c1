//! Least-squares reduction of traces to physical constants.

mod decay;
pub(crate) mod lm;
mod pulse;

pub use decay::{fit_decay, fit_two_stage_hole, DecayModel, DecayOptions, HoleFitMode, HoleFitOptions};
pub use pulse::{fit_heating_quadratic, fit_pi_pulse};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_name: String,
    pub parameters: Vec<FitParameter>,
    /// Same order as `parameters`; `None` unless the fit converged.
    pub standard_errors: Option<Vec<f64>>,
    pub residual_norm: f64,
    pub converged: bool,
    pub n_iterations: usize,
    /// Derived quantities that are not fit parameters (R², raw argmax, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let i = self.parameters.iter().position(|p| p.name == name)?;
        self.standard_errors.as_ref().map(|e| e[i])
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

pub(crate) fn param(name: &str, value: f64, unit: &str) -> FitParameter {
    FitParameter { name: name.into(), value, unit: unit.into() }
}

/// Splits (x, y) pairs after checking they are finite.
pub(crate) fn split_series(op: &'static str, series: &[(f64, f64)]) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    if series.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(crate::Error::pre(op, "series contains non-finite values"));
    }
    Ok(series.iter().copied().unzip())
}
