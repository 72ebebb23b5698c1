//! Exponential decay fits: A·e^(−k·t) (+ B), and the two-regime hole decay.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOutcome};
use super::{param, split_series, FitResult};
use crate::error::{Error, Result};

/// Above this condition number of JᵀJ the two-rate models are not resolvable.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Rates closer than this (relative) are treated as a single regime.
pub const RATE_SEPARATION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayModel {
    /// Echo amplitude, e^(−2τ/T₂).
    #[serde(rename = "amp_2pe")]
    Amp2pe,
    /// Echo intensity, e^(−4τ/T₂).
    #[serde(rename = "int_2pe")]
    Int2pe,
    /// Stimulated echo vs waiting time, e^(−T/T₁).
    #[serde(rename = "pop_3pe")]
    Pop3pe,
    /// Spectral hole, e^(−T_w/T_h).
    #[serde(rename = "hole")]
    Hole,
}

impl DecayModel {
    pub const ALL: [DecayModel; 4] = [DecayModel::Amp2pe, DecayModel::Int2pe, DecayModel::Pop3pe, DecayModel::Hole];

    /// Physical constant = factor / k.
    pub fn rate_factor(self) -> f64 {
        match self {
            DecayModel::Amp2pe => 2.0,
            DecayModel::Int2pe => 4.0,
            DecayModel::Pop3pe | DecayModel::Hole => 1.0,
        }
    }

    pub fn constant_name(self) -> &'static str {
        match self {
            DecayModel::Amp2pe | DecayModel::Int2pe => "T2",
            DecayModel::Pop3pe => "T1",
            DecayModel::Hole => "T_h",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecayModel::Amp2pe => "amp_2pe",
            DecayModel::Int2pe => "int_2pe",
            DecayModel::Pop3pe => "pop_3pe",
            DecayModel::Hole => "hole",
        }
    }
}

impl fmt::Display for DecayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecayModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecayModel::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown decay model `{s}` (expected amp_2pe, int_2pe, pop_3pe or hole)")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecayOptions {
    /// Fit an additive floor B.
    pub floor: bool,
    /// Starting (A, k); log-linear regression otherwise.
    pub init: Option<(f64, f64)>,
}

/// Least-squares line through (x, ln y) over the positive samples: (A, k).
fn log_linear(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(((my - slope * mx).exp(), -slope))
}

fn exp_model(x: f64, p: &[f64], g: &mut [f64]) -> f64 {
    let e = (-p[1] * x).exp();
    g[0] = e;
    g[1] = -p[0] * x * e;
    if p.len() > 2 {
        g[2] = 1.0;
        p[0] * e + p[2]
    } else {
        p[0] * e
    }
}

fn std_errors(out: &LmOutcome) -> Option<Vec<f64>> {
    out.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
}

pub fn fit_decay(series: &[(f64, f64)], model: DecayModel, opts: &DecayOptions) -> Result<FitResult> {
    const OP: &str = "fit_decay";
    if series.len() < 4 {
        return Err(Error::pre(OP, format!("need at least 4 points, got {}", series.len())));
    }
    let (xs, ys) = split_series(OP, series)?;
    if xs.iter().any(|&x| x < 0.0) {
        return Err(Error::pre(OP, "delays must be non-negative"));
    }
    if ys.iter().all(|&y| y == 0.0) {
        return Err(Error::pre(OP, "signal is identically zero"));
    }
    let span = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
    let (a0, k0) = match opts.init.or_else(|| log_linear(&xs, &ys)) {
        Some((a, k)) if k > 0.0 && a.is_finite() => (a, k),
        Some((a, _)) => (a, 1.0 / span.max(f64::MIN_POSITIVE)),
        None => return Err(Error::Fit("fewer than two positive samples for initialisation".into())),
    };
    let p0: Vec<f64> = if opts.floor { vec![a0, k0, 0.0] } else { vec![a0, k0] };
    let out = levenberg_marquardt(&xs, &ys, &p0, &exp_model);
    Ok(decay_result(model, &out))
}

fn decay_result(model: DecayModel, out: &LmOutcome) -> FitResult {
    let (a, k) = (out.params[0], out.params[1]);
    let c = model.rate_factor();
    let mut parameters = vec![
        param("amplitude", a, "arb"),
        param("rate", k, "1/s"),
        param(model.constant_name(), c / k, "s"),
    ];
    if out.params.len() > 2 {
        parameters.push(param("floor", out.params[2], "arb"));
    }
    let standard_errors = std_errors(out).map(|e| {
        let mut v = vec![e[0], e[1], c * e[1] / (k * k)];
        v.extend(e.iter().skip(2));
        v
    });
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("condition_number".into(), out.condition);
    FitResult {
        model_name: model.name().into(),
        parameters,
        standard_errors,
        residual_norm: out.ssr.sqrt(),
        converged: out.converged,
        n_iterations: out.iterations,
        diagnostics,
        flags: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleFitMode {
    /// Sequential regimes joined continuously at a breakpoint.
    #[default]
    Piecewise,
    /// A₁e^(−t/T_fast) + A₂e^(−t/T_slow).
    Sum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HoleFitOptions {
    pub mode: HoleFitMode,
    /// Fixed breakpoint (piecewise mode); fitted when absent.
    pub breakpoint: Option<f64>,
}

/// p = [A, k1, k2, tb]
fn piecewise_model(x: f64, p: &[f64], g: &mut [f64]) -> f64 {
    let (a, k1, k2, tb) = (p[0], p[1], p[2], p[3]);
    if x < tb {
        let e = (-k1 * x).exp();
        g[0] = e;
        g[1] = -x * a * e;
        g[2] = 0.0;
        g[3] = 0.0;
        a * e
    } else {
        let e = (-k1 * tb - k2 * (x - tb)).exp();
        g[0] = e;
        g[1] = -tb * a * e;
        g[2] = -(x - tb) * a * e;
        g[3] = (k2 - k1) * a * e;
        a * e
    }
}

fn sum_model(x: f64, p: &[f64], g: &mut [f64]) -> f64 {
    let e1 = (-p[1] * x).exp();
    let e2 = (-p[3] * x).exp();
    g[0] = e1;
    g[1] = -p[0] * x * e1;
    g[2] = e2;
    g[3] = -p[2] * x * e2;
    p[0] * e1 + p[2] * e2
}

fn fit_piecewise_fixed(xs: &[f64], ys: &[f64], tb: f64) -> Option<LmOutcome> {
    let split = xs.partition_point(|&x| x < tb);
    let (a, k1) = log_linear(&xs[..split], &ys[..split])?;
    let (_, k2) = log_linear(&xs[split..], &ys[split..])?;
    let model = move |x: f64, p: &[f64], g: &mut [f64]| {
        let mut full = [0.0; 4];
        let v = piecewise_model(x, &[p[0], p[1], p[2], tb], &mut full);
        g.copy_from_slice(&full[..3]);
        v
    };
    Some(levenberg_marquardt(xs, ys, &[a, k1.max(1e-300), k2.max(1e-300)], &model))
}

pub fn fit_two_stage_hole(series: &[(f64, f64)], opts: &HoleFitOptions) -> Result<FitResult> {
    const OP: &str = "fit_two_stage_hole";
    if series.len() < 8 {
        return Err(Error::pre(OP, format!("need at least 8 points, got {}", series.len())));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys) = split_series(OP, &sorted)?;
    if xs[0] < 0.0 {
        return Err(Error::pre(OP, "waiting times must be non-negative"));
    }

    let two_rate = match opts.mode {
        HoleFitMode::Piecewise => piecewise_fit(&xs, &ys, opts.breakpoint),
        HoleFitMode::Sum => sum_fit(&xs, &ys),
    };
    if let Some(result) = two_rate {
        return Ok(result);
    }
    let mut single = fit_decay(&sorted, DecayModel::Hole, &DecayOptions::default())?;
    single.model_name = "hole_two_stage".into();
    single.flags.push("single_exponential_fallback".into());
    Ok(single)
}

fn resolvable(out: &LmOutcome, k1: f64, k2: f64) -> bool {
    out.condition < CONDITION_LIMIT && k1 > 0.0 && k2 > 0.0 && (k1 - k2).abs() / k1.max(k2) >= RATE_SEPARATION
}

fn piecewise_fit(xs: &[f64], ys: &[f64], fixed: Option<f64>) -> Option<FitResult> {
    let m = xs.len();
    let out = match fixed {
        Some(tb) => {
            let o = fit_piecewise_fixed(xs, ys, tb)?;
            let mut params = o.params.clone();
            params.push(tb);
            LmOutcome { params, ..o }
        }
        None => {
            // Coarse scan of breakpoints between samples (≥3 samples per
            // regime), then a joint refinement including the breakpoint.
            let mut best: Option<(f64, LmOutcome)> = None;
            for i in 3..=m - 3 {
                let tb = 0.5 * (xs[i - 1] + xs[i]);
                if let Some(o) = fit_piecewise_fixed(xs, ys, tb) {
                    if best.as_ref().is_none_or(|b| o.ssr < b.1.ssr) {
                        best = Some((tb, o));
                    }
                }
            }
            let (tb, coarse) = best?;
            let p0 = [coarse.params[0], coarse.params[1], coarse.params[2], tb];
            let refined = levenberg_marquardt(xs, ys, &p0, &piecewise_model);
            if refined.ssr <= coarse.ssr && refined.converged {
                refined
            } else {
                let mut params = coarse.params.clone();
                params.push(tb);
                LmOutcome { params, ..coarse }
            }
        }
    };
    let (a, k1, k2, tb) = (out.params[0], out.params[1], out.params[2], out.params[3]);
    if !resolvable(&out, k1, k2) {
        return None;
    }
    let se = std_errors(&out);
    // Order so that the fast constant comes first.
    let (kf, ks, if_, is_) = if k1 >= k2 { (k1, k2, 1, 2) } else { (k2, k1, 2, 1) };
    let parameters = vec![
        param("amplitude", a, "arb"),
        param("T_h_fast", 1.0 / kf, "s"),
        param("T_h_slow", 1.0 / ks, "s"),
        param("breakpoint", tb, "s"),
    ];
    let standard_errors = se.map(|e| {
        let tb_err = e.get(3).copied().unwrap_or(0.0);
        vec![e[0], e[if_] / (kf * kf), e[is_] / (ks * ks), tb_err]
    });
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("condition_number".into(), out.condition);
    Some(FitResult {
        model_name: "hole_two_stage_piecewise".into(),
        parameters,
        standard_errors,
        residual_norm: out.ssr.sqrt(),
        converged: out.converged,
        n_iterations: out.iterations,
        diagnostics,
        flags: Vec::new(),
    })
}

fn sum_fit(xs: &[f64], ys: &[f64]) -> Option<FitResult> {
    let m = xs.len();
    let half = m / 2;
    let (a2, k2) = log_linear(&xs[half..], &ys[half..])?;
    let early: Vec<f64> = xs[..half].iter().zip(&ys[..half]).map(|(&x, &y)| y - a2 * (-k2 * x).exp()).collect();
    let (a1, k1) = match log_linear(&xs[..half], &early) {
        Some((a, k)) if k > k2 && a > 0.0 => (a, k),
        _ => ((ys[0] - a2).abs().max(1e-3 * ys[0].abs()), 3.0 * k2.max(1e-300)),
    };
    let out = levenberg_marquardt(xs, ys, &[a1, k1, a2, k2.max(1e-300)], &sum_model);
    let p = &out.params;
    if !resolvable(&out, p[1], p[3]) || p[0] <= 0.0 || p[2] <= 0.0 {
        return None;
    }
    let se = std_errors(&out);
    let (fast, slow) = if p[1] >= p[3] { (0, 2) } else { (2, 0) };
    let parameters = vec![
        param("amplitude_fast", p[fast], "arb"),
        param("T_h_fast", 1.0 / p[fast + 1], "s"),
        param("amplitude_slow", p[slow], "arb"),
        param("T_h_slow", 1.0 / p[slow + 1], "s"),
    ];
    let standard_errors = se.map(|e| {
        vec![
            e[fast],
            e[fast + 1] / p[fast + 1].powi(2),
            e[slow],
            e[slow + 1] / p[slow + 1].powi(2),
        ]
    });
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("condition_number".into(), out.condition);
    Some(FitResult {
        model_name: "hole_two_stage_sum".into(),
        parameters,
        standard_errors,
        residual_norm: out.ssr.sqrt(),
        converged: out.converged,
        n_iterations: out.iterations,
        diagnostics,
        flags: Vec::new(),
    })
}
