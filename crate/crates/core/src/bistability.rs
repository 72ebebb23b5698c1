//! Steady-state Maxwell–Bloch transmission of a driven cavity holding a
//! saturable two-level ensemble, with branch continuation across sweeps.
//!
//! Fields are normalized so that the saturation scale is 2|x|² = 1.
//! Detunings passed to sweeps are ω_l − ω_c in rad/s.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cqed::{CouplingEstimate, CouplingMethod};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, map_slice, Execution};
use crate::fitkit::lm::levenberg_marquardt_residuals;
use crate::fitkit::{FitParameter, FitResult};
use crate::model::{AngularRate, SweepDirection, SweepTrace};
use crate::roots::brent;

/// Atomic line offset above the cavity, in units of κ, when none is given.
pub const DEFAULT_ATOM_OFFSET_KAPPA: f64 = 0.5;

/// Cooperativity above which the resonant χ model can turn bistable.
pub const ABSORPTIVE_THRESHOLD: f64 = 8.0;

/// Default input-power ladder, W.
pub const DEFAULT_POWER_LADDER: [f64; 6] = [800e-6, 400e-6, 200e-6, 100e-6, 80e-6, 40e-6];

/// Normalized drive |y|² per watt of input power.
pub const DEFAULT_INTENSITY_PER_WATT: f64 = 2.5e8;

const BASE_GRID: usize = 128;
const MAX_GRID: usize = 1 << 16;
const ROOT_RTOL: f64 = 1e-10;
/// A change of |ln u| larger than this between samples counts as a jump.
const JUMP_LOG: f64 = 0.5;
/// Half-width of the dense patch around ω_a, in saturated linewidths.
const ATOM_PATCH_WIDTHS: f64 = 3.0;
/// Smallest refined step, as a fraction of the sweep span.
pub const MIN_STEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BistabilityParams {
    pub g: AngularRate,
    pub n_atoms: f64,
    pub kappa: AngularRate,
    pub gamma_h: AngularRate,
    pub gamma: AngularRate,
    /// Cavity resonance, on any common offset shared with `omega_a`.
    pub omega_c: AngularRate,
    pub omega_a: AngularRate,
    pub coupling: f64,
    pub external_loss: f64,
}

impl BistabilityParams {
    /// The fit parameters reported for the 0.05 % sample, with ω_c = 0
    /// and ω_a = +0.5κ.
    pub fn pr_yso() -> Self {
        let kappa = AngularRate::from_hz(123e6);
        BistabilityParams {
            g: AngularRate::from_hz(2.2e3),
            n_atoms: 1.6e8,
            kappa,
            gamma_h: AngularRate::from_hz(7.58e3),
            gamma: AngularRate::from_hz(2.34e3),
            omega_c: AngularRate::ZERO,
            omega_a: AngularRate(DEFAULT_ATOM_OFFSET_KAPPA * kappa.0),
            coupling: 0.287,
            external_loss: 0.2,
        }
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = AngularRate(g);
        self
    }

    pub fn with_atoms(mut self, n: f64) -> Self {
        self.n_atoms = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g", self.g.0), ("kappa", self.kappa.0), ("gamma_h", self.gamma_h.0), ("gamma", self.gamma.0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("bistability.{name}"), format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.n_atoms >= 0.0 && self.n_atoms.is_finite()) {
            return Err(Error::invalid("bistability.n_atoms", format!("must be ≥ 0, got {}", self.n_atoms)));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::invalid("bistability.coupling", format!("must lie in [0, 1], got {}", self.coupling)));
        }
        if !(0.0..1.0).contains(&self.external_loss) {
            return Err(Error::invalid(
                "bistability.external_loss",
                format!("must lie in [0, 1), got {}", self.external_loss),
            ));
        }
        if !(self.omega_c.0.is_finite() && self.omega_a.0.is_finite()) {
            return Err(Error::invalid("bistability.omega_a", "resonance frequencies must be finite"));
        }
        Ok(())
    }

    /// C = g²N/(κγ_h).
    pub fn cooperativity(&self) -> f64 {
        self.g.0 * self.g.0 * self.n_atoms / (self.kappa.0 * self.gamma_h.0)
    }

    fn bracket(&self, u: f64, omega_l: f64) -> Complex64 {
        let c = self.cooperativity();
        let delta_al = self.omega_a.0 - omega_l;
        let chi = susceptibility(u, delta_al, self.gamma_h.0);
        let re = 1.0 + c * chi;
        let im = (self.omega_c.0 - omega_l) / self.kappa.0 - c * delta_al / self.gamma_h.0 * chi;
        Complex64::new(re, im)
    }

    /// |bracket|², the ratio |y|²/|x|² at output intensity `u`.
    fn gain(&self, u: f64, omega_l: f64) -> f64 {
        self.bracket(u, omega_l).norm_sqr()
    }
}

/// χ = ln(1 + 2u/(1 + Δ²/γ_h²))/(2u), with the u → 0 limit 1/(1 + Δ²/γ_h²).
pub fn susceptibility(u: f64, delta_al: f64, gamma_h: f64) -> f64 {
    let r = delta_al / gamma_h;
    let s = 1.0 / (1.0 + r * r);
    let z = 2.0 * u * s;
    if z < 1e-12 {
        s * (1.0 - 0.5 * z)
    } else {
        s * z.ln_1p() / z
    }
}

/// Input field y that sustains output field `x` at laser frequency `omega_l`.
pub fn steady_state_input(x: Complex64, params: &BistabilityParams, omega_l: AngularRate) -> Complex64 {
    x * params.bracket(x.norm_sqr(), omega_l.0)
}

/// Steady-state output intensities for one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRoots {
    /// All roots u = |x|², ascending.
    pub roots: Vec<f64>,
    /// Index of the root nearest the branch hint, if one was given.
    pub followed: Option<usize>,
    /// Per-root stability: d(|y|²)/du > 0.
    pub stable: Vec<bool>,
}

impl OutputRoots {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

fn log_distance(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if a <= 0.0 || b <= 0.0 {
        f64::INFINITY
    } else {
        (a / b).ln().abs()
    }
}

/// All u ≥ 0 with |y|² = u·M(u) at laser frequency `omega_l`.
pub fn solve_output(
    drive: f64,
    omega_l: AngularRate,
    params: &BistabilityParams,
    branch_hint: Option<f64>,
) -> Result<OutputRoots> {
    if !(drive >= 0.0 && drive.is_finite()) {
        return Err(Error::pre("solve_output", format!("drive |y|² must be finite and ≥ 0, got {drive}")));
    }
    let wl = omega_l.0;
    let roots = if drive == 0.0 {
        vec![0.0]
    } else if params.n_atoms == 0.0 {
        vec![drive / params.gain(0.0, wl)]
    } else {
        bracket_roots(drive, wl, params)?
    };
    let f = |u: f64| u * params.gain(u, wl);
    let stable = roots
        .iter()
        .map(|&u| {
            if u == 0.0 {
                return true;
            }
            let h = 1e-6 * u;
            f(u + h) > f(u - h)
        })
        .collect();
    let followed = branch_hint.map(|hint| {
        (0..roots.len())
            .min_by(|&i, &j| log_distance(roots[i], hint).total_cmp(&log_distance(roots[j], hint)))
            .unwrap_or(0)
    });
    Ok(OutputRoots { roots, followed, stable })
}

fn bracket_roots(drive: f64, wl: f64, params: &BistabilityParams) -> Result<Vec<f64>> {
    // M is a convex quadratic in χ ∈ [0, χ(0)], so its maximum sits at an
    // end, and Re ≥ 1 gives M ≥ 1: every root lies in [drive/M_max, drive].
    let m_sat = 1.0 + ((params.omega_c.0 - wl) / params.kappa.0).powi(2);
    let m_lin = params.gain(0.0, wl);
    let lo = drive / m_sat.max(m_lin) * (1.0 - 1e-9);
    let hi = drive * (1.0 + 1e-9);
    if lo >= hi * (1.0 - 1e-15) {
        let u = brent(|u| u * params.gain(u, wl) - drive, lo * 0.5, hi * 2.0, ROOT_RTOL * hi, 200)?;
        return Ok(vec![u]);
    }
    let f = |u: f64| u * params.gain(u, wl) - drive;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());

    let mut k = BASE_GRID;
    let mut previous: Option<Vec<(f64, f64)>> = None;
    loop {
        let step = (ln_hi - ln_lo) / k as f64;
        let mut brackets = Vec::new();
        let mut u0 = lo;
        let mut f0 = f(u0);
        for i in 1..=k {
            let u1 = if i == k { hi } else { (ln_lo + i as f64 * step).exp() };
            let f1 = f(u1);
            if f0 == 0.0 {
                brackets.push((u0, u0));
            } else if f0.signum() != f1.signum() && f1 != 0.0 {
                brackets.push((u0, u1));
            }
            if i == k && f1 == 0.0 {
                brackets.push((u1, u1));
            }
            u0 = u1;
            f0 = f1;
        }
        if !brackets.is_empty() && previous.as_ref().is_some_and(|p| p.len() == brackets.len()) {
            return brackets
                .into_iter()
                .map(|(a, b)| if a == b { Ok(a) } else { brent(f, a, b, ROOT_RTOL * a, 200) })
                .collect();
        }
        if k >= MAX_GRID {
            return Err(Error::GridRefinement(format!(
                "root count still changing at {k} grid points (drive {drive:e}, ω_l {wl:e})"
            )));
        }
        previous = Some(brackets);
        k *= 2;
    }
}

/// Transmission past the coupler when the cavity output is `u` for drive `drive`.
pub fn transmission(params: &BistabilityParams, u: f64, drive: f64, omega_l: f64) -> f64 {
    let ratio = if drive > 0.0 { u / drive } else { 1.0 / params.gain(0.0, omega_l) };
    (1.0 - params.external_loss) * (1.0 - params.coupling * ratio.clamp(0.0, 1.0))
}

/// Transmission in the weak-drive limit, where χ takes its u = 0 value.
pub fn linear_transmission(params: &BistabilityParams, omega_l: f64) -> f64 {
    (1.0 - params.external_loss) * (1.0 - params.coupling / params.gain(0.0, omega_l))
}

/// Maps optical input power to the normalized drive |y|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    pub intensity_per_watt: f64,
}

impl Default for PowerCalibration {
    fn default() -> Self {
        PowerCalibration { intensity_per_watt: DEFAULT_INTENSITY_PER_WATT }
    }
}

impl PowerCalibration {
    pub fn drive(&self, power: f64) -> f64 {
        power * self.intensity_per_watt
    }
}

/// Detuning range ω_l − ω_c for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpan {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl SweepSpan {
    /// ±1 GHz in 801 steps.
    pub fn standard() -> Self {
        SweepSpan { start: -2.0 * PI * 1e9, stop: 2.0 * PI * 1e9, points: 801 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.stop > self.start) {
            return Err(Error::pre("sweep", "span must be finite with stop > start"));
        }
        if self.points < 2 {
            return Err(Error::pre("sweep", "span needs at least two points"));
        }
        Ok(())
    }

    /// Uniform grid plus a dense patch of `points` samples over ±`half_width`
    /// around `center`, clipped to the span.
    fn grid(&self, direction: SweepDirection, center: f64, half_width: f64) -> Vec<f64> {
        let n = self.points;
        let step = (self.stop - self.start) / (n - 1) as f64;
        let mut v: Vec<f64> = (0..n).map(|i| if i == n - 1 { self.stop } else { self.start + i as f64 * step }).collect();
        let (a, b) = ((center - half_width).max(self.start), (center + half_width).min(self.stop));
        if b > a {
            v.extend((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64));
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if direction == SweepDirection::Reverse {
            v.reverse();
        }
        v
    }
}

/// Picks the stable root nearest the previous one, or the lowest on the first step.
fn continue_branch(roots: &OutputRoots, previous: Option<f64>) -> f64 {
    let candidates: Vec<f64> = roots
        .roots
        .iter()
        .zip(&roots.stable)
        .filter(|(_, &s)| s)
        .map(|(&u, _)| u)
        .collect();
    let pool = if candidates.is_empty() { &roots.roots } else { &candidates };
    match previous {
        None => pool[0],
        Some(p) => *pool.iter().min_by(|a, b| log_distance(**a, p).total_cmp(&log_distance(**b, p))).unwrap(),
    }
}

struct Sample {
    detuning: f64,
    u: f64,
    count: usize,
}

fn sample(params: &BistabilityParams, drive: f64, detuning: f64, previous: Option<f64>) -> Result<Sample> {
    let wl = params.omega_c.0 + detuning;
    let roots = solve_output(drive, AngularRate(wl), params, previous)?;
    let u = continue_branch(&roots, previous);
    Ok(Sample { detuning, u, count: roots.len() })
}

fn into_trace(params: &BistabilityParams, drive: f64, direction: SweepDirection, samples: Vec<Sample>) -> Result<SweepTrace> {
    let mut xs = Vec::with_capacity(samples.len());
    let mut ts = Vec::with_capacity(samples.len());
    let mut bc = Vec::with_capacity(samples.len());
    for s in samples {
        ts.push(transmission(params, s.u, drive, params.omega_c.0 + s.detuning));
        xs.push(s.detuning);
        bc.push(s.count.min(u8::MAX as usize) as u8);
    }
    SweepTrace::new(xs, ts, direction, bc)
}

/// Sweeps the laser across `span` at fixed drive, following one branch.
///
/// The step is halved wherever the followed root jumps or the root count
/// changes, down to [`MIN_STEP_FRACTION`] of the span.
pub fn sweep(params: &BistabilityParams, drive: f64, span: &SweepSpan, direction: SweepDirection) -> Result<SweepTrace> {
    params.validate()?;
    span.validate()?;
    let min_step = MIN_STEP_FRACTION * (span.stop - span.start);
    // The atomic feature is as wide as the power-broadened line.
    let half_width = ATOM_PATCH_WIDTHS * params.gamma_h.0 * (1.0 + 2.0 * drive).sqrt();
    let mut pending = span.grid(direction, params.omega_a.0 - params.omega_c.0, half_width);
    pending.reverse();
    let mut samples: Vec<Sample> = Vec::with_capacity(span.points * 2);
    while let Some(x) = pending.pop() {
        let previous = samples.last();
        let s = sample(params, drive, x, previous.map(|p| p.u))?;
        if let Some(p) = previous {
            let abrupt = log_distance(s.u, p.u) > JUMP_LOG || s.count != p.count;
            if abrupt && (x - p.detuning).abs() > min_step {
                pending.push(x);
                pending.push(0.5 * (x + p.detuning));
                continue;
            }
        }
        samples.push(s);
    }
    into_trace(params, drive, direction, samples)
}

/// Branch-following sweep over a prescribed detuning grid, without refinement.
pub fn sweep_on_grid(params: &BistabilityParams, drive: f64, detunings: &[f64]) -> Result<SweepTrace> {
    params.validate()?;
    let direction = match detunings {
        [a, b, ..] if b < a => SweepDirection::Reverse,
        _ => SweepDirection::Forward,
    };
    let mut samples: Vec<Sample> = Vec::with_capacity(detunings.len());
    for &x in detunings {
        let s = sample(params, drive, x, samples.last().map(|p| p.u))?;
        samples.push(s);
    }
    into_trace(params, drive, direction, samples)
}

/// Total detuning extent over which two traces differ by more than `tol`.
pub fn hysteresis_width(a: &SweepTrace, b: &SweepTrace, tol: f64) -> f64 {
    let mut xs: Vec<f64> = a.laser_detunings.iter().chain(&b.laser_detunings).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let differs: Vec<bool> = xs.iter().map(|&x| (a.transmission_at(x) - b.transmission_at(x)).abs() > tol).collect();
    xs.windows(2)
        .zip(differs.windows(2))
        .filter(|(_, d)| d[0] && d[1])
        .fold(0.0, |acc, (w, _)| acc + (w[1] - w[0]))
}

/// Range of drives (from a log grid on `[lo, hi]`) at which three roots exist.
pub fn three_root_window(
    params: &BistabilityParams,
    omega_l: AngularRate,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Option<(f64, f64)>> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(Error::pre("three_root_window", "need 0 < lo < hi and at least two points"));
    }
    let mut window: Option<(f64, f64)> = None;
    for i in 0..points {
        let y = lo * (hi / lo).powf(i as f64 / (points - 1) as f64);
        if solve_output(y, omega_l, params, None)?.len() >= 3 {
            window = Some(window.map_or((y, y), |(a, _)| (a, y)));
        }
    }
    Ok(window)
}

/// Forward and reverse sweeps at one input power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSweep {
    pub power: f64,
    pub drive: f64,
    pub forward: SweepTrace,
    pub reverse: SweepTrace,
}

impl PowerSweep {
    pub fn hysteresis_width(&self, tol: f64) -> f64 {
        hysteresis_width(&self.forward, &self.reverse, tol)
    }
}

/// Forward/reverse sweep pairs across a list of powers; each sweep is an
/// independent task.
pub fn power_ladder(
    params: &BistabilityParams,
    powers: &[f64],
    calibration: &PowerCalibration,
    span: &SweepSpan,
    exec: Execution,
) -> Result<Vec<PowerSweep>> {
    let traces = map_indexed(exec, powers.len() * 2, |k| {
        let drive = calibration.drive(powers[k / 2]);
        let dir = if k % 2 == 0 { SweepDirection::Forward } else { SweepDirection::Reverse };
        sweep(params, drive, span, dir)
    });
    let mut it = traces.into_iter();
    powers
        .iter()
        .map(|&power| {
            let forward = it.next().unwrap()?;
            let reverse = it.next().unwrap()?;
            Ok(PowerSweep { power, drive: calibration.drive(power), forward, reverse })
        })
        .collect()
}

/// A measured or simulated sweep together with the drive it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenTrace {
    pub drive: f64,
    pub trace: SweepTrace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistabilityFitOptions {
    /// Pre-scan covers g₀·[1 − width, 1 + width].
    pub scan_width: f64,
    pub scan_points: usize,
    pub exec: Execution,
}

impl Default for BistabilityFitOptions {
    fn default() -> Self {
        BistabilityFitOptions { scan_width: 0.5, scan_points: 41, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BistabilityFit {
    pub estimate: CouplingEstimate,
    pub fit: FitResult,
}

/// Model minus data, concatenated over traces.
pub fn bistability_residuals(data: &[DrivenTrace], params: &BistabilityParams) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for d in data {
        let model = sweep_on_grid(params, d.drive, &d.trace.laser_detunings)?;
        out.extend(d.trace.transmission.iter().zip(&model.transmission).map(|(y, m)| y - m));
    }
    Ok(out)
}

/// Least-squares estimate of g from sweep data with every other parameter
/// held at the values in `params`; `params.g` seeds the search.
pub fn fit_bistability(data: &[DrivenTrace], params: &BistabilityParams, opts: &BistabilityFitOptions) -> Result<BistabilityFit> {
    const OP: &str = "fit_bistability";
    if data.is_empty() {
        return Err(Error::pre(OP, "need at least one trace"));
    }
    if !(opts.scan_width > 0.0 && opts.scan_width < 1.0) || opts.scan_points < 3 {
        return Err(Error::pre(OP, "scan width must lie in (0, 1) with at least three points"));
    }
    params.validate()?;
    let g0 = params.g.0;
    let ssr_at = |scale: f64| -> Result<f64> {
        Ok(bistability_residuals(data, &params.with_g(g0 * scale))?.iter().map(|r| r * r).sum())
    };

    let n = opts.scan_points;
    let scales: Vec<f64> = (0..n).map(|i| 1.0 - opts.scan_width + 2.0 * opts.scan_width * i as f64 / (n - 1) as f64).collect();
    let scan = map_slice(opts.exec, &scales, |&s| ssr_at(s));
    let mut best = (scales[0], f64::INFINITY);
    for (s, r) in scales.iter().zip(scan) {
        let r = r?;
        if r < best.1 {
            best = (*s, r);
        }
    }

    let residuals = |p: &[f64]| {
        bistability_residuals(data, &params.with_g(g0 * p[0]))
            .unwrap_or_else(|_| vec![f64::NAN; data.iter().map(|d| d.trace.len()).sum()])
    };
    let lm = levenberg_marquardt_residuals(&[best.0], 1e-5, &residuals);
    let (scale, ssr, converged) = if lm.ssr.is_finite() && lm.ssr <= best.1 {
        (lm.params[0], lm.ssr, lm.converged)
    } else {
        (best.0, best.1, false)
    };
    let g = g0 * scale;
    let mut flags = Vec::new();
    if !converged {
        flags.push("not_converged".to_string());
    }
    let standard_errors = lm.covariance.as_ref().filter(|_| converged).map(|c| vec![g0 * c[(0, 0)].max(0.0).sqrt()]);
    let n_samples: usize = data.iter().map(|d| d.trace.len()).sum();
    let diagnostics = BTreeMap::from([
        ("ssr".to_string(), ssr),
        ("scan_best_g".to_string(), g0 * best.0),
        ("scan_best_ssr".to_string(), best.1),
        ("n_samples".to_string(), n_samples as f64),
        ("condition_number".to_string(), lm.condition),
    ]);
    let fit = FitResult {
        model_name: "bistability".to_string(),
        parameters: vec![FitParameter { name: "g".to_string(), value: g, unit: "rad/s".to_string() }],
        standard_errors,
        residual_norm: ssr.sqrt(),
        converged,
        n_iterations: lm.iterations,
        diagnostics,
        flags,
    };
    let inputs = BTreeMap::from([
        ("n_atoms".to_string(), params.n_atoms),
        ("kappa".to_string(), params.kappa.0),
        ("gamma_h".to_string(), params.gamma_h.0),
        ("gamma".to_string(), params.gamma.0),
        ("omega_a_minus_omega_c".to_string(), params.omega_a.0 - params.omega_c.0),
        ("coupling".to_string(), params.coupling),
        ("external_loss".to_string(), params.external_loss),
        ("g_initial".to_string(), g0),
        ("n_traces".to_string(), data.len() as f64),
    ]);
    let estimate = CouplingEstimate { g: AngularRate(g), method: CouplingMethod::BistabilityFit, inputs };
    Ok(BistabilityFit { estimate, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(points: usize) -> SweepSpan {
        SweepSpan { points, ..SweepSpan::standard() }
    }

    #[test]
    fn susceptibility_examples() {
        assert_eq!(susceptibility(0.0, 0.0, 1.0), 1.0);
        assert!((susceptibility(0.0, 2.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((susceptibility(0.5, 0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        // Series 1 − z/2 + z²/3 straddling the small-argument switch.
        for &u in &[1e-13, 1e-11, 1e-7] {
            let z: f64 = 2.0 * u;
            let series = 1.0 - z / 2.0 + z * z / 3.0;
            assert!((susceptibility(u, 0.0, 1.0) - series).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_resonant_cavity_passes_field() {
        let p = BistabilityParams::pr_yso().with_atoms(0.0);
        let x = Complex64::new(0.3, -0.7);
        assert_eq!(steady_state_input(x, &p, p.omega_c), x);
    }

    #[test]
    fn empty_cavity_roots_are_closed_form() {
        let p = BistabilityParams::pr_yso().with_atoms(0.0);
        for k in [-3.0, -0.5, 0.0, 1.2] {
            let wl = p.omega_c.0 + k * p.kappa.0;
            let r = solve_output(7.5, AngularRate(wl), &p, None).unwrap();
            assert_eq!(r.roots.len(), 1);
            assert!((r.roots[0] - 7.5 / (1.0 + k * k)).abs() < 1e-14 * 7.5);
        }
        let r = solve_output(0.0, p.omega_a, &BistabilityParams::pr_yso(), Some(1.0)).unwrap();
        assert_eq!(r.roots, vec![0.0]);
        assert_eq!(r.followed, Some(0));
    }

    #[test]
    fn roots_satisfy_the_steady_state() {
        let p = BistabilityParams::pr_yso();
        let r = solve_output(1e5, p.omega_a, &p, Some(70.0)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.stable, vec![true, false, true]);
        assert_eq!(r.followed, Some(1));
        for &u in &r.roots {
            let y = steady_state_input(Complex64::new(u.sqrt(), 0.0), &p, p.omega_a);
            assert!((y.norm_sqr() - 1e5).abs() < 1e-8 * 1e5);
        }
    }

    #[test]
    fn three_root_window_matches_brute_force() {
        let p = BistabilityParams::pr_yso();
        assert!(p.cooperativity() > ABSORPTIVE_THRESHOLD);
        let (lo, hi) = three_root_window(&p, p.omega_a, 1e3, 1e7, 161).unwrap().expect("window");
        // Oracle: sign changes of u·M(u) − |y|² on a dense u grid.
        let brute = |y: f64| {
            let f = |u: f64| u * p.gain(u, p.omega_a.0) - y;
            let n = 200_000;
            let mut prev = f(y * 1e-9);
            let mut count = 0;
            for i in 1..=n {
                let v = f(y * 10f64.powf(-9.0 + 9.0 * i as f64 / n as f64));
                if v.signum() != prev.signum() {
                    count += 1;
                }
                prev = v;
            }
            count
        };
        for y in [lo, (lo * hi).sqrt(), hi] {
            assert_eq!(brute(y), 3, "y={y}");
        }
        assert_eq!(brute(lo / 1.5), 1);
        assert_eq!(brute(hi * 1.5), 1);
    }

    #[test]
    fn empty_cavity_sweep_is_lorentzian_without_hysteresis() {
        let p = BistabilityParams::pr_yso().with_atoms(0.0);
        let f = sweep(&p, 3.0e5, &span(401), SweepDirection::Forward).unwrap();
        let r = sweep(&p, 3.0e5, &span(401), SweepDirection::Reverse).unwrap();
        let mut rev_t = r.transmission.clone();
        rev_t.reverse();
        assert_eq!(f.transmission, rev_t);
        let top = 1.0 - p.external_loss;
        for (&x, &t) in f.laser_detunings.iter().zip(&f.transmission) {
            // Invert T = top·(1 − η/(1 + x²/κ²)) for κ.
            let lorentz = (top - t) / (top * p.coupling);
            if x != 0.0 {
                let kappa = x.abs() / (1.0 / lorentz - 1.0).sqrt();
                assert!((kappa / p.kappa.0 - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weak_drive_matches_linear_response() {
        let p = BistabilityParams::pr_yso();
        let f = sweep(&p, 1e-4, &span(201), SweepDirection::Forward).unwrap();
        for (&x, &t) in f.laser_detunings.iter().zip(&f.transmission) {
            let lin = linear_transmission(&p, p.omega_c.0 + x);
            assert!((t / lin - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn strong_drive_shows_hysteresis_with_a_steep_edge() {
        let p = BistabilityParams::pr_yso();
        let drive = PowerCalibration::default().drive(800e-6);
        let f = sweep(&p, drive, &span(401), SweepDirection::Forward).unwrap();
        let r = sweep(&p, drive, &span(401), SweepDirection::Reverse).unwrap();
        let width = hysteresis_width(&f, &r, 1e-3);
        assert!(width > 0.0);
        // The jump edge is far steeper than the bare cavity slope.
        let steepest = f
            .laser_detunings
            .windows(2)
            .zip(f.transmission.windows(2))
            .map(|(x, t)| ((t[1] - t[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max);
        assert!(steepest * p.kappa.0 > 100.0);
        // Samples with a unique root agree between the two directions.
        for (i, &x) in f.laser_detunings.iter().enumerate() {
            if let Some(j) = r.laser_detunings.iter().position(|&v| v == x) {
                if f.branch_count[i] == 1 {
                    assert_eq!(f.transmission[i], r.transmission[j]);
                }
            }
        }
    }

    #[test]
    fn sweeps_are_deterministic() {
        let p = BistabilityParams::pr_yso();
        let drive = PowerCalibration::default().drive(800e-6);
        let a = sweep(&p, drive, &span(201), SweepDirection::Reverse).unwrap();
        let b = sweep(&p, drive, &span(201), SweepDirection::Reverse).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_truth_has_zero_residual() {
        let p = BistabilityParams::pr_yso();
        let drive = PowerCalibration::default().drive(800e-6);
        let trace = sweep(&p, drive, &span(201), SweepDirection::Forward).unwrap();
        let res = bistability_residuals(&[DrivenTrace { drive, trace }], &p).unwrap();
        assert!(res.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn invalid_parameters_are_named() {
        let mut p = BistabilityParams::pr_yso();
        p.coupling = 1.3;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("coupling"));
        assert!(solve_output(-1.0, p.omega_a, &BistabilityParams::pr_yso(), None).is_err());
        assert!(fit_bistability(&[], &BistabilityParams::pr_yso(), &BistabilityFitOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn transmission_is_a_fraction(
            k in -4.0f64..4.0,
            log_drive in -6.0f64..8.0,
            n in 0.0f64..4e8,
        ) {
            let p = BistabilityParams::pr_yso().with_atoms(n);
            let wl = p.omega_c.0 + k * p.kappa.0;
            let drive = 10f64.powf(log_drive);
            for &u in &solve_output(drive, AngularRate(wl), &p, None).unwrap().roots {
                let t = transmission(&p, u, drive, wl);
                prop_assert!((0.0..=1.0).contains(&t));
            }
        }

        #[test]
        fn unique_root_grows_with_drive(k in -2.0f64..2.0, log_drive in -2.0f64..8.0) {
            let p = BistabilityParams::pr_yso();
            let wl = AngularRate(p.omega_a.0 + k * p.gamma_h.0 * 50.0);
            let y = 10f64.powf(log_drive);
            let a = solve_output(y, wl, &p, None).unwrap();
            let b = solve_output(y * 1.01, wl, &p, None).unwrap();
            if a.len() == 1 && b.len() == 1 {
                prop_assert!(b.roots[0] > a.roots[0]);
            }
        }
    }
}
