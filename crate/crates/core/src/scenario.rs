//! Scenario runner: named pipelines over an [`ExperimentConfig`] that produce a
//! [`ScenarioReport`] plus plot-ready trace files.
//!
//! Every reported number lives in a step record named after the operation that
//! produced it, and is addressed as `step.output` by the `[[expect]]` checks.
//! Outputs are in SI units with angular rates in rad/s; keys ending in `_hz`
//! hold the same rate divided by 2π.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::Value;

use crate::bistability::{
    fit_bistability, power_ladder, sweep, three_root_window, BistabilityFitOptions, DrivenTrace, PowerSweep,
    ABSORPTIVE_THRESHOLD,
};
use crate::config::{EchoRunSpec, ExperimentConfig, GSource};
use crate::cqed::{
    critical_numbers, decay_rates, g_from_dipole, g_from_echo, intracavity_photon_number, kappa_from_q, rabi_from_pulse,
    strong_coupling_report, PHOTON_NUMBER_CONVENTION,
};
use crate::echo::{
    accumulated_echo_sweep, echo_area_scan, EchoOptions, simulate_two_pulse_echo, three_pulse_echo_sweep, two_pulse_echo_sweep,
    HoleComponent, SequenceKind, SequenceTemplate,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fitkit::{
    fit_decay, fit_heating_quadratic, fit_pi_pulse, fit_two_stage_hole, DecayModel, DecayOptions, FitResult, HoleFitMode,
    HoleFitOptions,
};
use crate::io::{emit_series, emit_trace, Series, Trace};
use crate::model::{AngularRate, CavityQedParams, Detection, SweepDirection};
use crate::wgm::{find_fundamental_mode, mode_volume, ModeBranch};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "REWGM_OUT";

/// Pulse pairs in the accumulated-echo preparation train.
const ACCUMULATED_PAIRS: u32 = 100;
/// Default pulse separation for 3PE and accumulated runs, s.
const DEFAULT_TAU: f64 = 2e-6;
/// Forward and reverse transmissions closer than this count as equal.
const HYSTERESIS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Table1,
    CavityQedNumbers,
    ModeVolume,
    EchoSuite,
    BistabSuite,
    Heating,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Table1,
        Scenario::CavityQedNumbers,
        Scenario::ModeVolume,
        Scenario::EchoSuite,
        Scenario::BistabSuite,
        Scenario::Heating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Table1 => "table1",
            Scenario::CavityQedNumbers => "cavity_qed_numbers",
            Scenario::ModeVolume => "mode_volume",
            Scenario::EchoSuite => "echo_suite",
            Scenario::BistabSuite => "bistab_suite",
            Scenario::Heating => "heating",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Trace and report files are written here; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Seeds the noise generator; 0 when absent.
    pub seed: Option<u64>,
    pub exec: Execution,
}

/// One pipeline step: what ran, and the numbers it produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub name: String,
    pub operation: String,
    pub outputs: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StepRecord {
    fn out(&mut self, key: &str, value: f64) -> &mut Self {
        self.outputs.insert(key.to_string(), value);
        self
    }

    fn rate(&mut self, key: &str, r: AngularRate) -> &mut Self {
        self.out(key, r.0).out(&format!("{key}_hz"), r.0 / TAU)
    }

    fn flag(&mut self, key: &str, b: bool) -> &mut Self {
        self.out(key, if b { 1.0 } else { 0.0 })
    }

    fn note(&mut self, s: impl Into<String>) -> &mut Self {
        self.notes.push(s.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The quantity belongs to a step this scenario does not run.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub quantity: String,
    pub expected: f64,
    pub rel_tol: f64,
    pub actual: Option<f64>,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub scenario: String,
    pub crate_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
    pub checks: Vec<CheckOutcome>,
    /// Written files, relative to the output directory.
    pub files: Vec<String>,
    pub provenance: Vec<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ScenarioReport {
    /// Looks up `step.output`.
    pub fn quantity(&self, key: &str) -> Option<f64> {
        self.steps.iter().find_map(|s| {
            let rest = key.strip_prefix(s.name.as_str())?.strip_prefix('.')?;
            s.outputs.get(rest).copied()
        })
    }

    pub fn step(&self, name: &str) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    /// JSON document whose second line is the only run-dependent one (unix
    /// time and wall time); everything else is a function of config and seed.
    pub fn to_json(&self) -> String {
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let body = serde_json::to_string_pretty(self).expect("report serialises");
        let mut s = String::from("{\n");
        let _ = writeln!(s, "\"run_info\": {{\"unix_time_s\": {unix}, \"wall_time_s\": {:.3}}},", self.wall_time_s);
        s.push_str("\"report\": ");
        s.push_str(&body);
        s.push_str("\n}\n");
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (report schema {}, seed {})", self.scenario, self.schema_version, self.seed);
        for step in &self.steps {
            let _ = writeln!(s, "[{}] {}", step.name, step.operation);
            for (k, v) in &step.outputs {
                let _ = writeln!(s, "    {k:<32} {v:.6e}");
            }
            for f in &step.fits {
                let _ = writeln!(s, "    fit {} converged={} rss={:.3e}", f.model_name, f.converged, f.residual_norm);
                for p in &f.parameters {
                    let _ = writeln!(s, "      {:<30} {:.6e} {}", p.name, p.value, p.unit);
                }
                for flag in &f.flags {
                    let _ = writeln!(s, "      flag: {flag}");
                }
            }
            for n in &step.notes {
                let _ = writeln!(s, "    note: {n}");
            }
        }
        for c in self.checks.iter().filter(|c| c.status != CheckStatus::Skipped) {
            let tag = if c.status == CheckStatus::Pass { "PASS" } else { "FAIL" };
            let actual = c.actual.map_or("missing".to_string(), |a| format!("{a:.6e}"));
            let _ = writeln!(s, "{tag} {} = {actual} (expected {:.6e} ± {:.2}%)", c.quantity, c.expected, 100.0 * c.rel_tol);
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {f}");
        }
        let _ = writeln!(s, "wall time {:.2} s", self.wall_time_s);
        s
    }

    pub fn report_file_name(&self) -> String {
        format!("{}.report.json", self.scenario)
    }
}

struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    steps: Vec<StepRecord>,
    files: Vec<String>,
    provenance: Vec<String>,
    rng: ChaCha8Rng,
}

fn at(step: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| e.at_step(step)
}

impl<'a> Pipeline<'a> {
    fn record(&mut self, name: impl Into<String>, operation: &str) -> &mut StepRecord {
        self.steps.push(StepRecord {
            name: name.into(),
            operation: operation.to_string(),
            outputs: BTreeMap::new(),
            fits: Vec::new(),
            notes: Vec::new(),
        });
        self.steps.last_mut().expect("just pushed")
    }

    fn provenance(&mut self, s: &str) {
        if !self.provenance.iter().any(|p| p == s) {
            self.provenance.push(s.to_string());
        }
    }

    fn write_trace(&mut self, step: &'static str, name: String, trace: Trace, params: BTreeMap<String, Value>) -> Result<()> {
        if let Some(dir) = &self.opts.out_dir {
            emit_trace(&trace, &params, dir.join(&name)).map_err(at(step))?;
            self.files.push(name);
        }
        Ok(())
    }

    fn write_series(&mut self, step: &'static str, name: String, series: &Series) -> Result<()> {
        if let Some(dir) = &self.opts.out_dir {
            emit_series(series, dir.join(&name)).map_err(at(step))?;
            self.files.push(name);
        }
        Ok(())
    }

    /// Multiplies each y by (1 + σ·N(0, 1)).
    fn relative_noise(&mut self, points: &mut [(f64, f64)], sigma: f64) {
        if sigma > 0.0 {
            for p in points.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                p.1 *= 1.0 + sigma * z;
            }
        }
    }

    // ---- cavity QED ----

    fn kappa(&mut self) -> Result<AngularRate> {
        let r = &self.cfg.resonator;
        let kappa = kappa_from_q(self.cfg.ion.transition_wavelength, r.quality_factor).map_err(at("kappa_from_q"))?;
        self.record("kappa_from_q", "kappa_from_q").rate("kappa", kappa).out("quality_factor", r.quality_factor);
        Ok(kappa)
    }

    fn decay_rates(&mut self) -> Result<(AngularRate, AngularRate)> {
        let ion = &self.cfg.ion;
        let (gamma, gamma_h) = decay_rates(ion.t1, ion.t2).map_err(at("decay_rates"))?;
        self.record("decay_rates", "decay_rates")
            .out("t1", ion.t1)
            .out("t2", ion.t2)
            .rate("gamma", gamma)
            .rate("gamma_h", gamma_h);
        Ok((gamma, gamma_h))
    }

    fn rabi(&mut self) -> Result<AngularRate> {
        let d = self.cfg.cqed.pi_pulse_duration;
        let rabi = rabi_from_pulse(PI, d).map_err(at("rabi_from_pulse"))?;
        self.record("rabi_from_pulse", "rabi_from_pulse").out("pi_pulse_duration", d).rate("rabi", rabi);
        Ok(rabi)
    }

    /// g from the π-pulse calibration.
    fn g_echo(&mut self, rabi: AngularRate) -> Result<AngularRate> {
        let (c, r, lambda) = (&self.cfg.cqed, &self.cfg.resonator, self.cfg.ion.transition_wavelength);
        r.validate().map_err(at("intracavity_photon_number"))?;
        let n_ph = intracavity_photon_number(c.input_power, r.coupling_efficiency, r.quality_factor, lambda)
            .map_err(at("intracavity_photon_number"))?;
        self.record("intracavity_photon_number", "intracavity_photon_number")
            .out("input_power", c.input_power)
            .out("coupling_efficiency", r.coupling_efficiency)
            .out("n_ph", n_ph)
            .note(PHOTON_NUMBER_CONVENTION);
        self.provenance(PHOTON_NUMBER_CONVENTION);
        let est = g_from_echo(rabi, n_ph).map_err(at("g_from_echo"))?;
        let reference = c.reference_g_hz;
        let step = self.record("g_from_echo", "g_from_echo");
        step.rate("g", est.g);
        if let Some(gr) = reference {
            let rel = est.g.over_2pi() / gr - 1.0;
            step.out("reference_g_hz", gr).out("relative_gap_to_reference", rel);
            if rel.abs() > 0.05 {
                step.note(format!(
                    "echo-calibrated g/2π = {:.4} kHz differs from the reference {:.4} kHz by {:+.1}%",
                    est.g.over_2pi() / 1e3,
                    gr / 1e3,
                    100.0 * rel
                ));
            }
        }
        Ok(est.g)
    }

    /// Fundamental mode, its volume and the dipole coupling.
    fn g_dipole(&mut self) -> Result<AngularRate> {
        let (ion, r) = (&self.cfg.ion, &self.cfg.resonator);
        let mode = find_fundamental_mode(r, ion.transition_wavelength, r.polarization, self.opts.exec)
            .map_err(at("find_fundamental_mode"))?;
        let step = self.record("find_fundamental_mode", "find_fundamental_mode");
        step.out("l", mode.l as f64)
            .out("resonance_wavelength", mode.resonance_wavelength)
            .out("size_parameter", mode.size_parameter)
            .out("radius", mode.radius)
            .out("refractive_index", mode.refractive_index)
            .note(format!("{} polarisation, {:?} branch", mode.polarization, mode.branch));
        if let Some(res) = mode.residual {
            step.out("characteristic_residual", res);
        }
        let vol = mode_volume(&mode, self.opts.exec).map_err(at("mode_volume"))?;
        self.record("mode_volume", "mode_volume")
            .out("volume", vol.volume)
            .out("estimated_relative_error", vol.estimated_relative_error)
            .flag("exact_branch", mode.branch == ModeBranch::Exact)
            .note(format!("method {:?}", vol.method));
        // The ion sees the field at the resonance of the mode it couples to.
        let omega_a = ion.transition_frequency();
        let est = g_from_dipole(ion.dipole_moment, r.refractive_index, omega_a, vol.volume).map_err(at("g_from_dipole"))?;
        self.record("g_from_dipole", "g_from_dipole").out("dipole_moment", ion.dipole_moment).rate("g", est.g);
        Ok(est.g)
    }

    fn critical_numbers(&mut self, g: AngularRate, kappa: AngularRate, gamma: AngularRate, gamma_h: AngularRate, source: &str) -> Result<()> {
        let (big_n0, n0) = critical_numbers(g, kappa, gamma, gamma_h).map_err(at("critical_numbers"))?;
        self.record("critical_numbers", "critical_numbers")
            .rate("g", g)
            .out("N0", big_n0)
            .out("n0", n0)
            .note(format!("g taken from {source}"));
        let params = CavityQedParams::new(g, kappa, gamma, gamma_h).map_err(at("strong_coupling_report"))?;
        let rep = strong_coupling_report(&params);
        self.record("strong_coupling_report", "strong_coupling_report")
            .out("g2_over_kappa", rep.g2_over_kappa)
            .out("gamma", rep.gamma)
            .flag("n0_below_one", rep.n0_below_one)
            .flag("big_n0_below_one", rep.big_n0_below_one)
            .flag("bad_cavity_strong", rep.bad_cavity_strong)
            .flag("all_true", rep.all_true());
        Ok(())
    }

    fn cavity_qed(&mut self) -> Result<()> {
        let kappa = self.kappa()?;
        let (gamma, gamma_h) = self.decay_rates()?;
        let source = self.cfg.cqed.g_source;
        let g_echo = match source {
            GSource::Dipole => None,
            _ => {
                let rabi = self.rabi()?;
                Some(self.g_echo(rabi)?)
            }
        };
        let (g, label) = match source {
            GSource::Echo => (g_echo.expect("computed above"), "g_from_echo"),
            GSource::Dipole => (self.g_dipole()?, "g_from_dipole"),
            GSource::Reference => {
                let hz = self.cfg.cqed.reference_g_hz.ok_or_else(|| {
                    Error::invalid("cqed.reference_g_hz", "required when g_source = \"reference\"").at_step("critical_numbers")
                })?;
                (AngularRate::from_hz(hz), "cqed.reference_g_hz")
            }
        };
        self.critical_numbers(g, kappa, gamma, gamma_h, label)
    }

    // ---- echoes ----

    fn echo_run(&mut self, i: usize, run: &EchoRunSpec, rabi: AngularRate) -> Result<()> {
        const STEP: &str = "echo_run";
        run.validate(i).map_err(at(STEP))?;
        let e = &self.cfg.echo;
        let ens = e.ensemble(run.t1, run.t2);
        let opts = EchoOptions { exec: self.opts.exec, ..e.options(run.detection, rabi) };
        let n = e.sweep_points;
        let tau = run.tau.unwrap_or(DEFAULT_TAU);
        let holes: Vec<HoleComponent> = {
            let k = run.hole_lifetimes.len().max(1) as f64;
            run.hole_lifetimes
                .iter()
                .enumerate()
                .map(|(j, &lifetime)| HoleComponent { lifetime, weight: run.hole_weights.get(j).copied().unwrap_or(0.5 / k) })
                .collect()
        };
        let (op, xs, mut data) = match run.kind {
            SequenceKind::TwoPulse => {
                let xs = run.delays.clone().unwrap_or_else(|| linspace(0.05 * run.t2, 1.5 * run.t2, n));
                ("two_pulse_echo_sweep", xs.clone(), two_pulse_echo_sweep(&ens, &xs, &opts).map_err(at("two_pulse_echo_sweep"))?)
            }
            SequenceKind::ThreePulse => {
                let xs = run.delays.clone().unwrap_or_else(|| linspace(0.0, 2.0 * run.t1, n));
                let d = three_pulse_echo_sweep(&ens, tau, &xs, &opts).map_err(at("three_pulse_echo_sweep"))?;
                ("three_pulse_echo_sweep", xs, d)
            }
            SequenceKind::Accumulated => {
                let (lo, hi) = holes.iter().fold((f64::INFINITY, 0.0f64), |(a, b), h| (a.min(h.lifetime), b.max(h.lifetime)));
                let xs = run.delays.clone().unwrap_or_else(|| {
                    if holes.len() > 1 {
                        geomspace(0.05 * lo, 3.0 * hi, n.max(24))
                    } else {
                        linspace(10.0 * run.t1, 3.0 * hi, n)
                    }
                });
                let period = 5.0 * run.t1.max(run.t2);
                let prep = SequenceTemplate::accumulated(tau, period, ACCUMULATED_PAIRS);
                let d = accumulated_echo_sweep(&ens, &prep, &xs, &holes, &opts).map_err(at("accumulated_echo_sweep"))?;
                ("accumulated_echo_sweep", xs, d)
            }
        };
        debug_assert_eq!(xs.len(), data.len());
        self.relative_noise(&mut data, e.noise);

        // Direct detection records intensity; 3PE and hole fits work on amplitude.
        let direct_amplitude = run.detection == Detection::Direct && run.kind != SequenceKind::TwoPulse;
        let series: Vec<(f64, f64)> =
            if direct_amplitude { data.iter().map(|&(x, y)| (x, y.max(0.0).sqrt())).collect() } else { data.clone() };
        let model = match (run.kind, run.detection) {
            (SequenceKind::TwoPulse, Detection::Heterodyne) => Some(DecayModel::Amp2pe),
            (SequenceKind::TwoPulse, Detection::Direct) => Some(DecayModel::Int2pe),
            (SequenceKind::ThreePulse, _) => Some(DecayModel::Pop3pe),
            (SequenceKind::Accumulated, _) if holes.len() == 1 => Some(DecayModel::Hole),
            (SequenceKind::Accumulated, _) => None,
        };
        let fit = match model {
            Some(m) => fit_decay(&series, m, &DecayOptions::default()).map_err(at("fit_decay"))?,
            None => fit_two_stage_hole(&series, &HoleFitOptions { mode: HoleFitMode::Sum, breakpoint: None })
                .map_err(at("fit_two_stage_hole"))?,
        };

        let name = format!("echo.{}", run.id);
        let fit_op = model.map_or("fit_two_stage_hole(sum)".to_string(), |m| format!("fit_decay({m})"));
        let step = self.record(name, &format!("{op} + {fit_op}"));
        step.out("n_classes", e.n_classes as f64).out("points", xs.len() as f64);
        match run.kind {
            SequenceKind::TwoPulse => {
                let t2 = fit.get("T2").unwrap_or(f64::NAN);
                step.out("T2", t2).out("T2_input", run.t2).out("T2_relative_error", t2 / run.t2 - 1.0);
            }
            SequenceKind::ThreePulse => {
                let t1 = fit.get("T1").unwrap_or(f64::NAN);
                step.out("tau", tau).out("T1", t1).out("T1_input", run.t1).out("T1_relative_error", t1 / run.t1 - 1.0);
            }
            SequenceKind::Accumulated => {
                step.out("tau", tau).out("pairs", ACCUMULATED_PAIRS as f64);
                if holes.len() == 1 {
                    let th = fit.get("T_h").unwrap_or(f64::NAN);
                    let input = holes[0].lifetime;
                    step.out("T_h", th).out("T_h_input", input).out("T_h_relative_error", th / input - 1.0);
                } else {
                    let mut inputs: Vec<f64> = holes.iter().map(|h| h.lifetime).collect();
                    inputs.sort_by(f64::total_cmp);
                    for (key, input) in [("T_h_fast", inputs[0]), ("T_h_slow", inputs[1])] {
                        let v = fit.get(key).unwrap_or(f64::NAN);
                        step.out(key, v).out(&format!("{key}_input"), input).out(&format!("{key}_relative_error"), v / input - 1.0);
                    }
                }
                for (j, h) in holes.iter().enumerate() {
                    step.out(&format!("hole_weight[{j}]"), h.weight);
                }
            }
        }
        if direct_amplitude {
            step.note("direct-detection intensities converted to amplitudes (square root) before fitting");
        }
        step.fits.push(fit);
        let model_name = model.map_or("two_stage_hole", DecayModel::name);
        let ylabel = if run.detection == Detection::Direct { "intensity" } else { "amplitude" };
        let series = Series::new(Some(model_name), ["delay", ylabel], ["s", "arb"], data);
        self.write_series(STEP, format!("echo_{}.dat", run.id), &series)?;

        // One full detector trace per 2PE run, at the first delay.
        if run.kind == SequenceKind::TwoPulse {
            let one = simulate_two_pulse_echo(&ens, xs[0], &opts).map_err(at("simulate_two_pulse_echo"))?;
            let params = BTreeMap::from([
                ("run".to_string(), Value::from(run.id.clone())),
                ("tau".to_string(), Value::from(xs[0])),
                ("t1".to_string(), Value::from(run.t1)),
                ("t2".to_string(), Value::from(run.t2)),
                ("rabi".to_string(), Value::from(rabi.0)),
                ("n_classes".to_string(), Value::from(e.n_classes)),
                ("inhomogeneous_width".to_string(), Value::from(ens.inhomogeneous_width.0)),
            ]);
            if !one.hard_pulse.valid {
                self.provenance(&format!(
                    "hard-pulse assumption not satisfied: Ω = {:.3e} rad/s < {}×inhomogeneous width {:.3e} rad/s; pulses are still applied as instantaneous rotations",
                    one.hard_pulse.min_rabi,
                    crate::echo::HARD_PULSE_MARGIN,
                    one.hard_pulse.inhomogeneous_width
                ));
            }
            self.write_trace(STEP, format!("echo_{}_trace.dat", run.id), one.trace.into(), params)?;
        }
        Ok(())
    }

    fn echo_runs(&mut self, rabi: AngularRate) -> Result<()> {
        let runs = self.cfg.echo.runs.clone();
        for (i, run) in runs.iter().enumerate() {
            self.echo_run(i, run, rabi)?;
        }
        Ok(())
    }

    fn area_scan(&mut self, rabi: AngularRate) -> Result<()> {
        const STEP: &str = "echo_area_scan";
        let Some(a) = self.cfg.echo.area_scan.clone() else { return Ok(()) };
        let e = &self.cfg.echo;
        let ens = e.ensemble(self.cfg.ion.t1, self.cfg.ion.t2);
        let opts = EchoOptions { exec: self.opts.exec, ..e.options(Detection::Heterodyne, rabi) };
        let durations = linspace(a.min_duration, a.max_duration, a.points);
        let mut scan = echo_area_scan(&ens, rabi, FRAC_PI_2, a.tau, &durations, &opts).map_err(at(STEP))?;
        self.relative_noise(&mut scan.points, e.noise);
        let fit = fit_pi_pulse(&scan.points).map_err(at("fit_pi_pulse"))?;
        let tau_pi = fit.get("tau_pi").unwrap_or(f64::NAN);
        let step = self.record(STEP, "echo_area_scan + fit_pi_pulse");
        step.out("tau_pi", tau_pi)
            .out("rabi_fit", fit.get("rabi_frequency").unwrap_or(f64::NAN))
            .out("tau_pi_expected", PI / rabi.0)
            .out("tau_pi_relative_error", tau_pi * rabi.0 / PI - 1.0);
        if let Some((x, _)) = scan.peak {
            step.out("argmax_duration", x);
        }
        for f in &scan.flags {
            step.note(f.clone());
        }
        step.fits.push(fit);
        let series = Series::new(None, ["second_pulse_duration", "amplitude"], ["s", "arb"], scan.points);
        self.write_series(STEP, "echo_area_scan.dat".to_string(), &series)
    }

    // ---- bistability ----

    fn bistability_fit(&mut self, ladder: &[PowerSweep]) -> Result<()> {
        const STEP: &str = "fit_bistability";
        let b = self.cfg.bistability.clone().ok_or_else(|| Error::invalid("bistability", "section missing").at_step(STEP))?;
        if b.fit_powers.is_empty() {
            return Ok(());
        }
        b.validate().map_err(at(STEP))?;
        let truth = b.params();
        let cal = b.calibration();
        let span = b.span();
        let mut data = Vec::new();
        for &p in &b.fit_powers {
            let drive = cal.drive(p);
            let reuse = ladder.iter().find(|s| s.power == p);
            for dir in [SweepDirection::Forward, SweepDirection::Reverse] {
                let trace = match (reuse, dir) {
                    (Some(s), SweepDirection::Forward) => s.forward.clone(),
                    (Some(s), SweepDirection::Reverse) => s.reverse.clone(),
                    (None, _) => sweep(&truth, drive, &span, dir).map_err(at("sweep"))?,
                };
                data.push(DrivenTrace { drive, trace });
            }
        }
        if b.noise > 0.0 {
            for d in &mut data {
                for y in &mut d.trace.transmission {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    *y += b.noise * z;
                }
            }
        }
        let g0 = b.initial_g_hz.unwrap_or(b.g_hz);
        let opts = BistabilityFitOptions { exec: self.opts.exec, ..Default::default() };
        let fit = fit_bistability(&data, &truth.with_g(AngularRate::from_hz(g0).0), &opts).map_err(at(STEP))?;
        let g = fit.estimate.g;
        let step = self.record(STEP, "sweep + fit_bistability");
        step.rate("g", g)
            .out("g_initial_hz", g0)
            .out("g_truth_hz", b.g_hz)
            .out("g_relative_error", g.over_2pi() / b.g_hz - 1.0)
            .out("traces", data.len() as f64)
            .out("noise", b.noise)
            .flag("converged", fit.fit.converged);
        step.fits.push(fit.fit);
        Ok(())
    }

    fn bistab_suite(&mut self) -> Result<()> {
        let b = self.cfg.bistability.clone().ok_or_else(|| Error::invalid("bistability", "section missing").at_step("cooperativity"))?;
        b.validate().map_err(at("cooperativity"))?;
        let params = b.params();
        let c = params.cooperativity();
        self.record("cooperativity", "cooperativity")
            .out("C", c)
            .out("threshold", ABSORPTIVE_THRESHOLD)
            .flag("above_threshold", c > ABSORPTIVE_THRESHOLD)
            .rate("g", params.g)
            .rate("kappa", params.kappa)
            .rate("gamma_h", params.gamma_h)
            .out("n_atoms", params.n_atoms);

        let cal = b.calibration();
        let top = b.powers.iter().copied().fold(0.0, f64::max).max(1e-12);
        let window = three_root_window(&params, params.omega_a, 1e-3 * cal.drive(top), 10.0 * cal.drive(top), 121)
            .map_err(at("three_root_window"))?;
        let step = self.record("three_root_window", "three_root_window");
        step.flag("exists", window.is_some()).note("laser on the atomic resonance; drive in units of |y|²");
        if let Some((lo, hi)) = window {
            step.out("drive_lo", lo).out("drive_hi", hi);
        }

        let span = b.span();
        let ladder = power_ladder(&params, &b.powers, &cal, &span, self.opts.exec).map_err(at("power_ladder"))?;
        let widths: Vec<f64> = ladder.iter().map(|s| s.hysteresis_width(HYSTERESIS_TOL)).collect();
        let step = self.record("power_ladder", "power_ladder + hysteresis_width");
        for (s, w) in ladder.iter().zip(&widths) {
            let tag = format!("{:.0}uW", s.power * 1e6);
            step.out(&format!("drive@{tag}"), s.drive).out(&format!("hysteresis_width_hz@{tag}"), w / TAU);
        }
        // Ladder order is whatever the config lists; sort by power for the check.
        let mut by_power: Vec<(f64, f64)> = ladder.iter().map(|s| s.power).zip(widths.iter().copied()).collect();
        by_power.sort_by(|a, b| b.0.total_cmp(&a.0));
        let non_increasing = by_power.windows(2).all(|w| w[1].1 <= w[0].1);
        step.flag("width_non_increasing", non_increasing)
            .flag("hysteresis_at_highest_power", by_power.first().is_some_and(|w| w.1 > 0.0))
            .out("max_width_hz", widths.iter().copied().fold(0.0, f64::max) / TAU);
        for s in &ladder {
            for (dir, trace) in [("forward", &s.forward), ("reverse", &s.reverse)] {
                let params = BTreeMap::from([
                    ("power".to_string(), Value::from(s.power)),
                    ("drive".to_string(), Value::from(s.drive)),
                    ("g".to_string(), Value::from(params.g.0)),
                    ("n_atoms".to_string(), Value::from(params.n_atoms)),
                    ("kappa".to_string(), Value::from(params.kappa.0)),
                    ("gamma_h".to_string(), Value::from(params.gamma_h.0)),
                    ("omega_a".to_string(), Value::from(params.omega_a.0)),
                ]);
                self.write_trace("power_ladder", format!("bistab_{:.0}uW_{dir}.dat", s.power * 1e6), trace.clone().into(), params)?;
            }
        }
        self.bistability_fit(&ladder)
    }

    // ---- heating ----

    fn heating(&mut self) -> Result<()> {
        const STEP: &str = "fit_heating_quadratic";
        let h = self.cfg.heating.clone().ok_or_else(|| Error::invalid("heating", "section missing").at_step("heating_data"))?;
        h.validate().map_err(at("heating_data"))?;
        let distances = if h.distances.is_empty() { linspace(0.3e-6, 0.9e-6, 10) } else { h.distances.clone() };
        let synthetic = h.t2.is_empty();
        let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let series: Vec<(f64, f64)> = if synthetic {
            distances.iter().map(|&d| (d, h.t2_far - h.t2_drop * (d_min / d).powi(2))).collect()
        } else {
            distances.iter().copied().zip(h.t2.iter().copied()).collect()
        };
        let step = self.record("heating_data", if synthetic { "synthetic 1/d² heat load" } else { "measured" });
        step.out("points", series.len() as f64).flag("synthetic", synthetic);
        if synthetic {
            step.out("t2_far", h.t2_far).out("t2_drop", h.t2_drop);
        }
        let fit = fit_heating_quadratic(&series).map_err(at(STEP))?;
        let (a, b) = (fit.get("a").unwrap_or(f64::NAN), fit.get("b").unwrap_or(f64::NAN));
        let d_max = distances.iter().copied().fold(0.0, f64::max);
        // A quadratic fitted to a saturating curve turns over near the far end,
        // so the monotonicity check is made on the data.
        let far_slope = 2.0 * a * d_max + b;
        let mut sorted = series.clone();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let data_monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1);
        let step = self.record(STEP, "fit_heating_quadratic");
        step.out("a", a)
            .out("b", b)
            .out("c", fit.get("c").unwrap_or(f64::NAN))
            .out("r_squared", fit.diagnostics.get("r_squared").copied().unwrap_or(f64::NAN))
            .out("fit_slope_near", 2.0 * a * d_min + b)
            .out("fit_slope_far", far_slope)
            .flag("monotone_increasing", data_monotone);
        step.fits.push(fit);
        let s = Series::new(None, ["distance", "t2"], ["m", "s"], series);
        self.write_series(STEP, "heating.dat".to_string(), &s)
    }

    fn run(&mut self, scenario: Scenario) -> Result<()> {
        match scenario {
            Scenario::CavityQedNumbers => self.cavity_qed(),
            Scenario::ModeVolume => self.g_dipole().map(|_| ()),
            Scenario::EchoSuite => {
                self.decay_rates()?;
                let rabi = self.rabi()?;
                self.echo_runs(rabi)?;
                self.area_scan(rabi)
            }
            Scenario::BistabSuite => self.bistab_suite(),
            Scenario::Heating => self.heating(),
            Scenario::Table1 => {
                self.cavity_qed()?;
                let rabi = self.rabi_recorded()?;
                if self.cfg.cqed.g_source != GSource::Dipole {
                    self.g_dipole()?;
                }
                self.echo_runs(rabi)?;
                if self.cfg.bistability.is_some() {
                    self.bistability_fit(&[])?;
                }
                self.table_summary();
                Ok(())
            }
        }
    }

    /// Rabi frequency, reusing the recorded step when present.
    fn rabi_recorded(&mut self) -> Result<AngularRate> {
        match self.steps.iter().find(|s| s.name == "rabi_from_pulse").and_then(|s| s.outputs.get("rabi")) {
            Some(&r) => Ok(AngularRate(r)),
            None => self.rabi(),
        }
    }

    fn table_summary(&mut self) {
        let get = |step: &str, key: &str| -> Option<f64> {
            self.steps.iter().find(|s| s.name == step).and_then(|s| s.outputs.get(key)).copied()
        };
        let mut rows: Vec<(String, f64)> = Vec::new();
        for (key, step) in [("g_echo_hz", "g_from_echo"), ("g_dipole_hz", "g_from_dipole"), ("g_bistability_hz", "fit_bistability")] {
            if let Some(v) = get(step, "g_hz") {
                rows.push((key.to_string(), v));
            }
        }
        for run in &self.cfg.echo.runs {
            let step = format!("echo.{}", run.id);
            for key in ["T2", "T1", "T_h", "T_h_fast", "T_h_slow"] {
                if let Some(v) = get(&step, key) {
                    rows.push((format!("{}.{key}", run.id), v));
                }
            }
        }
        let step = self.record("table1", "summary");
        for (k, v) in rows {
            step.out(&k, v);
        }
        step.note("copies of values computed in the steps above");
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

fn evaluate_checks(cfg: &ExperimentConfig, report: &ScenarioReport) -> Vec<CheckOutcome> {
    cfg.expect
        .iter()
        .map(|x| {
            let actual = report.quantity(&x.quantity);
            let step_ran = report.steps.iter().any(|s| x.quantity.starts_with(&format!("{}.", s.name)));
            let status = match actual {
                Some(a) if ((a - x.value) / x.value).abs() <= x.rel_tol || (x.value == 0.0 && a.abs() <= x.rel_tol) => {
                    CheckStatus::Pass
                }
                _ if !step_ran => CheckStatus::Skipped,
                _ => CheckStatus::Fail,
            };
            CheckOutcome { quantity: x.quantity.clone(), expected: x.value, rel_tol: x.rel_tol, actual, status }
        })
        .collect()
}

/// Runs `scenario` on `config`. Each step validates its own inputs, so an
/// invalid value surfaces as an error attributed to the first step using it.
pub fn run_scenario(scenario: Scenario, config: &ExperimentConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    let start = Instant::now();
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let seed = opts.seed.unwrap_or(0);
    let mut p = Pipeline {
        cfg: config,
        opts,
        steps: Vec::new(),
        files: Vec::new(),
        provenance: vec![
            "SI units; angular rates in rad/s, `_hz` outputs are the rate divided by 2π".to_string(),
            format!("noise generator ChaCha8 seeded with {seed}"),
        ],
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    p.run(scenario)?;
    let Pipeline { steps, mut files, provenance, .. } = p;
    let mut report = ScenarioReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.name().to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.clone(),
        steps,
        checks: Vec::new(),
        files: Vec::new(),
        provenance,
        wall_time_s: 0.0,
    };
    report.checks = evaluate_checks(config, &report);
    if opts.out_dir.is_some() {
        files.push(report.report_file_name());
    }
    report.files = files;
    report.wall_time_s = start.elapsed().as_secs_f64();
    if let Some(dir) = &opts.out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

pub fn write_report(report: &ScenarioReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(report.report_file_name());
    std::fs::write(&path, report.to_json())?;
    Ok(path)
}

/// The report with its run-dependent line removed.
pub fn strip_run_info(json: &str) -> String {
    json.lines().filter(|l| !l.starts_with("\"run_info\"")).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const BASE: &str = r#"
schema_version = 1

[ion]
label = "test"
transition_wavelength = 605.977e-9
dipole_moment = 1.5911e-32
t1 = 187e-6
t2 = 68e-6

[resonator]
radius = 1.95e-3
refractive_index = 1.8
quality_factor = 1.8e6
coupling_efficiency = 0.206

[cqed]
g_source = "reference"
reference_g_hz = 1730.0
"#;

    fn cfg(extra: &str) -> ExperimentConfig {
        parse_config(&format!("{BASE}{extra}")).unwrap()
    }

    fn quiet() -> RunOptions {
        RunOptions { exec: Execution::Sequential, ..Default::default() }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn cavity_numbers_and_checks() {
        let c = cfg(r#"
[[expect]]
quantity = "critical_numbers.N0"
value = 2.15e5
rel_tol = 0.01

[[expect]]
quantity = "critical_numbers.n0"
value = 0.166
rel_tol = 0.01

[[expect]]
quantity = "echo.x.T2"
value = 1.0
rel_tol = 0.01
"#);
        let r = run_scenario(Scenario::CavityQedNumbers, &c, &quiet()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.checks[2].status, CheckStatus::Skipped);
        let gap = r.quantity("g_from_echo.relative_gap_to_reference").unwrap();
        assert!(gap > 0.2 && gap < 0.3, "{gap}");
        assert!(!r.step("g_from_echo").unwrap().notes.is_empty());
        assert!(r.provenance.iter().any(|p| p == PHOTON_NUMBER_CONVENTION));
    }

    #[test]
    fn failing_check_fails_report() {
        let c = cfg("[[expect]]\nquantity = \"critical_numbers.N0\"\nvalue = 1.0\nrel_tol = 0.01\n");
        let r = run_scenario(Scenario::CavityQedNumbers, &c, &quiet()).unwrap();
        assert!(!r.passed());
        assert!(r.to_text().contains("FAIL critical_numbers.N0"));
    }

    #[test]
    fn zero_t2_is_attributed_to_decay_rates() {
        let mut c = cfg("");
        c.ion.t2 = 0.0;
        let err = run_scenario(Scenario::EchoSuite, &c, &quiet()).unwrap_err();
        assert_eq!(err.step(), Some("decay_rates"), "{err}");
    }

    #[test]
    fn missing_section_is_attributed() {
        let err = run_scenario(Scenario::Heating, &cfg(""), &quiet()).unwrap_err();
        assert_eq!(err.step(), Some("heating_data"));
    }

    #[test]
    fn heating_synthetic_is_monotone() {
        let r = run_scenario(Scenario::Heating, &cfg("[heating]\n"), &quiet()).unwrap();
        assert_eq!(r.quantity("fit_heating_quadratic.monotone_increasing"), Some(1.0));
        assert!(r.quantity("fit_heating_quadratic.fit_slope_near").unwrap() > 0.0);
        assert!(r.quantity("fit_heating_quadratic.r_squared").unwrap() > 0.9);
    }

    #[test]
    fn echo_run_writes_files_and_fits() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(r#"
[echo]
n_classes = 101

[[echo.runs]]
id = "a"
kind = "two_pulse"
t1 = 187e-6
t2 = 68e-6
"#);
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), ..quiet() };
        let r = run_scenario(Scenario::EchoSuite, &c, &opts).unwrap();
        assert!(r.quantity("echo.a.T2_relative_error").unwrap().abs() < 0.02);
        for f in &r.files {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(r.files.iter().any(|f| f == "echo_a.dat"));
        let json = std::fs::read_to_string(dir.path().join(r.report_file_name())).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["report"]["scenario"], "echo_suite");
        assert_eq!(json.lines().nth(1).map(|l| l.starts_with("\"run_info\"")), Some(true));
    }

    #[test]
    fn reports_are_reproducible() {
        let c = cfg("[heating]\n");
        let a = run_scenario(Scenario::Heating, &c, &quiet()).unwrap();
        let b = run_scenario(Scenario::Heating, &c, &RunOptions { exec: Execution::Parallel, ..quiet() }).unwrap();
        assert_eq!(strip_run_info(&a.to_json()), strip_run_info(&b.to_json()));
    }
}
