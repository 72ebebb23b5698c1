//! Experiment configuration: a TOML file with an ion, a resonator and one
//! optional block per scenario family.
//!
//! Rates in config files are ordinary frequencies with an `_hz` suffix; they
//! are turned into angular rates on use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bistability::{BistabilityParams, PowerCalibration, SweepSpan, DEFAULT_POWER_LADDER};
use crate::echo::{EchoOptions, EnsembleSpec, LineShape, SequenceKind, DEFAULT_INHOMOGENEOUS_FWHM_HZ, DEFAULT_LO_OFFSET_HZ};
use crate::error::{Error, Result};
use crate::model::{positive, unit_interval, AngularRate, Detection, IonSpecies, ResonatorSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub ion: IonSpecies,
    pub resonator: ResonatorSpec,
    #[serde(default)]
    pub cqed: CqedSection,
    #[serde(default)]
    pub echo: EchoSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bistability: Option<BistabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heating: Option<HeatingSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Expectation>,
}

/// Which coupling feeds the critical numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GSource {
    /// Ω/(2√n_ph) from the π-pulse calibration.
    #[default]
    Echo,
    /// Dipole moment and solved mode volume.
    Dipole,
    /// `reference_g_hz` as given.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqedSection {
    /// Input power for the echo calibration, W.
    #[serde(default = "defaults::input_power")]
    pub input_power: f64,
    /// Length of a π pulse, s.
    #[serde(default = "defaults::pi_pulse_duration")]
    pub pi_pulse_duration: f64,
    #[serde(default)]
    pub g_source: GSource,
    /// A literature or previously measured g/2π, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_g_hz: Option<f64>,
}

impl Default for CqedSection {
    fn default() -> Self {
        CqedSection {
            input_power: defaults::input_power(),
            pi_pulse_duration: defaults::pi_pulse_duration(),
            g_source: GSource::Echo,
            reference_g_hz: None,
        }
    }
}

/// One simulated echo experiment and the fit that reduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoRunSpec {
    pub id: String,
    pub kind: SequenceKind,
    #[serde(default = "defaults::detection")]
    pub detection: Detection,
    pub t1: f64,
    pub t2: f64,
    /// 3PE and accumulated: pulse separation τ, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Accumulated only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hole_lifetimes: Vec<f64>,
    /// Branching fraction per hole lifetime; equal split of 0.5 by default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hole_weights: Vec<f64>,
    /// Swept delays (τ, T or T_w), s. Chosen from the time constants if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<f64>>,
}

impl EchoRunSpec {
    pub(crate) fn validate(&self, i: usize) -> Result<()> {
        let f = |name: &str| format!("echo.runs[{i}].{name}");
        if self.id.is_empty() {
            return Err(Error::invalid(f("id"), "must not be empty"));
        }
        positive(&f("t1"), self.t1)?;
        positive(&f("t2"), self.t2)?;
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::invalid(f("t2"), "T2 ≤ 2·T1 violated"));
        }
        if let Some(tau) = self.tau {
            positive(&f("tau"), tau)?;
        }
        if self.kind == SequenceKind::Accumulated {
            if self.hole_lifetimes.is_empty() || self.hole_lifetimes.len() > 2 {
                return Err(Error::invalid(f("hole_lifetimes"), "accumulated runs need one or two lifetimes"));
            }
            for (k, &th) in self.hole_lifetimes.iter().enumerate() {
                positive(&f(&format!("hole_lifetimes[{k}]")), th)?;
            }
            if !self.hole_weights.is_empty() && self.hole_weights.len() != self.hole_lifetimes.len() {
                return Err(Error::invalid(f("hole_weights"), "one weight per hole lifetime"));
            }
            let total: f64 = self.hole_weights.iter().sum();
            if !self.hole_weights.is_empty() && !(total > 0.0 && total <= 1.0) {
                return Err(Error::invalid(f("hole_weights"), "weights must sum to a value in (0, 1]"));
            }
        }
        if let Some(d) = &self.delays {
            if d.len() < 4 || d.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::invalid(f("delays"), "need at least four finite delays ≥ 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaScanSpec {
    /// Shortest and longest second-pulse duration, s.
    pub min_duration: f64,
    pub max_duration: f64,
    pub points: usize,
    /// Pulse separation, s.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoSection {
    #[serde(default = "defaults::n_classes")]
    pub n_classes: usize,
    #[serde(default = "defaults::inhomogeneous_width_hz")]
    pub inhomogeneous_width_hz: f64,
    #[serde(default)]
    pub distribution: LineShape,
    #[serde(default = "defaults::lo_offset_hz")]
    pub lo_offset_hz: f64,
    /// Relative Gaussian noise added to simulated amplitudes.
    #[serde(default)]
    pub noise: f64,
    /// Samples per sweep when delays are chosen automatically.
    #[serde(default = "defaults::sweep_points")]
    pub sweep_points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<EchoRunSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_scan: Option<AreaScanSpec>,
}

impl Default for EchoSection {
    fn default() -> Self {
        EchoSection {
            n_classes: defaults::n_classes(),
            inhomogeneous_width_hz: defaults::inhomogeneous_width_hz(),
            distribution: LineShape::Gaussian,
            lo_offset_hz: defaults::lo_offset_hz(),
            noise: 0.0,
            sweep_points: defaults::sweep_points(),
            runs: Vec::new(),
            area_scan: None,
        }
    }
}

impl EchoSection {
    /// Ensemble for one run with this section's line shape.
    pub fn ensemble(&self, t1: f64, t2: f64) -> EnsembleSpec {
        EnsembleSpec {
            inhomogeneous_width: AngularRate::from_hz(self.inhomogeneous_width_hz),
            distribution: self.distribution,
            n_classes: self.n_classes,
            t1,
            t2,
        }
    }

    pub fn options(&self, detection: Detection, rabi: AngularRate) -> EchoOptions {
        EchoOptions { detection, lo_offset: AngularRate::from_hz(self.lo_offset_hz), rabi, ..EchoOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BistabilitySection {
    pub g_hz: f64,
    pub n_atoms: f64,
    pub kappa_hz: f64,
    pub gamma_h_hz: f64,
    pub gamma_hz: f64,
    /// ω_a − ω_c in units of κ.
    #[serde(default = "defaults::atom_offset_kappa")]
    pub atom_offset_kappa: f64,
    pub coupling: f64,
    pub external_loss: f64,
    #[serde(default = "defaults::intensity_per_watt")]
    pub intensity_per_watt: f64,
    /// Input powers, W.
    #[serde(default = "defaults::powers")]
    pub powers: Vec<f64>,
    /// Sweep covers ±`span_hz`.
    #[serde(default = "defaults::span_hz")]
    pub span_hz: f64,
    #[serde(default = "defaults::sweep_grid")]
    pub points: usize,
    /// Powers whose sweeps feed the g fit; none disables the fit.
    #[serde(default = "defaults::fit_powers")]
    pub fit_powers: Vec<f64>,
    /// Starting g/2π for the fit, Hz; defaults to `g_hz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_g_hz: Option<f64>,
    /// Absolute Gaussian noise added to synthetic transmission.
    #[serde(default)]
    pub noise: f64,
}

impl BistabilitySection {
    pub fn params(&self) -> BistabilityParams {
        let kappa = AngularRate::from_hz(self.kappa_hz);
        BistabilityParams {
            g: AngularRate::from_hz(self.g_hz),
            n_atoms: self.n_atoms,
            kappa,
            gamma_h: AngularRate::from_hz(self.gamma_h_hz),
            gamma: AngularRate::from_hz(self.gamma_hz),
            omega_c: AngularRate::ZERO,
            omega_a: AngularRate(self.atom_offset_kappa * kappa.0),
            coupling: self.coupling,
            external_loss: self.external_loss,
        }
    }

    pub fn calibration(&self) -> PowerCalibration {
        PowerCalibration { intensity_per_watt: self.intensity_per_watt }
    }

    pub fn span(&self) -> SweepSpan {
        let w = AngularRate::from_hz(self.span_hz).0;
        SweepSpan { start: -w, stop: w, points: self.points }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.params().validate()?;
        positive("bistability.intensity_per_watt", self.intensity_per_watt)?;
        positive("bistability.span_hz", self.span_hz)?;
        if self.points < 2 {
            return Err(Error::invalid("bistability.points", "must be ≥ 2"));
        }
        for (i, &p) in self.powers.iter().chain(&self.fit_powers).enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!("bistability.powers[{i}]"), "must be finite and ≥ 0"));
            }
        }
        if let Some(g) = self.initial_g_hz {
            positive("bistability.initial_g_hz", g)?;
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("bistability.noise", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Coherence time against prism–resonator gap. Without measured `t2`, a
/// synthetic set is generated as t2_far − t2_drop·(d_min/d)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingSection {
    /// Gap distances, m.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distances: Vec<f64>,
    /// Measured T2 per distance, s.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t2: Vec<f64>,
    #[serde(default = "defaults::t2_far")]
    pub t2_far: f64,
    #[serde(default = "defaults::t2_drop")]
    pub t2_drop: f64,
}

impl HeatingSection {
    pub(crate) fn validate(&self) -> Result<()> {
        if !self.t2.is_empty() && self.t2.len() != self.distances.len() {
            return Err(Error::invalid("heating.t2", "one value per distance"));
        }
        for (i, &d) in self.distances.iter().enumerate() {
            positive(&format!("heating.distances[{i}]"), d)?;
        }
        positive("heating.t2_far", self.t2_far)?;
        if !(self.t2_drop >= 0.0 && self.t2_drop < self.t2_far) {
            return Err(Error::invalid("heating.t2_drop", "must lie in [0, t2_far)"));
        }
        Ok(())
    }
}

/// An acceptance check on a named report quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub quantity: String,
    pub value: f64,
    pub rel_tol: f64,
}

mod defaults {
    use super::*;

    pub fn input_power() -> f64 {
        700e-6
    }
    pub fn pi_pulse_duration() -> f64 {
        0.32e-6
    }
    pub fn detection() -> Detection {
        Detection::Heterodyne
    }
    pub fn n_classes() -> usize {
        2001
    }
    pub fn inhomogeneous_width_hz() -> f64 {
        DEFAULT_INHOMOGENEOUS_FWHM_HZ
    }
    pub fn lo_offset_hz() -> f64 {
        DEFAULT_LO_OFFSET_HZ
    }
    pub fn sweep_points() -> usize {
        12
    }
    pub fn atom_offset_kappa() -> f64 {
        crate::bistability::DEFAULT_ATOM_OFFSET_KAPPA
    }
    pub fn intensity_per_watt() -> f64 {
        crate::bistability::DEFAULT_INTENSITY_PER_WATT
    }
    pub fn powers() -> Vec<f64> {
        DEFAULT_POWER_LADDER.to_vec()
    }
    pub fn span_hz() -> f64 {
        1e9
    }
    pub fn sweep_grid() -> usize {
        801
    }
    pub fn fit_powers() -> Vec<f64> {
        vec![800e-6]
    }
    pub fn t2_far() -> f64 {
        30.8e-6
    }
    pub fn t2_drop() -> f64 {
        12e-6
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("expected {CONFIG_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        self.ion.validate()?;
        self.resonator.validate()?;
        let c = &self.cqed;
        positive("cqed.input_power", c.input_power)?;
        positive("cqed.pi_pulse_duration", c.pi_pulse_duration)?;
        if let Some(g) = c.reference_g_hz {
            positive("cqed.reference_g_hz", g)?;
        } else if c.g_source == GSource::Reference {
            return Err(Error::invalid("cqed.reference_g_hz", "required when g_source = \"reference\""));
        }
        let e = &self.echo;
        if e.n_classes < 3 {
            return Err(Error::invalid("echo.n_classes", "must be ≥ 3"));
        }
        positive("echo.inhomogeneous_width_hz", e.inhomogeneous_width_hz)?;
        positive("echo.lo_offset_hz", e.lo_offset_hz)?;
        if !(e.noise >= 0.0 && e.noise < 1.0) {
            return Err(Error::invalid("echo.noise", "must lie in [0, 1)"));
        }
        if e.sweep_points < 4 {
            return Err(Error::invalid("echo.sweep_points", "must be ≥ 4"));
        }
        for (i, r) in e.runs.iter().enumerate() {
            r.validate(i)?;
            if e.runs[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::invalid(format!("echo.runs[{i}].id"), format!("duplicate id `{}`", r.id)));
            }
        }
        if let Some(a) = &e.area_scan {
            positive("echo.area_scan.min_duration", a.min_duration)?;
            positive("echo.area_scan.tau", a.tau)?;
            if !(a.max_duration > a.min_duration) || a.points < 5 {
                return Err(Error::invalid("echo.area_scan", "need max_duration > min_duration and ≥ 5 points"));
            }
        }
        if let Some(b) = &self.bistability {
            b.validate()?;
        }
        if let Some(h) = &self.heating {
            h.validate()?;
        }
        for (i, x) in self.expect.iter().enumerate() {
            if !x.value.is_finite() {
                return Err(Error::invalid(format!("expect[{i}].value"), "must be finite"));
            }
            unit_interval(&format!("expect[{i}].rel_tol"), x.rel_tol)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parses a configuration without validating it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}
