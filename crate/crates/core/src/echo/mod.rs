//! Photon-echo simulation for an inhomogeneously broadened two-level ensemble.
//!
//! The ensemble is a set of discrete detuning classes on deterministic
//! quantile nodes. Pulses are hard rotations applied at their centres, free
//! evolution between them is analytic, and the emitted field is the
//! weight-ordered sum of the class coherences. Echo signals are extracted with
//! phase cycling so that only the wanted coherence pathway survives the sum
//! over a finite set of classes.

mod bloch;
mod detect;
mod sequences;

pub use bloch::{propagate_bloch, BlochTrajectories};
pub use detect::{detect, DetectorGains, FieldTrace};
pub use sequences::{
    accumulated_echo_sweep, echo_area_scan, simulate_accumulated_echo, simulate_three_pulse_echo,
    simulate_two_pulse_echo, three_pulse_echo_sweep, two_pulse_echo_sweep, AreaScan, EchoRun, HoleComponent,
    SequenceKind, SequenceTemplate,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{AngularRate, Detection};

/// Default inhomogeneous FWHM, 2π×5 GHz.
pub const DEFAULT_INHOMOGENEOUS_FWHM_HZ: f64 = 5e9;
/// Default heterodyne LO offset, 2π×45 MHz.
pub const DEFAULT_LO_OFFSET_HZ: f64 = 45e6;
/// Hard pulses are considered valid when Ω exceeds the width by this factor.
pub const HARD_PULSE_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineShape {
    #[default]
    Gaussian,
    Lorentzian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// FWHM of the detuning distribution.
    pub inhomogeneous_width: AngularRate,
    #[serde(default)]
    pub distribution: LineShape,
    pub n_classes: usize,
    /// s; `f64::INFINITY` disables population decay.
    pub t1: f64,
    /// s; `f64::INFINITY` disables dephasing.
    pub t2: f64,
}

impl EnsembleSpec {
    pub fn new(t1: f64, t2: f64) -> Self {
        EnsembleSpec {
            inhomogeneous_width: AngularRate::from_hz(DEFAULT_INHOMOGENEOUS_FWHM_HZ),
            distribution: LineShape::Gaussian,
            n_classes: 2001,
            t1,
            t2,
        }
    }

    pub fn without_decay(mut self) -> Self {
        self.t1 = f64::INFINITY;
        self.t2 = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 3 {
            return Err(Error::invalid("ensemble.n_classes", "must be ≥ 3"));
        }
        crate::model::positive("ensemble.inhomogeneous_width", self.inhomogeneous_width.0)?;
        for (name, v) in [("ensemble.t1", self.t1), ("ensemble.t2", self.t2)] {
            if !(v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::invalid("ensemble.t2", "violates T2 ≤ 2·T1"));
        }
        Ok(())
    }

    /// Detuning nodes (rad/s) at the quantile midpoints (i + ½)/n of the line
    /// shape, each carrying weight 1/n.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_classes;
        let w = self.inhomogeneous_width.0;
        let sigma = w / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let normal = Normal::new(0.0, sigma).expect("validated width");
        let det = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                match self.distribution {
                    LineShape::Gaussian => normal.inverse_cdf(p),
                    LineShape::Lorentzian => 0.5 * w * (std::f64::consts::PI * (p - 0.5)).tan(),
                    LineShape::Uniform => w * (p - 0.5),
                }
            })
            .collect();
        (det, vec![1.0 / n as f64; n])
    }

    /// Approximate FWHM of the free-induction / echo envelope, s.
    pub fn echo_duration(&self) -> f64 {
        8.0 * std::f64::consts::LN_2 / self.inhomogeneous_width.0
    }

    fn decay_rates(&self) -> (f64, f64) {
        (1.0 / self.t1, 1.0 / self.t2)
    }
}

/// Outcome of the hard-pulse validity check for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardPulseCheck {
    pub min_rabi: f64,
    pub inhomogeneous_width: f64,
    pub valid: bool,
}

impl HardPulseCheck {
    pub fn new(min_rabi: f64, width: f64) -> Self {
        HardPulseCheck { min_rabi, inhomogeneous_width: width, valid: min_rabi >= HARD_PULSE_MARGIN * width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoOptions {
    pub detection: Detection,
    pub lo_offset: AngularRate,
    pub gains: DetectorGains,
    /// Rabi frequency of the drive; pulse durations are area/Ω.
    pub rabi: AngularRate,
    /// Multiplies every pulse area (intracavity enhancement), default 1.
    pub area_scale: f64,
    pub exec: Execution,
}

impl Default for EchoOptions {
    fn default() -> Self {
        EchoOptions {
            detection: Detection::Heterodyne,
            lo_offset: AngularRate::from_hz(DEFAULT_LO_OFFSET_HZ),
            gains: DetectorGains::default(),
            rabi: AngularRate(9.82e6),
            area_scale: 1.0,
            exec: Execution::default(),
        }
    }
}
