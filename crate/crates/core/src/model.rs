//! Domain types shared across the crate.
//!
//! All rates are angular frequencies in rad/s and all times are seconds.
//! The "over 2π" form is only produced at I/O boundaries.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::SPEED_OF_LIGHT;
use crate::error::{Error, Result};

/// An angular frequency in rad/s. Decay rates and couplings are non-negative,
/// detunings may carry a sign.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngularRate(pub f64);

impl AngularRate {
    pub const ZERO: AngularRate = AngularRate(0.0);

    pub fn new(rad_per_s: f64) -> Self {
        AngularRate(rad_per_s)
    }

    /// Builds the rate 2π·`hz`.
    pub fn from_hz(hz: f64) -> Self {
        AngularRate(TAU * hz)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Ordinary frequency in Hz, i.e. value/(2π).
    pub fn over_2pi(self) -> f64 {
        to_over_2pi(self)
    }
}

impl fmt::Display for AngularRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "2π×{:.6e} Hz", self.over_2pi())
    }
}

/// Converts an angular rate to ordinary frequency in Hz.
pub fn to_over_2pi(r: AngularRate) -> f64 {
    r.0 / TAU
}

/// Optical transition parameters of the dopant ion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSpecies {
    pub label: String,
    /// Vacuum wavelength of the transition, m.
    pub transition_wavelength: f64,
    /// Transition dipole moment, C·m.
    pub dipole_moment: f64,
    /// Population lifetime, s.
    pub t1: f64,
    /// Optical coherence time, s.
    pub t2: f64,
    /// Spectral-hole lifetimes, s.
    #[serde(default)]
    pub hole_lifetimes: Vec<f64>,
}

impl IonSpecies {
    /// Transition angular frequency ω_a = 2πc/λ.
    pub fn transition_frequency(&self) -> AngularRate {
        AngularRate(TAU * SPEED_OF_LIGHT / self.transition_wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        positive("ion.transition_wavelength", self.transition_wavelength)?;
        positive("ion.dipole_moment", self.dipole_moment)?;
        positive("ion.t1", self.t1)?;
        positive("ion.t2", self.t2)?;
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::invalid(
                "ion.t2",
                format!("T2 ≤ 2·T1 violated (T2 = {:e} s, T1 = {:e} s)", self.t2, self.t1),
            ));
        }
        for (i, &th) in self.hole_lifetimes.iter().enumerate() {
            positive(&format!("ion.hole_lifetimes[{i}]"), th)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResonatorShape {
    #[default]
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Polarization {
    #[default]
    TE,
    TM,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::TE => f.write_str("TE"),
            Polarization::TM => f.write_str("TM"),
        }
    }
}

/// Geometry and optical properties of the whispering-gallery resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorSpec {
    /// Radius, m.
    pub radius: f64,
    pub refractive_index: f64,
    pub quality_factor: f64,
    #[serde(default)]
    pub shape: ResonatorShape,
    /// Fraction of the input power coupled into the mode.
    pub coupling_efficiency: f64,
    #[serde(default)]
    pub polarization: Polarization,
}

impl ResonatorSpec {
    pub fn validate(&self) -> Result<()> {
        positive("resonator.radius", self.radius)?;
        if !(self.refractive_index > 1.0) || !self.refractive_index.is_finite() {
            return Err(Error::invalid(
                "resonator.refractive_index",
                format!("must be > 1, got {}", self.refractive_index),
            ));
        }
        positive("resonator.quality_factor", self.quality_factor)?;
        unit_interval("resonator.coupling_efficiency (η)", self.coupling_efficiency)
    }
}

/// The cavity-QED rate set and its critical numbers.
///
/// Only constructible through [`CavityQedParams::new`], which fills `n0` and
/// `big_n0` from the rates so the defining relations always hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityQedParams {
    pub g: AngularRate,
    pub kappa: AngularRate,
    pub gamma: AngularRate,
    pub gamma_h: AngularRate,
    /// Critical atom number N₀ = 2γ_hκ/g².
    pub big_n0: f64,
    /// Saturation photon number n₀ = γγ_h/(4g²).
    pub n0: f64,
}

impl CavityQedParams {
    pub fn new(g: AngularRate, kappa: AngularRate, gamma: AngularRate, gamma_h: AngularRate) -> Result<Self> {
        let (big_n0, n0) = crate::cqed::critical_numbers(g, kappa, gamma, gamma_h)?;
        Ok(CavityQedParams { g, kappa, gamma, gamma_h, big_n0, n0 })
    }
}

/// A single hard optical pulse. `start` and `duration` place it in time; the
/// rotation it applies is set by `area` and `phase`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: f64,
    pub duration: f64,
    /// Pulse area Θ = Ωτ, rad.
    pub area: f64,
    #[serde(default)]
    pub carrier_detuning: AngularRate,
    /// Rotation-axis phase in the u–v plane, rad.
    #[serde(default)]
    pub phase: f64,
}

impl Pulse {
    /// A pulse of the given area centred on `center`, with duration area/Ω.
    pub fn centered(center: f64, area: f64, rabi: AngularRate) -> Self {
        let duration = area.abs() / rabi.0;
        Pulse {
            start: center - 0.5 * duration,
            duration,
            area,
            carrier_detuning: AngularRate::ZERO,
            phase: 0.0,
        }
    }

    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.duration
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Rabi frequency implied by area and duration.
    pub fn rabi(&self) -> AngularRate {
        AngularRate(self.area / self.duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Heterodyne,
    Direct,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detection::Heterodyne => f.write_str("heterodyne"),
            Detection::Direct => f.write_str("direct"),
        }
    }
}

/// A sampled detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoTrace {
    pub times: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    pub detection: Detection,
    /// Local-oscillator offset; present iff `detection` is heterodyne.
    pub lo_offset: Option<AngularRate>,
}

impl EchoTrace {
    pub fn new(
        times: Vec<f64>,
        amplitudes: Vec<Complex64>,
        detection: Detection,
        lo_offset: Option<AngularRate>,
    ) -> Result<Self> {
        if times.len() != amplitudes.len() {
            return Err(Error::invalid("trace", "times and amplitudes differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trace.times", "must be strictly increasing"));
        }
        match detection {
            Detection::Direct => {
                if amplitudes.iter().any(|a| a.im != 0.0 || a.re < 0.0) {
                    return Err(Error::invalid(
                        "trace.amplitudes",
                        "direct-detection samples must be real and non-negative",
                    ));
                }
                if lo_offset.is_some() {
                    return Err(Error::invalid("trace.lo_offset", "only meaningful for heterodyne"));
                }
            }
            Detection::Heterodyne => match lo_offset {
                Some(lo) if lo.0 > 0.0 => {}
                _ => return Err(Error::invalid("trace.lo_offset", "heterodyne requires lo_offset > 0")),
            },
        }
        Ok(EchoTrace { times, amplitudes, detection, lo_offset })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Envelope magnitude per sample (|a| for heterodyne, the intensity for direct).
    pub fn envelope(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm()).collect()
    }

    /// Largest envelope value and the time at which it occurs.
    pub fn peak(&self) -> (f64, f64) {
        self.amplitudes
            .iter()
            .zip(&self.times)
            .map(|(a, &t)| (t, a.norm()))
            .fold((f64::NAN, 0.0), |best, (t, v)| if v > best.1 { (t, v) } else { best })
    }

    /// Intensity-weighted centroid time of the envelope.
    pub fn centroid(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (a, &t) in self.amplitudes.iter().zip(&self.times) {
            let w = a.norm_sqr();
            num += w * t;
            den += w;
        }
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    Forward,
    Reverse,
}

impl fmt::Display for SweepDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepDirection::Forward => f.write_str("forward"),
            SweepDirection::Reverse => f.write_str("reverse"),
        }
    }
}

/// A laser-detuning scan of the cavity transmission.
///
/// `laser_detunings` are ω_l − ω_c in rad/s, monotone in the sweep direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrace {
    pub laser_detunings: Vec<f64>,
    pub transmission: Vec<f64>,
    pub direction: SweepDirection,
    /// Number of steady-state roots at each sample.
    pub branch_count: Vec<u8>,
}

impl SweepTrace {
    pub fn new(
        laser_detunings: Vec<f64>,
        transmission: Vec<f64>,
        direction: SweepDirection,
        branch_count: Vec<u8>,
    ) -> Result<Self> {
        let n = laser_detunings.len();
        if transmission.len() != n || branch_count.len() != n {
            return Err(Error::invalid("sweep", "column lengths differ"));
        }
        let monotone = laser_detunings.windows(2).all(|w| match direction {
            SweepDirection::Forward => w[1] > w[0],
            SweepDirection::Reverse => w[1] < w[0],
        });
        if !monotone {
            return Err(Error::invalid("sweep.laser_detunings", "not monotone in the sweep direction"));
        }
        if transmission.iter().any(|&t| !(-1e-12..=1.0 + 1e-12).contains(&t)) {
            return Err(Error::invalid("sweep.transmission", "outside [0, 1]"));
        }
        Ok(SweepTrace { laser_detunings, transmission, direction, branch_count })
    }

    pub fn len(&self) -> usize {
        self.laser_detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laser_detunings.is_empty()
    }

    /// Linear interpolation of the transmission at detuning `x`.
    pub fn transmission_at(&self, x: f64) -> f64 {
        interp_monotone(&self.laser_detunings, &self.transmission, x)
    }
}

/// Linear interpolation over an x-grid monotone in either direction.
fn interp_monotone(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return ys[0];
    }
    let increasing = xs[n - 1] > xs[0];
    let key = |v: f64| if increasing { v } else { -v };
    let kx = key(x);
    let idx = xs.partition_point(|&v| key(v) < kx);
    if idx == 0 {
        return ys[0];
    }
    if idx >= n {
        return ys[n - 1];
    }
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let f = (x - x0) / (x1 - x0);
    ys[idx - 1] + f * (ys[idx] - ys[idx - 1])
}

pub(crate) fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

pub(crate) fn unit_interval(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

/// Pulse area of a π pulse, as a named constant for readability at call sites.
pub const PI_PULSE: f64 = PI;
