//! Cavity-QED rates and critical numbers.
//!
//! Two independent routes to the single-photon coupling g are provided: echo
//! calibration (Rabi frequency over intracavity photon number) and the
//! dipole/mode-volume formula.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::constants::{EPSILON_0, HBAR, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::model::{AngularRate, CavityQedParams};

/// Stored-energy convention used by [`intracavity_photon_number`].
pub const PHOTON_NUMBER_CONVENTION: &str =
    "U = eta*P*Q/(2*omega), n_ph = U/(hbar*omega); the U = eta*P*Q/omega alternative would double n_ph";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMethod {
    EchoCalibration,
    DipoleModeVolume,
    BistabilityFit,
}

/// A coupling value together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    pub g: AngularRate,
    pub method: CouplingMethod,
    /// Raw inputs, SI units, keyed by name.
    pub inputs: BTreeMap<String, f64>,
}

fn require_positive(op: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::pre(op, format!("{name} must be finite and > 0, got {v}")))
    }
}

/// Angular frequency 2πc/λ of light with vacuum wavelength `wavelength`.
pub fn optical_angular_frequency(wavelength: f64) -> AngularRate {
    AngularRate(TAU * SPEED_OF_LIGHT / wavelength)
}

/// Cavity field decay rate κ = πc/(λQ).
pub fn kappa_from_q(wavelength: f64, q: f64) -> Result<AngularRate> {
    require_positive("kappa_from_q", "wavelength", wavelength)?;
    require_positive("kappa_from_q", "Q", q)?;
    Ok(AngularRate(PI * SPEED_OF_LIGHT / (wavelength * q)))
}

/// Atomic decay rates (γ, γ_h) = (1/T₁, 1/T₂).
pub fn decay_rates(t1: f64, t2: f64) -> Result<(AngularRate, AngularRate)> {
    require_positive("decay_rates", "T1", t1)?;
    require_positive("decay_rates", "T2", t2)?;
    if t2 > 2.0 * t1 {
        return Err(Error::pre("decay_rates", format!("T2 ≤ 2·T1 violated (T1 = {t1:e} s, T2 = {t2:e} s)")));
    }
    Ok((AngularRate(1.0 / t1), AngularRate(1.0 / t2)))
}

/// Rabi frequency Ω = Θ/τ from a pulse of area Θ (rad) and duration τ (s).
pub fn rabi_from_pulse(area: f64, duration: f64) -> Result<AngularRate> {
    require_positive("rabi_from_pulse", "area", area)?;
    require_positive("rabi_from_pulse", "duration", duration)?;
    Ok(AngularRate(area / duration))
}

/// Mean intracavity photon number for a coupled input power.
///
/// See [`PHOTON_NUMBER_CONVENTION`] for the stored-energy convention.
pub fn intracavity_photon_number(power: f64, coupling: f64, q: f64, wavelength: f64) -> Result<f64> {
    const OP: &str = "intracavity_photon_number";
    require_positive(OP, "power", power)?;
    require_positive(OP, "Q", q)?;
    require_positive(OP, "wavelength", wavelength)?;
    if !(0.0..=1.0).contains(&coupling) {
        return Err(Error::pre(OP, format!("coupling must lie in [0, 1], got {coupling}")));
    }
    let omega = optical_angular_frequency(wavelength).0;
    let stored_energy = coupling * power * q / (2.0 * omega);
    Ok(stored_energy / (HBAR * omega))
}

/// g = Ω/(2√n_ph).
pub fn g_from_echo(rabi: AngularRate, photon_number: f64) -> Result<CouplingEstimate> {
    require_positive("g_from_echo", "rabi", rabi.0)?;
    require_positive("g_from_echo", "photon_number", photon_number)?;
    let g = rabi.0 / (2.0 * photon_number.sqrt());
    let inputs = BTreeMap::from([("rabi".to_string(), rabi.0), ("photon_number".to_string(), photon_number)]);
    Ok(CouplingEstimate { g: AngularRate(g), method: CouplingMethod::EchoCalibration, inputs })
}

/// g = (μ/n_r)·√(ω_a/(2ħε₀V)).
pub fn g_from_dipole(dipole: f64, refractive_index: f64, omega_a: AngularRate, volume: f64) -> Result<CouplingEstimate> {
    const OP: &str = "g_from_dipole";
    require_positive(OP, "dipole", dipole)?;
    require_positive(OP, "refractive_index", refractive_index)?;
    require_positive(OP, "omega_a", omega_a.0)?;
    require_positive(OP, "volume", volume)?;
    let g = dipole / refractive_index * (omega_a.0 / (2.0 * HBAR * EPSILON_0 * volume)).sqrt();
    let inputs = BTreeMap::from([
        ("dipole_moment".to_string(), dipole),
        ("refractive_index".to_string(), refractive_index),
        ("omega_a".to_string(), omega_a.0),
        ("mode_volume".to_string(), volume),
    ]);
    Ok(CouplingEstimate { g: AngularRate(g), method: CouplingMethod::DipoleModeVolume, inputs })
}

/// Inverse of [`g_from_dipole`]: the dipole moment that yields coupling `g`.
pub fn dipole_from_g(g: AngularRate, refractive_index: f64, omega_a: AngularRate, volume: f64) -> Result<f64> {
    const OP: &str = "dipole_from_g";
    require_positive(OP, "g", g.0)?;
    require_positive(OP, "refractive_index", refractive_index)?;
    require_positive(OP, "omega_a", omega_a.0)?;
    require_positive(OP, "volume", volume)?;
    Ok(g.0 * refractive_index / (omega_a.0 / (2.0 * HBAR * EPSILON_0 * volume)).sqrt())
}

/// Critical atom number and saturation photon number, (N₀, n₀).
pub fn critical_numbers(
    g: AngularRate,
    kappa: AngularRate,
    gamma: AngularRate,
    gamma_h: AngularRate,
) -> Result<(f64, f64)> {
    const OP: &str = "critical_numbers";
    require_positive(OP, "g", g.0)?;
    require_positive(OP, "kappa", kappa.0)?;
    require_positive(OP, "gamma", gamma.0)?;
    require_positive(OP, "gamma_h", gamma_h.0)?;
    let g2 = g.0 * g.0;
    Ok((2.0 * gamma_h.0 * kappa.0 / g2, gamma.0 * gamma_h.0 / (4.0 * g2)))
}

/// Regime classification of a parameter set. Comparisons are done on the
/// unrounded floating-point values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongCouplingReport {
    pub n0: f64,
    pub big_n0: f64,
    /// g²/κ, rad/s.
    pub g2_over_kappa: f64,
    pub gamma: f64,
    pub n0_below_one: bool,
    pub big_n0_below_one: bool,
    pub bad_cavity_strong: bool,
}

impl StrongCouplingReport {
    pub fn all_true(&self) -> bool {
        self.n0_below_one && self.big_n0_below_one && self.bad_cavity_strong
    }
}

pub fn strong_coupling_report(params: &CavityQedParams) -> StrongCouplingReport {
    let g2_over_kappa = params.g.0 * params.g.0 / params.kappa.0;
    StrongCouplingReport {
        n0: params.n0,
        big_n0: params.big_n0,
        g2_over_kappa,
        gamma: params.gamma.0,
        n0_below_one: params.n0 < 1.0,
        big_n0_below_one: params.big_n0 < 1.0,
        bad_cavity_strong: g2_over_kappa > params.gamma.0,
    }
}
