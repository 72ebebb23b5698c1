//! Fundamental whispering-gallery modes of a dielectric sphere.
//!
//! Resonances come from the exact characteristic equation (spherical wave
//! functions matched at the surface) up to [`EXACT_SIZE_LIMIT`], and from the
//! large-order Airy-type expansion above it. The exterior solution is the
//! Riccati–Neumann function, i.e. the bound-state (real-frequency) form of the
//! problem; radiation leakage is neglected, which is exact to far better than
//! double precision for the mode orders handled here.

pub mod airy;
pub mod bessel;
mod volume;

use serde::{Deserialize, Serialize};

use crate::constants::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::model::{Polarization, ResonatorSpec};
use crate::roots::brent;

pub use volume::{asymptotic_mode_volume, mode_volume, peak_field_per_photon, sample_profile, ModeVolumeMethod, ModeVolumeResult};

use airy::AIRY_ZERO_1;
use bessel::{chi_log_derivative, psi_log_derivative};

/// Largest size parameter 2πR·n_r/λ solved with the exact characteristic
/// equation; larger spheres use the asymptotic branch.
pub const EXACT_SIZE_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeBranch {
    Exact,
    Asymptotic,
}

/// Sampled ε|E|² of a mode. Radial samples are taken in the equatorial plane,
/// polar samples at the radius of the field maximum; both are normalised to a
/// peak of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProfile {
    pub radial: Vec<(f64, f64)>,
    pub polar: Vec<(f64, f64)>,
    pub radial_intervals: usize,
    pub polar_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WgmMode {
    /// Polar index l.
    pub l: u32,
    /// Azimuthal index m (= l for the fundamental mode).
    pub m: i64,
    /// Radial index q (= 1 for the fundamental mode).
    pub q: u32,
    pub polarization: Polarization,
    /// Vacuum resonance wavelength, m.
    pub resonance_wavelength: f64,
    /// Vacuum size parameter kR at resonance.
    pub size_parameter: f64,
    pub radius: f64,
    pub refractive_index: f64,
    pub branch: ModeBranch,
    /// |characteristic function| at the reported root (exact branch only).
    pub residual: Option<f64>,
    pub field_profile: FieldProfile,
}

impl WgmMode {
    pub fn angular_frequency(&self) -> f64 {
        2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / self.resonance_wavelength
    }
}

fn pol_factor(pol: Polarization, n: f64) -> f64 {
    match pol {
        Polarization::TE => n,
        Polarization::TM => 1.0 / n,
    }
}

/// Surface-matching function P·ψ_l'(nx)/ψ_l(nx) − χ_l'(x)/χ_l(x), zero at
/// resonance. `x` is the vacuum size parameter kR.
pub fn characteristic(l: u32, pol: Polarization, n: f64, x: f64) -> f64 {
    pol_factor(pol, n) * psi_log_derivative(l, n * x) - chi_log_derivative(l, x)
}

/// Large-order expansion of the q = 1 resonance, returning kR.
pub fn asymptotic_size_parameter(l: u32, pol: Polarization, n: f64) -> f64 {
    let nu = l as f64 + 0.5;
    let p = pol_factor(pol, n);
    let a = AIRY_ZERO_1;
    let m2 = n * n - 1.0;
    let c13 = 2f64.powf(-1.0 / 3.0);
    let nx = nu + c13 * a * nu.cbrt() - p / m2.sqrt() + 0.3 * c13 * c13 * a * a / nu.cbrt()
        - c13 * p * (n * n - 2.0 * p * p / 3.0) / m2.powf(1.5) * a / nu.powf(2.0 / 3.0);
    nx / n
}

/// Solves the exact characteristic equation for the q = 1 root of order `l`.
/// Returns (kR, residual).
pub fn exact_size_parameter(l: u32, pol: Polarization, n: f64) -> Result<(f64, f64)> {
    if l < 2 {
        return Err(Error::Bracketing(format!("order l = {l} too low for a whispering-gallery bracket")));
    }
    let nu = l as f64 + 0.5;
    let airy_unit = (nu / 2.0).cbrt();
    let f = |x: f64| characteristic(l, pol, n, x);
    // Start inside the evanescent zone (Airy argument ≈ +1.5), where F > 0,
    // and march outward to the first sign change, which precedes the first
    // zero of ψ_l.
    let mut x_prev = ((nu - 1.5 * airy_unit) / n).max(1e-3);
    let mut f_prev = f(x_prev);
    if !(f_prev > 0.0) {
        return Err(Error::Bracketing(format!(
            "l = {l}: characteristic function not positive at start x = {x_prev:e} (F = {f_prev:e})"
        )));
    }
    let dx = 0.02 * airy_unit / n;
    for _ in 0..2000 {
        let x = x_prev + dx;
        let fx = f(x);
        if fx < 0.0 {
            let root = brent(&f, x_prev, x, 1e-15 * x, 200)?;
            return Ok((root, f(root).abs()));
        }
        if !fx.is_finite() {
            break;
        }
        x_prev = x;
        f_prev = fx;
    }
    Err(Error::Bracketing(format!(
        "l = {l}: no sign change found up to x = {x_prev:e} (last F = {f_prev:e})"
    )))
}

/// Finds the fundamental (q = 1, m = l) mode whose resonance is nearest
/// `target_wavelength`.
pub fn find_fundamental_mode(
    spec: &ResonatorSpec,
    target_wavelength: f64,
    pol: Polarization,
    exec: Execution,
) -> Result<WgmMode> {
    spec.validate()?;
    if !(target_wavelength > 0.0) {
        return Err(Error::pre("find_fundamental_mode", "target wavelength must be > 0"));
    }
    let n = spec.refractive_index;
    let size = 2.0 * std::f64::consts::PI * spec.radius * n / target_wavelength;
    let p = pol_factor(pol, n);
    // Invert the leading-order expansion for ν.
    let mut nu = size;
    for _ in 0..50 {
        nu = size - AIRY_ZERO_1 * (nu.max(1.0) / 2.0).cbrt() + p / (n * n - 1.0).sqrt();
    }
    let l0 = (nu - 0.5).round();
    if l0 < 2.0 {
        return Err(Error::NoResonance(format!(
            "size parameter {size:.3} too small for a whispering-gallery mode"
        )));
    }
    let l0 = l0 as u32;
    let candidates: Vec<u32> = (l0.saturating_sub(2)..=l0 + 2).filter(|&l| l >= 2).collect();
    let branch = if size <= EXACT_SIZE_LIMIT { ModeBranch::Exact } else { ModeBranch::Asymptotic };

    let solved = map_slice(exec, &candidates, |&l| -> Result<(u32, f64, Option<f64>)> {
        match branch {
            ModeBranch::Exact => exact_size_parameter(l, pol, n).map(|(x, r)| (l, x, Some(r))),
            ModeBranch::Asymptotic => Ok((l, asymptotic_size_parameter(l, pol, n), None)),
        }
    });
    let mut best: Option<(u32, f64, Option<f64>)> = None;
    for s in solved {
        let s = s?;
        let lam = 2.0 * std::f64::consts::PI * spec.radius / s.1;
        let better = match best {
            None => true,
            Some(b) => {
                let lb = 2.0 * std::f64::consts::PI * spec.radius / b.1;
                (lam - target_wavelength).abs() < (lb - target_wavelength).abs()
            }
        };
        if better {
            best = Some(s);
        }
    }
    let (l, x, residual) = best.ok_or_else(|| Error::NoResonance("no candidate orders".into()))?;
    let resonance_wavelength = 2.0 * std::f64::consts::PI * spec.radius / x;
    if (resonance_wavelength - target_wavelength).abs() > 0.01 * target_wavelength {
        return Err(Error::NoResonance(format!(
            "nearest resonance {resonance_wavelength:e} m (l = {l}) is more than 1% from {target_wavelength:e} m"
        )));
    }
    let mut mode = WgmMode {
        l,
        m: l as i64,
        q: 1,
        polarization: pol,
        resonance_wavelength,
        size_parameter: x,
        radius: spec.radius,
        refractive_index: n,
        branch,
        residual,
        field_profile: FieldProfile { radial: vec![], polar: vec![], radial_intervals: 0, polar_intervals: 0 },
    };
    mode.field_profile = sample_profile(&mode, volume::BASE_RADIAL_INTERVALS, volume::BASE_POLAR_INTERVALS, exec);
    Ok(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(radius: f64) -> ResonatorSpec {
        ResonatorSpec {
            radius,
            refractive_index: 1.8,
            quality_factor: 1e6,
            shape: Default::default(),
            coupling_efficiency: 0.5,
            polarization: Polarization::TE,
        }
    }

    #[test]
    fn exact_root_residual_is_tiny() {
        for &l in &[20u32, 120, 300, 480] {
            for pol in [Polarization::TE, Polarization::TM] {
                let (x, res) = exact_size_parameter(l, pol, 1.8).unwrap();
                assert!(res < 1e-8, "l={l} {pol}: residual {res:e}");
                assert!(x > 0.0);
            }
        }
    }

    #[test]
    fn asymptotic_tracks_exact_at_large_order() {
        for &l in &[200u32, 400] {
            for pol in [Polarization::TE, Polarization::TM] {
                let (x, _) = exact_size_parameter(l, pol, 1.8).unwrap();
                let xa = asymptotic_size_parameter(l, pol, 1.8);
                // next term is O(ν^{-1}) in n·x
                assert!((x - xa).abs() * 1.8 < 0.05, "l={l} {pol}: exact {x} asym {xa}");
            }
        }
    }

    #[test]
    fn small_sphere_uses_exact_branch() {
        let m = find_fundamental_mode(&sphere(10e-6), 0.6e-6, Polarization::TE, Execution::Sequential).unwrap();
        assert_eq!(m.branch, ModeBranch::Exact);
        // geometric-optics oracle: l ≈ 2πRn/λ minus the Airy shift
        let geometric = 2.0 * std::f64::consts::PI * 10e-6 * 1.8 / 0.6e-6;
        assert!((m.l as f64) < geometric && (m.l as f64) > geometric - 20.0, "l = {}", m.l);
        assert!((m.resonance_wavelength - 0.6e-6).abs() < 0.01 * 0.6e-6);
        assert!(m.residual.unwrap() < 1e-8);
    }

    #[test]
    fn millimetre_sphere_uses_asymptotic_branch() {
        let m = find_fundamental_mode(&sphere(1.95e-3), 605.977e-9, Polarization::TE, Execution::Sequential).unwrap();
        assert_eq!(m.branch, ModeBranch::Asymptotic);
        let geometric = 2.0 * std::f64::consts::PI * 1.95e-3 * 1.8 / 605.977e-9;
        assert!((m.l as f64 - geometric).abs() / geometric < 0.01);
        assert!(m.l > 30_000 && m.l < 40_000);
    }

    #[test]
    fn doubling_radius_doubles_wavelength_at_fixed_l() {
        let (x, _) = exact_size_parameter(150, Polarization::TE, 1.8).unwrap();
        let lam1 = 2.0 * std::f64::consts::PI * 10e-6 / x;
        let lam2 = 2.0 * std::f64::consts::PI * 20e-6 / x;
        assert!((lam2 / lam1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn too_small_sphere_is_rejected() {
        let err = find_fundamental_mode(&sphere(50e-9), 600e-9, Polarization::TE, Execution::Sequential);
        assert!(matches!(err, Err(Error::NoResonance(_))));
    }
}
