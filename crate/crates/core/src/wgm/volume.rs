//! Mode volume V = ∫ε|E|²d³r / max(ε|E|²).
//!
//! Exact branch: composite Simpson quadrature on separate interior and
//! exterior radial grids (the surface is always a node, so the ε jump never
//! sits inside a panel) and on a polar grid centred on the equator. Grids are
//! doubled until successive volumes agree to [`REFINEMENT_TOLERANCE`]; the last
//! relative change is reported as the error estimate.
//!
//! Asymptotic branch: the radial field is the Airy function of the linearised
//! turning-point problem with an exponential exterior tail, the polar factor
//! is integrated in closed form.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::airy::{ai_prime_squared_tail, ai_squared_tail, airy_ai, AIRY_MAX_LOCATION, AIRY_ZERO_1};
use super::bessel::{riccati_chi_log, riccati_psi};
use super::{FieldProfile, ModeBranch, WgmMode};
use crate::constants::{EPSILON_0, HBAR};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::Polarization;
use crate::roots::golden_max;

pub(crate) const BASE_RADIAL_INTERVALS: usize = 256;
pub(crate) const BASE_POLAR_INTERVALS: usize = 256;
/// Successive refinements must agree to this relative level.
pub const REFINEMENT_TOLERANCE: f64 = 1e-3;
const MAX_REFINEMENTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeVolumeMethod {
    ExactSmallL,
    AsymptoticLargeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeVolumeResult {
    /// m³
    pub volume: f64,
    pub method: ModeVolumeMethod,
    pub estimated_relative_error: f64,
}

/// Peak single-photon field √(ħω/(2ε₀n²V)), V/m.
pub fn peak_field_per_photon(omega: f64, refractive_index: f64, volume: f64) -> Result<f64> {
    if !(volume > 0.0) || !(omega > 0.0) || !(refractive_index > 0.0) {
        return Err(Error::pre("peak_field_per_photon", "omega, refractive index and volume must be > 0"));
    }
    Ok((HBAR * omega / (2.0 * EPSILON_0 * refractive_index * refractive_index * volume)).sqrt())
}

pub fn mode_volume(mode: &WgmMode, exec: Execution) -> Result<ModeVolumeResult> {
    match mode.branch {
        ModeBranch::Exact => exact_volume(mode, exec),
        ModeBranch::Asymptotic => {
            let (volume, err) = asymptotic_volume(mode);
            Ok(ModeVolumeResult { volume, method: ModeVolumeMethod::AsymptoticLargeL, estimated_relative_error: err })
        }
    }
}

/// Asymptotic-branch volume of an arbitrary mode (used to compare branches).
pub fn asymptotic_mode_volume(mode: &WgmMode) -> ModeVolumeResult {
    let (volume, err) = asymptotic_volume(mode);
    ModeVolumeResult { volume, method: ModeVolumeMethod::AsymptoticLargeL, estimated_relative_error: err }
}

/// ∫_0^π sin^p θ dθ for odd p.
fn sin_power_integral_odd(p: u32) -> f64 {
    debug_assert!(p % 2 == 1);
    let mut v = 2.0;
    let mut k = 1;
    while k < p {
        v *= (k + 1) as f64 / (k + 2) as f64;
        k += 2;
    }
    v
}

/// Polar weights: Θ₁ = ∫sin^{2l}θ·sinθ dθ (radial-E factor) and
/// Θ₂ = ∫sin^{2l−2}θ(1+cos²θ)·sinθ dθ (tangential factor), both with peak 1.
fn polar_integrals_closed(l: u32) -> (f64, f64) {
    let i_lo = sin_power_integral_odd(2 * l - 1);
    let theta1 = i_lo * (2 * l) as f64 / (2 * l + 1) as f64;
    let theta2 = i_lo * (2 * l + 2) as f64 / (2 * l + 1) as f64;
    (theta1, theta2)
}

fn tangential_factor(l: u32, theta: f64) -> f64 {
    let s = theta.sin();
    let c = theta.cos();
    ((2 * l - 2) as f64 * s.ln()).exp() * (1.0 + c * c)
}

fn radial_e_factor(l: u32, theta: f64) -> f64 {
    ((2 * l) as f64 * theta.sin().ln()).exp()
}

fn polar_half_width(l: u32) -> f64 {
    (12.0 / (l as f64).sqrt()).min(FRAC_PI_2)
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n.is_multiple_of(2));
    let mut s = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Radial mode function u(r) (rψ-type) for the exact branch.
struct RadialField {
    l: u32,
    pol: Polarization,
    n: f64,
    k: f64,
    radius: f64,
    psi_surface: f64,
    ln_chi_surface: f64,
    sign_chi_surface: f64,
}

impl RadialField {
    fn new(mode: &WgmMode) -> Self {
        let k = mode.size_parameter / mode.radius;
        let n = mode.refractive_index;
        let (psi_surface, _) = riccati_psi(mode.l, n * mode.size_parameter);
        let (ln_chi_surface, sign_chi_surface, _) = riccati_chi_log(mode.l, mode.size_parameter);
        RadialField { l: mode.l, pol: mode.polarization, n, k, radius: mode.radius, psi_surface, ln_chi_surface, sign_chi_surface }
    }

    fn eps(&self, r: f64) -> f64 {
        if r <= self.radius { self.n * self.n } else { 1.0 }
    }

    /// (u, du/dr)
    fn u(&self, r: f64) -> (f64, f64) {
        if r <= self.radius {
            let (psi, dpsi) = riccati_psi(self.l, self.n * self.k * r);
            (psi, self.n * self.k * dpsi)
        } else {
            let (ln_chi, sign, dlog) = riccati_chi_log(self.l, self.k * r);
            let u = self.psi_surface * sign * self.sign_chi_surface * (ln_chi - self.ln_chi_surface).exp();
            (u, u * self.k * dlog)
        }
    }

    /// Integrands per dr: (radial-E part, tangential part), already including
    /// ε and the r² Jacobian.
    fn integrands(&self, r: f64) -> (f64, f64) {
        let (u, du) = self.u(r);
        let eps = self.eps(r);
        let l = self.l as f64;
        match self.pol {
            Polarization::TE => (0.0, eps * u * u),
            Polarization::TM => (l * (l + 1.0) * (u / r) * (u / r) / eps, l / (l + 1.0) * du * du / eps),
        }
    }

    /// ε|E|² in the equatorial plane (up to the common constant).
    fn peak_density(&self, r: f64) -> f64 {
        let (a, b) = self.integrands(r);
        (a + b) / (r * r)
    }

    fn inner_radius(&self) -> f64 {
        let nu = self.l as f64 + 0.5;
        let z_lo = (nu - 12.0 * (nu / 2.0).cbrt()).max(0.05 * nu);
        z_lo / (self.n * self.k)
    }

    fn outer_radius(&self) -> f64 {
        let nu = self.l as f64 + 0.5;
        let x = self.k * self.radius;
        let kappa_out = self.k * ((nu / x).powi(2) - 1.0).max(1e-6).sqrt();
        (self.radius + 20.0 / kappa_out).min(nu / self.k)
    }
}

struct Quadrature {
    volume: f64,
}

fn exact_quadrature(field: &RadialField, n_in: usize, exec: Execution) -> Quadrature {
    let n_out = (n_in / 4).max(16);
    let (r_lo, r_r, r_hi) = (field.inner_radius(), field.radius, field.outer_radius());
    let h_in = (r_r - r_lo) / n_in as f64;
    let h_out = (r_hi - r_r) / n_out as f64;
    let inside = map_indexed(exec, n_in + 1, |i| {
        let r = if i == n_in { r_r } else { r_lo + i as f64 * h_in };
        field.integrands(r)
    });
    // Exterior surface node: evaluate just outside the interface.
    let outside = map_indexed(exec, n_out + 1, |i| {
        let r = if i == 0 { r_r * (1.0 + 1e-15) } else { r_r + i as f64 * h_out };
        field.integrands(r)
    });
    let col = |v: &[(f64, f64)], pick: fn(&(f64, f64)) -> f64| v.iter().map(pick).collect::<Vec<_>>();
    let i_radial = simpson(&col(&inside, |p| p.0), h_in) + simpson(&col(&outside, |p| p.0), h_out);
    let i_tangential = simpson(&col(&inside, |p| p.1), h_in) + simpson(&col(&outside, |p| p.1), h_out);

    // Peak: best sample then golden-section between its neighbours.
    let peak_of = |i: usize, p: &(f64, f64), r0: f64, h: f64| {
        let r = r0 + i as f64 * h;
        ((p.0 + p.1) / (r * r), r)
    };
    let mut best = (0.0, r_r);
    for (i, p) in inside.iter().enumerate() {
        let c = peak_of(i, p, r_lo, h_in);
        if c.0 > best.0 {
            best = c;
        }
    }
    let (_, peak_in) = golden_max(|r| field.peak_density(r), (best.1 - h_in).max(r_lo), (best.1 + h_in).min(r_r), 60);
    let peak_out = field.peak_density(r_r * (1.0 + 1e-15));
    let peak = peak_in.max(peak_out).max(best.0);

    // Polar factors on a Simpson grid around the equator.
    let l = field.l;
    let n_pol = n_in;
    let w = polar_half_width(l);
    let h_pol = 2.0 * w / n_pol as f64;
    let pol_samples: Vec<(f64, f64)> = (0..=n_pol)
        .map(|i| {
            let th = FRAC_PI_2 - w + i as f64 * h_pol;
            (radial_e_factor(l, th) * th.sin(), tangential_factor(l, th) * th.sin())
        })
        .collect();
    let theta1 = simpson(&col(&pol_samples, |p| p.0), h_pol);
    let theta2 = simpson(&col(&pol_samples, |p| p.1), h_pol);

    let volume = 2.0 * PI * (theta1 * i_radial + theta2 * i_tangential) / peak;
    Quadrature { volume }
}

fn exact_volume(mode: &WgmMode, exec: Execution) -> Result<ModeVolumeResult> {
    let field = RadialField::new(mode);
    let mut n = BASE_RADIAL_INTERVALS;
    let mut prev = exact_quadrature(&field, n, exec).volume;
    for _ in 0..MAX_REFINEMENTS {
        n *= 2;
        let v = exact_quadrature(&field, n, exec).volume;
        let change = (v - prev).abs() / v;
        if change < REFINEMENT_TOLERANCE {
            return Ok(ModeVolumeResult {
                volume: v,
                method: ModeVolumeMethod::ExactSmallL,
                estimated_relative_error: change.max(f64::EPSILON),
            });
        }
        prev = v;
    }
    Err(Error::GridRefinement(format!(
        "mode volume did not settle to {REFINEMENT_TOLERANCE} after {MAX_REFINEMENTS} doublings (l = {})",
        mode.l
    )))
}

/// Airy-model pieces shared by the asymptotic volume and profile sampler.
struct AiryModel {
    l: f64,
    n: f64,
    k: f64,
    nu: f64,
    /// dr per unit Airy argument.
    scale: f64,
    /// Airy argument at the surface.
    t_surface: f64,
    kappa_out: f64,
    radius: f64,
    pol: Polarization,
}

impl AiryModel {
    fn new(mode: &WgmMode) -> Self {
        let nu = mode.l as f64 + 0.5;
        let n = mode.refractive_index;
        let x = mode.size_parameter;
        let k = x / mode.radius;
        let a = (nu / 2.0).cbrt();
        AiryModel {
            l: mode.l as f64,
            n,
            k,
            nu,
            scale: a / (n * k),
            t_surface: (nu - n * x) / a,
            kappa_out: k * ((nu / x).powi(2) - 1.0).max(1e-12).sqrt(),
            radius: mode.radius,
            pol: mode.polarization,
        }
    }

    fn r_of_t(&self, t: f64) -> f64 {
        (self.nu - t * (self.nu / 2.0).cbrt()) / (self.n * self.k)
    }

    /// ε|E|² in the equatorial plane at Airy argument t (interior).
    fn interior_density(&self, t: f64) -> f64 {
        let r = self.r_of_t(t);
        let (ai, aip) = airy_ai(t);
        match self.pol {
            Polarization::TE => self.n * self.n * ai * ai / (r * r),
            Polarization::TM => {
                let du = ai * 0.0 + aip / self.scale;
                (self.l * (self.l + 1.0) * ai * ai / (r * r) + self.l / (self.l + 1.0) * du * du) / (self.n * self.n * r * r)
            }
        }
    }

    fn exterior_density(&self, dr: f64) -> f64 {
        let (ai_s, _) = airy_ai(self.t_surface);
        let u = ai_s * (-self.kappa_out * dr).exp();
        let r = self.radius + dr;
        match self.pol {
            Polarization::TE => u * u / (r * r),
            Polarization::TM => {
                let du = self.kappa_out * u;
                (self.l * (self.l + 1.0) * u * u / (r * r) + self.l / (self.l + 1.0) * du * du) / (r * r)
            }
        }
    }
}

fn asymptotic_volume(mode: &WgmMode) -> (f64, f64) {
    let m = AiryModel::new(mode);
    let l = mode.l;
    let (theta1, theta2) = polar_integrals_closed(l);
    let (ai_s, _) = airy_ai(m.t_surface);
    let r_surface2 = m.radius * m.radius;
    let (_, peak_in) = golden_max(|t| m.interior_density(t), m.t_surface.max(-AIRY_ZERO_1), 2.0, 80);
    let peak = peak_in.max(m.exterior_density(0.0));
    let n2 = m.n * m.n;
    let volume = match m.pol {
        Polarization::TE => {
            let integral = n2 * m.scale * ai_squared_tail(m.t_surface) + ai_s * ai_s / (2.0 * m.kappa_out);
            2.0 * PI * theta2 * integral / peak
        }
        Polarization::TM => {
            let ll = m.l * (m.l + 1.0);
            let radial = ll / r_surface2 * (m.scale * ai_squared_tail(m.t_surface) / n2 + ai_s * ai_s / (2.0 * m.kappa_out));
            let tangential = m.l / (m.l + 1.0)
                * (ai_prime_squared_tail(m.t_surface) / (m.scale * n2) + m.kappa_out * ai_s * ai_s / 2.0);
            2.0 * PI * (theta1 * radial + theta2 * tangential) / peak
        }
    };
    // Leading order: field pinned to the Airy zero at the surface, no
    // exterior tail, peak at the surface radius.
    let (ai_max, _) = airy_ai(AIRY_MAX_LOCATION);
    let leading = match m.pol {
        Polarization::TE => 2.0 * PI * theta2 * m.scale * ai_squared_tail(-AIRY_ZERO_1) * r_surface2 / (ai_max * ai_max),
        Polarization::TM => 2.0 * PI * theta1 * m.scale * ai_squared_tail(-AIRY_ZERO_1) * r_surface2 / (ai_max * ai_max),
    };
    let err = (volume - leading).abs() / volume;
    (volume, err)
}

/// Samples the equatorial radial profile and the polar profile on the given
/// grids, each normalised to a peak of 1.
pub fn sample_profile(mode: &WgmMode, radial_intervals: usize, polar_intervals: usize, exec: Execution) -> FieldProfile {
    let radial_raw: Vec<(f64, f64)> = match mode.branch {
        ModeBranch::Exact => {
            let field = RadialField::new(mode);
            let (r_lo, r_hi) = (field.inner_radius(), field.outer_radius());
            let h = (r_hi - r_lo) / radial_intervals as f64;
            map_indexed(exec, radial_intervals + 1, |i| {
                let r = r_lo + i as f64 * h;
                (r, field.peak_density(r))
            })
        }
        ModeBranch::Asymptotic => {
            let m = AiryModel::new(mode);
            let r_lo = m.r_of_t(12.0);
            let r_hi = m.radius + 20.0 / m.kappa_out;
            let h = (r_hi - r_lo) / radial_intervals as f64;
            map_indexed(exec, radial_intervals + 1, |i| {
                let r = r_lo + i as f64 * h;
                let d = if r <= m.radius {
                    let t = (m.nu - m.n * m.k * r) / (m.nu / 2.0).cbrt();
                    m.interior_density(t)
                } else {
                    m.exterior_density(r - m.radius)
                };
                (r, d)
            })
        }
    };
    let peak = radial_raw.iter().fold(0.0f64, |a, p| a.max(p.1));
    let radial = radial_raw.into_iter().map(|(r, d)| (r, if peak > 0.0 { d / peak } else { 0.0 })).collect();

    let w = polar_half_width(mode.l);
    let h = 2.0 * w / polar_intervals as f64;
    let polar = (0..=polar_intervals)
        .map(|i| {
            let th = FRAC_PI_2 - w + i as f64 * h;
            let v = match mode.polarization {
                Polarization::TE => tangential_factor(mode.l, th),
                Polarization::TM => radial_e_factor(mode.l, th),
            };
            (th, v)
        })
        .collect();
    FieldProfile { radial, polar, radial_intervals, polar_intervals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polarization, ResonatorSpec};
    use crate::wgm::find_fundamental_mode;

    fn spec(radius: f64) -> ResonatorSpec {
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
    fn closed_polar_integrals_match_quadrature() {
        for &l in &[3u32, 40, 400] {
            let (t1, t2) = polar_integrals_closed(l);
            let n = 20_000;
            let h = PI / n as f64;
            let s1: Vec<f64> = (0..=n).map(|i| {
                let th = i as f64 * h;
                if th == 0.0 || th == PI { 0.0 } else { radial_e_factor(l, th) * th.sin() }
            }).collect();
            let s2: Vec<f64> = (0..=n).map(|i| {
                let th = i as f64 * h;
                if th == 0.0 || th == PI { 0.0 } else { tangential_factor(l, th) * th.sin() }
            }).collect();
            assert!((simpson(&s1, h) - t1).abs() < 1e-9 * t1, "l={l}");
            assert!((simpson(&s2, h) - t2).abs() < 1e-9 * t2, "l={l}");
        }
    }

    #[test]
    fn uniform_profile_reduces_to_domain_volume() {
        // ε|E|² ≡ 1 on the unit cube: V = ∫1 / max(1) = 1.
        let n = 8;
        let h = 1.0 / n as f64;
        let ones = vec![1.0; n + 1];
        let v = simpson(&ones, h) * simpson(&ones, h) * simpson(&ones, h) / 1.0;
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn peak_field_quarter_volume() {
        let e1 = peak_field_per_photon(3e15, 1.8, 1e-13).unwrap();
        let e4 = peak_field_per_photon(3e15, 1.8, 4e-13).unwrap();
        assert!((e1 / e4 - 2.0).abs() < 1e-14);
        assert!(peak_field_per_photon(3e15, 1.8, 0.0).is_err());
    }

    #[test]
    fn exact_volume_converges_and_profile_decays() {
        let m = find_fundamental_mode(&spec(10e-6), 0.6e-6, Polarization::TE, Execution::Sequential).unwrap();
        let v = mode_volume(&m, Execution::Sequential).unwrap();
        assert_eq!(v.method, ModeVolumeMethod::ExactSmallL);
        assert!(v.estimated_relative_error < REFINEMENT_TOLERANCE);
        assert!(m.field_profile.radial.iter().all(|p| p.1 >= 0.0));
        let last = m.field_profile.radial.last().unwrap().1;
        assert!(last < 1e-6, "exterior tail {last:e}");
    }

    #[test]
    fn volume_grows_with_radius() {
        let mut prev = 0.0;
        for r in [8e-6, 12e-6, 18e-6, 27e-6] {
            let m = find_fundamental_mode(&spec(r), 0.6e-6, Polarization::TE, Execution::Sequential).unwrap();
            let v = mode_volume(&m, Execution::Sequential).unwrap().volume;
            assert!(v > prev);
            prev = v;
        }
    }
}
