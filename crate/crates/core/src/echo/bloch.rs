//! Per-class Bloch dynamics: hard rotations and analytic free evolution.

use num_complex::Complex64;

use super::EnsembleSpec;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::Pulse;

/// Long-lived shelving reservoir fed by excited-state decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Reservoir {
    /// Fraction of excited-state decays that end up here.
    pub branching: f64,
    /// 1/T_h, rad/s.
    pub decay: f64,
}

/// State of one detuning class. The two-level subspace holds population
/// 1 − Σ`pr`; the rest sits in the reservoirs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ClassState {
    /// Optical coherence u + iv.
    pub c: Complex64,
    /// Excited-state population.
    pub pe: f64,
    pub pr: Vec<f64>,
}

impl ClassState {
    pub fn ground(n_reservoirs: usize) -> Self {
        ClassState { c: Complex64::new(0.0, 0.0), pe: 0.0, pr: vec![0.0; n_reservoirs] }
    }

    pub fn two_level_population(&self) -> f64 {
        1.0 - self.pr.iter().sum::<f64>()
    }

    pub fn w(&self) -> f64 {
        2.0 * self.pe - self.two_level_population()
    }

    pub fn bloch(&self) -> [f64; 3] {
        [self.c.re, self.c.im, self.w()]
    }

    /// Rotation by `area` about the in-plane axis at angle `phase`.
    pub fn rotate(&mut self, area: f64, phase: f64) {
        let (sp, cp) = phase.sin_cos();
        let (st, ct) = area.sin_cos();
        let [u, v, w] = self.bloch();
        let dot = cp * u + sp * v;
        // Rodrigues with n = (cos φ, sin φ, 0): n × r = (sp·w, −cp·w, cp·v − sp·u).
        let u2 = u * ct + sp * w * st + cp * dot * (1.0 - ct);
        let v2 = v * ct - cp * w * st + sp * dot * (1.0 - ct);
        let w2 = w * ct + (cp * v - sp * u) * st;
        self.c = Complex64::new(u2, v2);
        self.pe = 0.5 * (w2 + self.two_level_population());
    }

    /// Free evolution for `t` at detuning `det` with population decay γ₁,
    /// dephasing γ₂ and optional shelving.
    pub fn free(&mut self, det: f64, t: f64, gamma1: f64, gamma2: f64, reservoirs: &[Reservoir]) {
        if t == 0.0 {
            return;
        }
        self.c *= Complex64::from_polar((-gamma2 * t).exp(), -det * t);
        let pe0 = self.pe;
        let e1 = (-gamma1 * t).exp();
        for (p, r) in self.pr.iter_mut().zip(reservoirs) {
            let eh = (-r.decay * t).exp();
            let feed = if (gamma1 - r.decay).abs() > 1e-12 * gamma1.max(r.decay) {
                gamma1 / (gamma1 - r.decay) * (eh - e1)
            } else {
                gamma1 * t * e1
            };
            *p = *p * eh + r.branching * pe0 * feed;
        }
        self.pe = pe0 * e1;
    }
}

pub(crate) fn check_pulses(op: &'static str, pulses: &[Pulse]) -> Result<()> {
    for p in pulses {
        if !(p.duration > 0.0) {
            return Err(Error::pre(op, format!("pulse duration must be > 0, got {}", p.duration)));
        }
    }
    for w in pulses.windows(2) {
        if w[1].start < w[0].end() {
            return Err(Error::pre(
                op,
                format!("overlapping pulses: [{:e}, {:e}] s and [{:e}, {:e}] s", w[0].start, w[0].end(), w[1].start, w[1].end()),
            ));
        }
    }
    Ok(())
}

/// Runs one class through the pulses (applied at their centres) and returns
/// the state right after the last one.
pub(crate) fn evolve_class(
    det: f64,
    pulses: &[Pulse],
    gamma1: f64,
    gamma2: f64,
    reservoirs: &[Reservoir],
    area_scale: f64,
) -> ClassState {
    let mut s = ClassState::ground(reservoirs.len());
    let mut t = match pulses.first() {
        Some(p) => p.center(),
        None => return s,
    };
    for p in pulses {
        s.free(det, p.center() - t, gamma1, gamma2, reservoirs);
        s.rotate(p.area * area_scale, p.phase);
        t = p.center();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochTrajectories {
    pub times: Vec<f64>,
    pub detunings: Vec<f64>,
    pub weights: Vec<f64>,
    /// `states[class][sample]` = (u, v, w).
    pub states: Vec<Vec<[f64; 3]>>,
}

impl BlochTrajectories {
    /// Σ_j weight_j·(u_j + i·v_j) per sample, summed in class order.
    pub fn emitted_field(&self) -> Vec<Complex64> {
        (0..self.times.len())
            .map(|k| {
                self.states
                    .iter()
                    .zip(&self.weights)
                    .fold(Complex64::new(0.0, 0.0), |acc, (s, &w)| acc + w * Complex64::new(s[k][0], s[k][1]))
            })
            .collect()
    }

    /// Largest Bloch-vector length over all classes and samples.
    pub fn max_norm(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.iter())
            .map(|b| (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Evolves every detuning class through `pulses` and samples (u, v, w) on
/// `t_grid`. The grid step must resolve the ensemble dephasing time π/width.
pub fn propagate_bloch(
    ensemble: &EnsembleSpec,
    pulses: &[Pulse],
    t_grid: &[f64],
    exec: Execution,
) -> Result<BlochTrajectories> {
    const OP: &str = "propagate_bloch";
    ensemble.validate()?;
    let mut pulses = pulses.to_vec();
    pulses.sort_by(|a, b| a.start.total_cmp(&b.start));
    check_pulses(OP, &pulses)?;
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::pre(OP, "t_grid must be strictly increasing"));
    }
    let max_step = std::f64::consts::PI / ensemble.inhomogeneous_width.0;
    if let Some(w) = t_grid.windows(2).find(|w| w[1] - w[0] > max_step) {
        return Err(Error::pre(
            OP,
            format!("t_grid step {:e} s is coarser than the fastest beat (limit {:e} s)", w[1] - w[0], max_step),
        ));
    }
    let (detunings, weights) = ensemble.nodes();
    let (g1, g2) = ensemble.decay_rates();
    let states = map_indexed(exec, detunings.len(), |j| {
        let det = detunings[j];
        let mut s = ClassState::ground(0);
        let mut now = t_grid.first().copied().unwrap_or(0.0);
        let mut next = 0;
        t_grid
            .iter()
            .map(|&t| {
                while next < pulses.len() && pulses[next].center() <= t {
                    let p = &pulses[next];
                    if p.center() > now {
                        s.free(det, p.center() - now, g1, g2, &[]);
                        now = p.center();
                    }
                    s.rotate(p.area, p.phase);
                    next += 1;
                }
                s.free(det, t - now, g1, g2, &[]);
                now = t;
                s.bloch()
            })
            .collect()
    });
    Ok(BlochTrajectories { times: t_grid.to_vec(), detunings, weights, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn norm(s: &ClassState) -> f64 {
        let b = s.bloch();
        (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
    }

    #[test]
    fn pi_pulse_inverts() {
        let mut s = ClassState::ground(0);
        s.rotate(PI, 0.0);
        assert!((s.w() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_pi_pulse_gives_full_coherence() {
        for phase in [0.0, 0.7, FRAC_PI_2] {
            let mut s = ClassState::ground(0);
            s.rotate(FRAC_PI_2, phase);
            assert!((s.c.norm() - 1.0).abs() < 1e-15);
            assert!(s.w().abs() < 1e-15);
        }
    }

    #[test]
    fn coherence_decays_by_e_after_t2() {
        let mut s = ClassState::ground(0);
        s.rotate(FRAC_PI_2, 0.0);
        s.free(3e6, 68e-6, 1.0 / 187e-6, 1.0 / 68e-6, &[]);
        assert!((s.c.norm() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn population_relaxes_to_ground() {
        let mut s = ClassState::ground(0);
        s.rotate(PI, 0.0);
        s.free(0.0, 187e-6, 1.0 / 187e-6, 1.0 / 68e-6, &[]);
        assert!((s.w() - (-1.0 + 2.0 * (-1.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn shelving_conserves_population() {
        let res = [Reservoir { branching: 0.2, decay: 0.1 }, Reservoir { branching: 0.1, decay: 0.03 }];
        let mut s = ClassState::ground(2);
        s.rotate(PI, 0.0);
        s.free(0.0, 5e-3, 1.0 / 187e-6, 1.0 / 68e-6, &res);
        let shelved: f64 = s.pr.iter().sum();
        assert!((shelved - 0.3).abs() < 1e-3);
        assert!(norm(&s) <= 1.0);
        assert!((s.w() + s.two_level_population()).abs() < 1e-3);
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let ens = EnsembleSpec { n_classes: 5, ..EnsembleSpec::new(1.0, 1.0) };
        let p1 = Pulse { start: 0.0, duration: 1e-6, area: 1.0, carrier_detuning: Default::default(), phase: 0.0 };
        let p2 = Pulse { start: 0.5e-6, ..p1 };
        assert!(propagate_bloch(&ens, &[p1, p2], &[0.0, 1e-12], Execution::Sequential).is_err());
    }

    #[test]
    fn coarse_grid_rejected() {
        let ens = EnsembleSpec { n_classes: 5, ..EnsembleSpec::new(1.0, 1.0) };
        assert!(propagate_bloch(&ens, &[], &[0.0, 1e-6], Execution::Sequential).is_err());
    }
}
