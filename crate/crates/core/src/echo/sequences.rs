//! Two-pulse, three-pulse and accumulated echo sequences.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bloch::{check_pulses, evolve_class, ClassState, Reservoir};
use super::detect::{detect, FieldTrace};
use super::{EchoOptions, EnsembleSpec, HardPulseCheck};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{AngularRate, Detection, EchoTrace, Pulse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    TwoPulse,
    ThreePulse,
    Accumulated,
}

/// Timing and areas of an echo sequence.
///
/// `tau` is the centre-to-centre separation of the first two pulses (the
/// pulses of one pair for the accumulated sequence). `waiting` is the 3PE
/// population time T, measured edge to edge between pulses 2 and 3, so T = 0
/// means back-to-back pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTemplate {
    pub kind: SequenceKind,
    pub tau: f64,
    #[serde(default)]
    pub waiting: f64,
    /// Pair repetition period τ_r (accumulated only).
    #[serde(default)]
    pub repetition_period: f64,
    /// Pulse areas in sequence order; for the accumulated sequence these are
    /// the two pair pulses followed by the readout pulse.
    pub areas: Vec<f64>,
    /// Number of preparation pairs (accumulated only).
    #[serde(default)]
    pub repetitions: u32,
}

impl SequenceTemplate {
    pub fn two_pulse(tau: f64) -> Self {
        SequenceTemplate {
            kind: SequenceKind::TwoPulse,
            tau,
            waiting: 0.0,
            repetition_period: 0.0,
            areas: vec![FRAC_PI_2, PI],
            repetitions: 1,
        }
    }

    pub fn three_pulse(tau: f64, waiting: f64) -> Self {
        SequenceTemplate {
            kind: SequenceKind::ThreePulse,
            tau,
            waiting,
            repetition_period: 0.0,
            areas: vec![FRAC_PI_2; 3],
            repetitions: 1,
        }
    }

    pub fn accumulated(pair_separation: f64, repetition_period: f64, pairs: u32) -> Self {
        SequenceTemplate {
            kind: SequenceKind::Accumulated,
            tau: pair_separation,
            waiting: 0.0,
            repetition_period,
            areas: vec![PI / 4.0, PI / 4.0, FRAC_PI_2],
            repetitions: pairs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            SequenceKind::TwoPulse => 2,
            SequenceKind::ThreePulse | SequenceKind::Accumulated => 3,
        };
        if self.areas.len() != expected {
            return Err(Error::invalid("sequence.areas", format!("expected {expected} areas, got {}", self.areas.len())));
        }
        if self.areas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("sequence.areas", "areas must be > 0"));
        }
        for (name, v) in [("sequence.tau", self.tau), ("sequence.waiting", self.waiting), ("sequence.repetition_period", self.repetition_period)] {
            if !(v >= 0.0) {
                return Err(Error::invalid(name, format!("delays must be ≥ 0, got {v}")));
            }
        }
        if self.kind == SequenceKind::Accumulated && self.repetitions == 0 {
            return Err(Error::invalid("sequence.repetitions", "need at least one pair"));
        }
        Ok(())
    }

    /// Pulses of a 2PE/3PE sequence, first pulse centred at t = 0.
    fn pulses(&self, rabi: AngularRate) -> Vec<Pulse> {
        let p1 = Pulse::centered(0.0, self.areas[0], rabi);
        let p2 = Pulse::centered(self.tau, self.areas[1], rabi);
        match self.kind {
            SequenceKind::TwoPulse => vec![p1, p2],
            _ => {
                let d3 = self.areas[2] / rabi.0;
                let p3 = Pulse::centered(p2.end() + self.waiting + 0.5 * d3, self.areas[2], rabi);
                vec![p1, p2, p3]
            }
        }
    }

    /// Expected echo time with the first pulse centred at t = 0.
    pub fn echo_time(&self, rabi: AngularRate) -> f64 {
        let pulses = self.pulses(rabi);
        pulses.last().map(|p| p.center()).unwrap_or(0.0) + self.tau
    }
}

/// Phase-cycle step: per-pulse phases and the receiver phase that the wanted
/// pathway acquires.
struct CycleStep {
    phases: Vec<f64>,
    receiver: f64,
}

/// Selects the 0 → −1 → +1 coherence pathway (phase 2φ₂ − φ₁).
fn two_pulse_cycle() -> Vec<CycleStep> {
    (0..4)
        .map(|k| {
            let phi2 = k as f64 * FRAC_PI_2;
            CycleStep { phases: vec![0.0, phi2], receiver: 2.0 * phi2 }
        })
        .collect()
}

/// Selects the stimulated-echo pathway 0 → −1 → 0 → +1 (phase −φ₁ + φ₂ + φ₃).
fn three_pulse_cycle() -> Vec<CycleStep> {
    let mut steps = Vec::with_capacity(8);
    for k in 0..4 {
        for m in 0..2 {
            let (phi1, phi2) = (k as f64 * FRAC_PI_2, m as f64 * PI);
            steps.push(CycleStep { phases: vec![phi1, phi2, 0.0], receiver: phi2 - phi1 });
        }
    }
    steps
}

/// Phase-cycled coherence per class right after the last pulse.
fn cycled_coherences(
    ensemble: &EnsembleSpec,
    pulses: &[Pulse],
    cycle: &[CycleStep],
    area_scale: f64,
    exec: Execution,
) -> (Vec<f64>, Vec<f64>, Vec<Complex64>) {
    let (det, wts) = ensemble.nodes();
    let (g1, g2) = ensemble.decay_rates();
    let n = cycle.len() as f64;
    let coh = map_indexed(exec, det.len(), |j| {
        cycle.iter().fold(Complex64::new(0.0, 0.0), |acc, step| {
            let phased: Vec<Pulse> = pulses.iter().zip(&step.phases).map(|(p, &ph)| Pulse { phase: ph, ..*p }).collect();
            let s = evolve_class(det[j], &phased, g1, g2, &[], area_scale);
            acc + s.c * Complex64::from_polar(1.0 / n, -step.receiver)
        })
    });
    (det, wts, coh)
}

/// Σ_j w_j c_j e^(−iΔ_j s − γ₂ s) at delays `s` after the last pulse.
fn radiated_field(det: &[f64], wts: &[f64], coh: &[Complex64], gamma2: f64, delays: &[f64], exec: Execution) -> Vec<Complex64> {
    map_indexed(exec, delays.len(), |k| {
        let s = delays[k];
        let sum = det
            .iter()
            .zip(wts)
            .zip(coh)
            .fold(Complex64::new(0.0, 0.0), |acc, ((&d, &w), &c)| acc + w * c * Complex64::from_polar(1.0, -d * s));
        sum * (-gamma2 * s).exp()
    })
}

/// Sample grid centred on `center` (which is itself a node): the step
/// resolves both the echo envelope and the LO beat.
fn window(center: f64, ensemble: &EnsembleSpec, opts: &EchoOptions) -> (Vec<f64>, usize) {
    let fwhm = ensemble.echo_duration();
    let (dt, half) = match opts.detection {
        Detection::Heterodyne => {
            let beat = 2.0 * PI / opts.lo_offset.0;
            (fwhm.min(beat) / 16.0, (4.0 * fwhm).max(beat))
        }
        Detection::Direct => (fwhm / 16.0, 4.0 * fwhm),
    };
    let n = (half / dt).ceil() as i64;
    ((-n..=n).map(|k| center + k as f64 * dt).collect(), n as usize)
}

/// One simulated echo with its detector trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoRun {
    pub trace: EchoTrace,
    /// Expected echo time, s.
    pub echo_time: f64,
    /// Detector envelope at the expected echo time.
    pub peak_amplitude: f64,
    pub hard_pulse: HardPulseCheck,
    pub phase_cycle_steps: usize,
}

fn check_options(op: &'static str, opts: &EchoOptions) -> Result<()> {
    if !(opts.rabi.0 > 0.0) {
        return Err(Error::pre(op, "Rabi frequency must be > 0"));
    }
    if !(opts.area_scale > 0.0) {
        return Err(Error::pre(op, "area_scale must be > 0"));
    }
    Ok(())
}

fn run_sequence(
    op: &'static str,
    ensemble: &EnsembleSpec,
    template: &SequenceTemplate,
    cycle: &[CycleStep],
    opts: &EchoOptions,
) -> Result<EchoRun> {
    ensemble.validate()?;
    template.validate()?;
    check_options(op, opts)?;
    let pulses = template.pulses(opts.rabi);
    check_pulses(op, &pulses)?;
    let last = pulses.last().map(|p| p.center()).unwrap_or(0.0);
    let echo_time = template.echo_time(opts.rabi);
    let (det, wts, coh) = cycled_coherences(ensemble, &pulses, cycle, opts.area_scale, opts.exec);
    let (times, center) = window(echo_time, ensemble, opts);
    let delays: Vec<f64> = times.iter().map(|t| t - last).collect();
    let field = radiated_field(&det, &wts, &coh, 1.0 / ensemble.t2, &delays, opts.exec);
    let trace = detect(&FieldTrace { times, field }, opts.detection, (opts.detection == Detection::Heterodyne).then_some(opts.lo_offset), &opts.gains)?;
    let peak_amplitude = trace.amplitudes[center].norm();
    Ok(EchoRun {
        trace,
        echo_time,
        peak_amplitude,
        hard_pulse: HardPulseCheck::new(opts.rabi.0 * opts.area_scale, ensemble.inhomogeneous_width.0),
        phase_cycle_steps: cycle.len(),
    })
}

/// Detector reading at the echo time only.
fn peak_only(op: &'static str, ensemble: &EnsembleSpec, template: &SequenceTemplate, cycle: &[CycleStep], opts: &EchoOptions) -> Result<f64> {
    ensemble.validate()?;
    template.validate()?;
    check_options(op, opts)?;
    let pulses = template.pulses(opts.rabi);
    check_pulses(op, &pulses)?;
    let last = pulses.last().map(|p| p.center()).unwrap_or(0.0);
    let echo_time = template.echo_time(opts.rabi);
    let (det, wts, coh) = cycled_coherences(ensemble, &pulses, cycle, opts.area_scale, opts.exec);
    let field = radiated_field(&det, &wts, &coh, 1.0 / ensemble.t2, &[echo_time - last], Execution::Sequential);
    let lo = (opts.detection == Detection::Heterodyne).then_some(opts.lo_offset);
    let trace = detect(&FieldTrace { times: vec![echo_time], field }, opts.detection, lo, &opts.gains)?;
    Ok(trace.amplitudes[0].norm())
}

/// π/2 – τ – π; echo at 2τ.
pub fn simulate_two_pulse_echo(ensemble: &EnsembleSpec, tau: f64, opts: &EchoOptions) -> Result<EchoRun> {
    run_sequence("simulate_two_pulse_echo", ensemble, &SequenceTemplate::two_pulse(tau), &two_pulse_cycle(), opts)
}

/// π/2 – τ – π/2 – T – π/2; echo τ after the third pulse.
pub fn simulate_three_pulse_echo(ensemble: &EnsembleSpec, tau: f64, waiting: f64, opts: &EchoOptions) -> Result<EchoRun> {
    run_sequence(
        "simulate_three_pulse_echo",
        ensemble,
        &SequenceTemplate::three_pulse(tau, waiting),
        &three_pulse_cycle(),
        opts,
    )
}

/// (τ, echo peak) over a delay ladder.
pub fn two_pulse_echo_sweep(ensemble: &EnsembleSpec, taus: &[f64], opts: &EchoOptions) -> Result<Vec<(f64, f64)>> {
    let cycle = two_pulse_cycle();
    taus.iter()
        .map(|&tau| Ok((tau, peak_only("simulate_two_pulse_echo", ensemble, &SequenceTemplate::two_pulse(tau), &cycle, opts)?)))
        .collect()
}

/// (T, stimulated-echo peak) at fixed τ.
pub fn three_pulse_echo_sweep(ensemble: &EnsembleSpec, tau: f64, waits: &[f64], opts: &EchoOptions) -> Result<Vec<(f64, f64)>> {
    let cycle = three_pulse_cycle();
    waits
        .iter()
        .map(|&t| Ok((t, peak_only("simulate_three_pulse_echo", ensemble, &SequenceTemplate::three_pulse(tau, t), &cycle, opts)?)))
        .collect()
}

/// One component of the spectral-hole decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleComponent {
    /// T_h, s.
    pub lifetime: f64,
    /// Fraction of excited-state decays shelved into this component.
    pub weight: f64,
}

fn reservoirs(op: &'static str, holes: &[HoleComponent]) -> Result<Vec<Reservoir>> {
    if holes.is_empty() {
        return Err(Error::pre(op, "hole_lifetimes must not be empty"));
    }
    if holes.iter().any(|h| !(h.lifetime > 0.0) || !(h.weight >= 0.0)) {
        return Err(Error::pre(op, "hole lifetimes must be > 0 and weights ≥ 0"));
    }
    let total: f64 = holes.iter().map(|h| h.weight).sum();
    if !(total > 0.0 && total <= 1.0) {
        return Err(Error::pre(op, format!("hole weights must sum to a value in (0, 1], got {total}")));
    }
    Ok(holes.iter().map(|h| Reservoir { branching: h.weight, decay: 1.0 / h.lifetime }).collect())
}

/// Class states at the end of the preparation train, for the two signs of
/// the second pair pulse.
struct PreparedGrating {
    det: Vec<f64>,
    wts: Vec<f64>,
    states: Vec<[ClassState; 2]>,
    res: Vec<Reservoir>,
}

fn prepare_grating(
    op: &'static str,
    ensemble: &EnsembleSpec,
    prep: &SequenceTemplate,
    holes: &[HoleComponent],
    opts: &EchoOptions,
) -> Result<PreparedGrating> {
    ensemble.validate()?;
    prep.validate()?;
    check_options(op, opts)?;
    if prep.kind != SequenceKind::Accumulated {
        return Err(Error::pre(op, "preparation template must be of kind accumulated"));
    }
    if !(prep.repetition_period > ensemble.t2) {
        return Err(Error::pre(op, format!("pair repetition period τ_r = {:e} s must exceed T2 = {:e} s", prep.repetition_period, ensemble.t2)));
    }
    let res = reservoirs(op, holes)?;
    let pair = [Pulse::centered(0.0, prep.areas[0], opts.rabi), Pulse::centered(prep.tau, prep.areas[1], opts.rabi)];
    check_pulses(op, &pair)?;
    if prep.repetition_period < pair[1].end() - pair[0].start {
        return Err(Error::pre(op, "pairs overlap: τ_r shorter than one pair"));
    }
    let (det, wts) = ensemble.nodes();
    let (g1, g2) = ensemble.decay_rates();
    let scale = opts.area_scale;
    let states = map_indexed(opts.exec, det.len(), |j| {
        [0.0, PI].map(|phi_b| {
            let mut s = ClassState::ground(res.len());
            for k in 0..prep.repetitions {
                if k > 0 {
                    s.free(det[j], prep.repetition_period - prep.tau, g1, g2, &res);
                }
                s.rotate(prep.areas[0] * scale, 0.0);
                s.free(det[j], prep.tau, g1, g2, &res);
                s.rotate(prep.areas[1] * scale, phi_b);
            }
            s
        })
    });
    Ok(PreparedGrating { det, wts, states, res })
}

/// Difference of the two preparation signs after waiting `t_w` and reading
/// out: keeps only the part of the grating that follows the pair phase.
fn retrieved_coherences(g: &PreparedGrating, ensemble: &EnsembleSpec, readout_area: f64, t_w: f64, exec: Execution) -> Vec<Complex64> {
    let (g1, g2) = ensemble.decay_rates();
    map_indexed(exec, g.det.len(), |j| {
        let [a, b] = &g.states[j];
        let c = [a, b].map(|s| {
            let mut s = s.clone();
            s.free(g.det[j], t_w, g1, g2, &g.res);
            s.rotate(readout_area, 0.0);
            s.c
        });
        0.5 * (c[0] - c[1])
    })
}

/// Retrieved pulse after a train of `prep.repetitions` pulse pairs and a
/// waiting time `t_w`. The readout pulse is centred at the end of the train
/// plus `t_w`; the retrieved pulse follows it by the pair separation.
pub fn simulate_accumulated_echo(
    ensemble: &EnsembleSpec,
    prep: &SequenceTemplate,
    t_w: f64,
    hole_lifetimes: &[HoleComponent],
    opts: &EchoOptions,
) -> Result<EchoRun> {
    const OP: &str = "simulate_accumulated_echo";
    if !(t_w >= 0.0) {
        return Err(Error::pre(OP, "T_w must be ≥ 0"));
    }
    let g = prepare_grating(OP, ensemble, prep, hole_lifetimes, opts)?;
    let coh = retrieved_coherences(&g, ensemble, prep.areas[2] * opts.area_scale, t_w, opts.exec);
    let train_end = (prep.repetitions - 1) as f64 * prep.repetition_period + prep.tau;
    let readout = train_end + t_w;
    let echo_time = readout + prep.tau;
    let (times, center) = window(echo_time, ensemble, opts);
    let delays: Vec<f64> = times.iter().map(|t| t - readout).collect();
    let field = radiated_field(&g.det, &g.wts, &coh, 1.0 / ensemble.t2, &delays, opts.exec);
    let lo = (opts.detection == Detection::Heterodyne).then_some(opts.lo_offset);
    let trace = detect(&FieldTrace { times, field }, opts.detection, lo, &opts.gains)?;
    let peak_amplitude = trace.amplitudes[center].norm();
    Ok(EchoRun {
        trace,
        echo_time,
        peak_amplitude,
        hard_pulse: HardPulseCheck::new(opts.rabi.0 * opts.area_scale, ensemble.inhomogeneous_width.0),
        phase_cycle_steps: 2,
    })
}

/// (T_w, retrieved amplitude) pairs; the train is simulated once.
pub fn accumulated_echo_sweep(
    ensemble: &EnsembleSpec,
    prep: &SequenceTemplate,
    waits: &[f64],
    hole_lifetimes: &[HoleComponent],
    opts: &EchoOptions,
) -> Result<Vec<(f64, f64)>> {
    const OP: &str = "simulate_accumulated_echo";
    let g = prepare_grating(OP, ensemble, prep, hole_lifetimes, opts)?;
    let lo = (opts.detection == Detection::Heterodyne).then_some(opts.lo_offset);
    waits
        .iter()
        .map(|&t_w| {
            if !(t_w >= 0.0) {
                return Err(Error::pre(OP, "T_w must be ≥ 0"));
            }
            let coh = retrieved_coherences(&g, ensemble, prep.areas[2] * opts.area_scale, t_w, opts.exec);
            let field = radiated_field(&g.det, &g.wts, &coh, 1.0 / ensemble.t2, &[prep.tau], Execution::Sequential);
            let trace = detect(&FieldTrace { times: vec![t_w], field }, opts.detection, lo, &opts.gains)?;
            Ok((t_w, trace.amplitudes[0].norm()))
        })
        .collect()
}

/// Echo amplitude against second-pulse duration at fixed Rabi frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaScan {
    /// (second-pulse duration s, echo amplitude)
    pub points: Vec<(f64, f64)>,
    /// Located maximum (parabolic refinement of the argmax), if interior.
    pub peak: Option<(f64, f64)>,
    pub flags: Vec<String>,
}

/// 2PE amplitude as the second pulse length is scanned. The first pulse has
/// area `first_area`; pulses are separated by `tau` centre to centre.
pub fn echo_area_scan(
    ensemble: &EnsembleSpec,
    rabi: AngularRate,
    first_area: f64,
    tau: f64,
    second_durations: &[f64],
    opts: &EchoOptions,
) -> Result<AreaScan> {
    const OP: &str = "echo_area_scan";
    if !(rabi.0 > 0.0) {
        return Err(Error::pre(OP, "Rabi frequency must be > 0"));
    }
    let opts = EchoOptions { rabi, ..*opts };
    let cycle = two_pulse_cycle();
    let points = second_durations
        .iter()
        .map(|&d| {
            if !(d > 0.0) {
                return Err(Error::pre(OP, "pulse durations must be > 0"));
            }
            let mut t = SequenceTemplate::two_pulse(tau);
            t.areas = vec![first_area, rabi.0 * d];
            Ok((d, peak_only(OP, ensemble, &t, &cycle, &opts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flags = Vec::new();
    let imax = points.iter().enumerate().fold(0, |b, (i, p)| if p.1 > points[b].1 { i } else { b });
    let peak = if points.len() >= 3 && imax > 0 && imax < points.len() - 1 {
        let (x0, y0) = points[imax - 1];
        let (x1, y1) = points[imax];
        let (x2, y2) = points[imax + 1];
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
        if a < 0.0 {
            let xv = -b / (2.0 * a);
            let c = y1 - a * x1 * x1 - b * x1;
            Some((xv, a * xv * xv + b * xv + c))
        } else {
            Some((x1, y1))
        }
    } else {
        flags.push("scan range excludes a maximum".into());
        None
    };
    Ok(AreaScan { points, peak, flags })
}
