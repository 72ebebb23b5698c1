//! End-to-end acceptance: each numbered criterion prints one PASS/FAIL line.
//! Run with `cargo test --release --test acceptance -- --nocapture`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rewgm_core::bistability::{
    fit_bistability, power_ladder, steady_state_input, sweep, three_root_window, BistabilityFitOptions, BistabilityParams,
    DrivenTrace, PowerCalibration, SweepSpan, ABSORPTIVE_THRESHOLD, DEFAULT_POWER_LADDER,
};
use rewgm_core::config::{load_config, ExperimentConfig};
use rewgm_core::cqed::{
    critical_numbers, decay_rates, dipole_from_g, g_from_dipole, intracavity_photon_number, kappa_from_q,
    optical_angular_frequency, rabi_from_pulse,
};
use rewgm_core::echo::{echo_area_scan, propagate_bloch, simulate_two_pulse_echo, two_pulse_echo_sweep, EchoOptions, EnsembleSpec};
use rewgm_core::fitkit::{fit_decay, fit_pi_pulse, DecayModel, DecayOptions};
use rewgm_core::model::{AngularRate, Detection, Polarization, Pulse, ResonatorShape, ResonatorSpec, SweepDirection};
use rewgm_core::scenario::{run_scenario, strip_run_info, RunOptions, Scenario};
use rewgm_core::wgm::{asymptotic_mode_volume, find_fundamental_mode, mode_volume};
use rewgm_core::Execution;

type Outcome = Result<String, String>;

const LAMBDA_PR: f64 = 605.977e-9;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pr_config() -> ExperimentConfig {
    load_config(configs().join("pr_yso_resonator_a.cfg")).expect("bundled Pr config loads")
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn within(what: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    let r = rel(got, want);
    let line = format!("{what} = {got:.5e} (target {want:.4e}, rel {r:.2e} ≤ {tol})");
    if r <= tol { Ok(line) } else { Err(line) }
}

fn all(parts: Vec<Outcome>) -> Outcome {
    let ok = parts.iter().all(|p| p.is_ok());
    let joined = parts.into_iter().map(|p| p.unwrap_or_else(|e| format!("FAILED {e}"))).collect::<Vec<_>>().join("; ");
    if ok { Ok(joined) } else { Err(joined) }
}

fn check(cond: bool, msg: String) -> Outcome {
    if cond { Ok(msg) } else { Err(msg) }
}

fn c1_rate_chain() -> Outcome {
    let kappa = kappa_from_q(LAMBDA_PR, 1.8e6).unwrap().over_2pi();
    let (gamma, gamma_h) = decay_rates(187e-6, 68e-6).unwrap();
    all(vec![
        check((kappa - 138e6).abs() <= 2e6, format!("κ/2π = {:.4} MHz (138 ± 2)", kappa / 1e6)),
        within("γ/2π", gamma.over_2pi(), 851.0, 0.01),
        within("γ_h/2π", gamma_h.over_2pi(), 2340.0, 0.01),
    ])
}

fn c2_critical_numbers() -> Outcome {
    let kappa = kappa_from_q(LAMBDA_PR, 1.8e6).unwrap();
    let (gamma, gamma_h) = decay_rates(187e-6, 68e-6).unwrap();
    let (big_n0, n0) = critical_numbers(AngularRate::from_hz(1.73e3), kappa, gamma, gamma_h).unwrap();
    all(vec![within("N0", big_n0, 2.15e5, 0.01), within("n0", n0, 0.166, 0.01)])
}

fn c3_erbium() -> Outcome {
    let cfg = load_config(configs().join("er_yso.cfg")).map_err(|e| e.to_string())?;
    let r = run_scenario(Scenario::CavityQedNumbers, &cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    all(vec![
        within("n0", r.quantity("critical_numbers.n0").unwrap(), 1.88e-5, 0.05),
        within("N0", r.quantity("critical_numbers.N0").unwrap(), 0.104, 0.05),
        check(r.quantity("strong_coupling_report.all_true") == Some(1.0), "strong-coupling report all true".into()),
    ])
}

fn c4_photon_number() -> Outcome {
    within("n_ph", intracavity_photon_number(700e-6, 0.206, 1.8e6, LAMBDA_PR).unwrap(), 1.28e5, 0.02)
}

fn c5_pi_pulse() -> Outcome {
    let rabi = rabi_from_pulse(PI, 0.32e-6).unwrap();
    let ens = EnsembleSpec::new(187e-6, 68e-6);
    let durations: Vec<f64> = (0..30).map(|i| 0.02e-6 + 0.58e-6 * i as f64 / 29.0).collect();
    let scan = echo_area_scan(&ens, rabi, FRAC_PI_2, 5e-6, &durations, &EchoOptions::default()).unwrap();
    let fit = fit_pi_pulse(&scan.points).unwrap();
    all(vec![within("Ω", rabi.0, 9.82e6, 0.005), within("τ_π from area scan", fit.get("tau_pi").unwrap(), 0.32e-6, 0.02)])
}

fn sphere(radius: f64) -> ResonatorSpec {
    ResonatorSpec {
        radius,
        refractive_index: 1.8,
        quality_factor: 1.8e6,
        shape: ResonatorShape::Sphere,
        coupling_efficiency: 0.206,
        polarization: Polarization::TE,
    }
}

fn c6_mode_volume() -> Outcome {
    let mode = find_fundamental_mode(&sphere(1.95e-3), LAMBDA_PR, Polarization::TE, Execution::Parallel).unwrap();
    let v = mode_volume(&mode, Execution::Parallel).unwrap().volume;
    let mut parts = vec![within("V(R = 1.95 mm)", v, 5.40e-13, 0.15)];
    for radius in [10e-6, 15e-6, 25e-6] {
        let m = find_fundamental_mode(&sphere(radius), LAMBDA_PR, Polarization::TE, Execution::Parallel).unwrap();
        let exact = mode_volume(&m, Execution::Parallel).unwrap().volume;
        let asym = asymptotic_mode_volume(&m).volume;
        parts.push(within(&format!("asymptotic/exact V (R = {:.0} µm, l = {})", radius * 1e6, m.l), asym, exact, 0.05));
    }
    all(parts)
}

fn c7_dipole_coupling() -> Outcome {
    let cfg = pr_config();
    let mu = cfg.ion.dipole_moment;
    let omega = optical_angular_frequency(LAMBDA_PR);
    let g = g_from_dipole(mu, 1.8, omega, 5.40e-13).unwrap().g;
    let back = dipole_from_g(g, 1.8, omega, 5.40e-13).unwrap();
    all(vec![within("g/2π (V = 5.40e-13 m³)", g.over_2pi(), 2470.0, 0.01), check(rel(back, mu) <= 1e-6, format!("μ round trip rel {:.1e}", rel(back, mu)))])
}

fn c8_echo_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = pr_config();
    assert_eq!(cfg.echo.n_classes, 2001);
    let r = run_scenario(Scenario::EchoSuite, &cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let q = |k: &str| r.quantity(k).unwrap_or(f64::NAN);
    let mut parts = vec![
        within("2PE amplitude T2", q("echo.t2_resonator_a.T2"), 68e-6, 0.02),
        within("2PE intensity T2", q("echo.t2_bulk.T2"), 98e-6, 0.02),
        within("3PE T1", q("echo.t1_resonator_b.T1"), 187e-6, 0.02),
        within("3PE T1", q("echo.t1_through_b.T1"), 205e-6, 0.02),
        within("T_h", q("echo.hole_fast.T_h"), 10.0, 0.05),
        within("T_h", q("echo.hole_slow.T_h"), 33.9, 0.05),
    ];
    let secs = start.elapsed().as_secs_f64();
    parts.push(check(secs < 300.0, format!("{secs:.1} s")));
    all(parts)
}

fn c9_echo_invariants() -> Outcome {
    // Narrow line so a grid resolving the dephasing stays small.
    let ens = EnsembleSpec { inhomogeneous_width: AngularRate::from_hz(50e6), ..EnsembleSpec::new(187e-6, 68e-6) };
    let rabi = AngularRate(2.0 * PI * 500e6);
    let tau = 0.2e-6;
    let pulses = [Pulse::centered(0.0, FRAC_PI_2, rabi), Pulse::centered(tau, PI, rabi)];
    let step = 0.9 * PI / ens.inhomogeneous_width.0;
    let grid: Vec<f64> = (0..((2.5 * tau / step) as usize)).map(|k| -0.01e-6 + k as f64 * step).collect();
    let max_norm = propagate_bloch(&ens, &pulses, &grid, Execution::Parallel).unwrap().max_norm();
    let free = propagate_bloch(&ens.clone().without_decay(), &pulses, &grid, Execution::Parallel).unwrap();
    let conserved = free.states.iter().flatten().map(|b| ((b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt() - 1.0).abs()).fold(0.0, f64::max);

    let full = EnsembleSpec::new(187e-6, 68e-6);
    let opts = EchoOptions::default();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for i in 0..10 {
        let tau = 2e-6 + 1e-6 * i as f64;
        let run = simulate_two_pulse_echo(&full, tau, &opts).unwrap();
        let t = &run.trace.times;
        let dt = t[1] - t[0];
        let off = (run.trace.centroid() - 2.0 * tau).abs();
        worst = worst.max(off / dt);
        ok &= off <= dt;
    }
    all(vec![
        check(max_norm <= 1.0 + 1e-9, format!("max |B| = {max_norm:.12}")),
        check(conserved <= 1e-12, format!("zero-decay | |B| − 1 | ≤ {conserved:.1e}")),
        check(ok, format!("2PE centroid within {worst:.3} grid steps of 2τ over 10 delays")),
    ])
}

/// Counts roots of |y(√u)|² = drive by sign changes on a dense log grid.
fn brute_force_roots(p: &BistabilityParams, drive: f64) -> usize {
    let n = 200_000;
    let (lo, hi) = (drive * 1e-14, drive * (1.0 + 1e-9));
    let f = |u: f64| steady_state_input(Complex64::new(u.sqrt(), 0.0), p, p.omega_a).norm_sqr() - drive;
    let mut count = 0;
    let mut prev = f(lo);
    for i in 1..=n {
        let u = lo * (hi / lo).powf(i as f64 / n as f64);
        let v = f(u);
        if (v > 0.0) != (prev > 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

fn c10_bistability() -> Outcome {
    let start = Instant::now();
    let p = BistabilityParams::pr_yso();
    let c = p.cooperativity();
    let cal = PowerCalibration::default();
    let top = cal.drive(800e-6);
    let window = three_root_window(&p, p.omega_a, 1e-3 * top, 10.0 * top, 121).unwrap();
    let (a_ok, a_msg) = match window {
        Some((lo, hi)) => {
            let mid = (lo * hi).sqrt();
            let inside = brute_force_roots(&p, mid);
            let below = brute_force_roots(&p, 0.1 * lo);
            (inside == 3 && below == 1, format!("C = {c:.1} > {ABSORPTIVE_THRESHOLD}; window |y|² ∈ [{lo:.3e}, {hi:.3e}], oracle roots {inside} inside / {below} below"))
        }
        None => (false, "no three-root window".to_string()),
    };

    let span = SweepSpan::standard();
    let ladder = power_ladder(&p, &DEFAULT_POWER_LADDER, &cal, &span, Execution::Parallel).unwrap();
    let widths: Vec<f64> = ladder.iter().map(|s| s.hysteresis_width(1e-3)).collect();
    let non_increasing = widths.windows(2).all(|w| w[1] <= w[0]);

    let empty = p.with_atoms(0.0);
    let k = p.kappa.0;
    let fine = SweepSpan { start: -3.0 * k, stop: 3.0 * k, points: 60_001 };
    let tr = sweep(&empty, 1.0, &fine, SweepDirection::Forward).unwrap();
    let t_far = (1.0 - p.external_loss) * 1.0;
    let dip = |x: f64| t_far - tr.transmission_at(x);
    let half = 0.5 * dip(0.0);
    let (mut a, mut b) = (0.0, 3.0 * k);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if dip(m) > half { a = m } else { b = m }
    }
    let hwhm = 0.5 * (a + b);
    let secs = start.elapsed().as_secs_f64();
    all(vec![
        check(c > ABSORPTIVE_THRESHOLD && a_ok, format!("(a) {a_msg}")),
        check(widths[0] > 0.0, format!("(b) hysteresis at 800 µW over {:.3} MHz", widths[0] / TAU / 1e6)),
        within("(c) N = 0 HWHM/κ", hwhm, k, 1e-3),
        check(non_increasing, format!("(d) widths/2π [MHz] {:?} non-increasing", widths.iter().map(|w| (w / TAU / 1e4).round() / 1e2).collect::<Vec<_>>())),
        check(secs < 120.0, format!("{secs:.1} s")),
    ])
}

fn c11_bistability_fit() -> Outcome {
    let truth = BistabilityParams::pr_yso();
    let cal = PowerCalibration::default();
    let span = SweepSpan::standard();
    let data: Vec<DrivenTrace> = [SweepDirection::Forward, SweepDirection::Reverse]
        .into_iter()
        .map(|d| DrivenTrace { drive: cal.drive(800e-6), trace: sweep(&truth, cal.drive(800e-6), &span, d).unwrap() })
        .collect();
    let start = truth.with_g(AngularRate::from_hz(1.73e3).0);
    let fit = fit_bistability(&data, &start, &BistabilityFitOptions::default()).unwrap();
    within("g/2π from 1.73 kHz start", fit.estimate.g.over_2pi(), 2200.0, 0.02)
}

fn c12_fitkit() -> Outcome {
    let mut parts = Vec::new();
    for model in DecayModel::ALL {
        let constant = 1e-4;
        let xs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = 2e-4 * i as f64 / 19.0;
                (x, 0.7 * (-model.rate_factor() * x / constant).exp())
            })
            .collect();
        let fit = fit_decay(&xs, model, &DecayOptions::default()).unwrap();
        let r = rel(fit.get(model.constant_name()).unwrap(), constant);
        parts.push(check(r <= 1e-6, format!("{model} round trip {r:.1e}")));
    }

    let ens = EnsembleSpec::new(187e-6, 68e-6);
    let taus: Vec<f64> = (0..12).map(|i| 4e-6 + 96e-6 * i as f64 / 11.0).collect();
    let amp = two_pulse_echo_sweep(&ens, &taus, &EchoOptions::default()).unwrap();
    let int = two_pulse_echo_sweep(&ens, &taus, &EchoOptions { detection: Detection::Direct, ..Default::default() }).unwrap();
    let t_amp = fit_decay(&amp, DecayModel::Amp2pe, &DecayOptions::default()).unwrap().get("T2").unwrap();
    let t_int = fit_decay(&int, DecayModel::Int2pe, &DecayOptions::default()).unwrap().get("T2").unwrap();
    parts.push(within("intensity vs amplitude T2", t_int, t_amp, 0.01));

    // RMS error of fitted T2 against the number of samples under fixed noise.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut pts = Vec::new();
    for n in [16usize, 64, 256] {
        let trials = 400;
        let mut ss = 0.0;
        for _ in 0..trials {
            let series: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let t = 3.4e-6 + 98e-6 * i as f64 / (n - 1) as f64;
                    (t, (-2.0 * t / 68e-6).exp() + noise.sample(&mut rng))
                })
                .collect();
            let t2 = fit_decay(&series, DecayModel::Amp2pe, &DecayOptions::default()).unwrap().get("T2").unwrap();
            ss += (t2 / 68e-6 - 1.0).powi(2);
        }
        pts.push(((n as f64).ln(), (ss / trials as f64).sqrt().ln()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    parts.push(check((slope + 0.5).abs() <= 0.1, format!("error scaling slope {slope:.3}")));
    all(parts)
}

fn c13_determinism() -> Outcome {
    let cfg = pr_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let execs = [Execution::Parallel, Execution::Parallel, Execution::Sequential];
    let mut reports = Vec::new();
    for (dir, exec) in dirs.iter().zip(execs) {
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), seed: Some(7), exec };
        reports.push(run_scenario(Scenario::Table1, &cfg, &opts).map_err(|e| e.to_string())?);
    }
    let mut identical = true;
    for name in &reports[0].files {
        let read = |i: usize| std::fs::read_to_string(dirs[i].path().join(name)).unwrap();
        let (a, b, c) = (read(0), read(1), read(2));
        let same = if name.ends_with(".json") {
            strip_run_info(&a) == strip_run_info(&b) && strip_run_info(&a) == strip_run_info(&c)
        } else {
            a == b && a == c
        };
        identical &= same;
    }
    check(identical, format!("{} files identical across two parallel runs and one sequential run", reports[0].files.len()))
}

type Criterion = fn() -> Outcome;

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Criterion); 13] = [
        ("cavity-rate chain", c1_rate_chain),
        ("critical numbers", c2_critical_numbers),
        ("Er strong coupling", c3_erbium),
        ("intracavity photon number", c4_photon_number),
        ("Rabi frequency and π-pulse fit", c5_pi_pulse),
        ("mode volume", c6_mode_volume),
        ("dipole coupling", c7_dipole_coupling),
        ("echo simulator recovery", c8_echo_recovery),
        ("echo invariants", c9_echo_invariants),
        ("bistability structure", c10_bistability),
        ("bistability fit round trip", c11_bistability_fit),
        ("fit-kit properties", c12_fitkit),
        ("determinism", c13_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} [{secs:.1} s]: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name} [{secs:.1} s]: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
