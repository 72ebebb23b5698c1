//! π-pulse calibration and the gap-distance heating quadratic.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::lm::levenberg_marquardt;
use super::{param, split_series, FitResult};
use crate::error::{Error, Result};

fn sin2_model(tau: f64, p: &[f64], g: &mut [f64]) -> f64 {
    let (s, c) = (0.5 * p[1] * tau).sin_cos();
    g[0] = s * s;
    g[1] = p[0] * s * c * tau;
    p[0] * s * s
}

/// Fits A·sin²(Ωτ/2) to (duration, echo amplitude); τ_π = π/Ω.
pub fn fit_pi_pulse(series: &[(f64, f64)]) -> Result<FitResult> {
    const OP: &str = "fit_pi_pulse";
    if series.len() < 4 {
        return Err(Error::pre(OP, format!("need at least 4 points, got {}", series.len())));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys) = split_series(OP, &sorted)?;
    let imax = ys.iter().enumerate().fold(0, |b, (i, y)| if *y > ys[b] { i } else { b });
    if imax == 0 || imax == ys.len() - 1 {
        return Err(Error::Fit(format!(
            "no interior maximum in scan [{:e}, {:e}] s (argmax at an endpoint)",
            xs[0],
            xs[xs.len() - 1]
        )));
    }
    let tau_max = xs[imax];
    let out = levenberg_marquardt(&xs, &ys, &[ys[imax], PI / tau_max], &sin2_model);
    let (a, omega) = (out.params[0], out.params[1].abs());
    let tau_pi = PI / omega;
    let standard_errors = out.covariance.as_ref().map(|c| {
        let (sa, so) = (c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt());
        vec![sa, so, PI * so / (omega * omega)]
    });
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("argmax_duration".into(), tau_max);
    Ok(FitResult {
        model_name: "pi_pulse_sin2".into(),
        parameters: vec![param("amplitude", a, "arb"), param("rabi_frequency", omega, "rad/s"), param("tau_pi", tau_pi, "s")],
        standard_errors,
        residual_norm: out.ssr.sqrt(),
        converged: out.converged,
        n_iterations: out.iterations,
        diagnostics,
        flags: Vec::new(),
    })
}

/// Ordinary least squares T₂(d) = a·d² + b·d + c.
pub fn fit_heating_quadratic(series: &[(f64, f64)]) -> Result<FitResult> {
    const OP: &str = "fit_heating_quadratic";
    let (xs, ys) = split_series(OP, series)?;
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::pre(OP, format!("rank-deficient design: {} distinct distances, need 3", distinct.len())));
    }
    // Solve in scaled coordinates z = d/s to keep the design well conditioned.
    let s = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = xs.len();
    let design = DMatrix::from_fn(m, 3, |i, j| (xs[i] / s).powi(2 - j as i32));
    let y = DVector::from_column_slice(&ys);
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::pre(OP, "rank-deficient design (collinear distances)"));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    let fitted = &design * &beta;
    let ss_res: f64 = (&y - &fitted).iter().map(|r| r * r).sum();
    let mean = ys.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res <= 1e-24 * mean * mean { 1.0 } else { 0.0 };

    let scale = [1.0 / (s * s), 1.0 / s, 1.0];
    let coef: Vec<f64> = (0..3).map(|j| beta[j] * scale[j]).collect();
    let dof = m.saturating_sub(3).max(1) as f64;
    let standard_errors = (design.transpose() * &design)
        .try_inverse()
        .map(|inv| (0..3).map(|j| (inv[(j, j)] * ss_res / dof).max(0.0).sqrt() * scale[j]).collect());
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("r_squared".into(), r_squared);
    Ok(FitResult {
        model_name: "heating_quadratic".into(),
        parameters: vec![param("a", coef[0], "s/m^2"), param("b", coef[1], "s/m"), param("c", coef[2], "s")],
        converged: standard_errors.is_some(),
        standard_errors,
        residual_norm: ss_res.sqrt(),
        n_iterations: 1,
        diagnostics,
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(omega: f64, scale: f64, t_max: f64) -> Vec<(f64, f64)> {
        (1..=40).map(|i| {
            let t = t_max * i as f64 / 40.0;
            (t, scale * (0.5 * omega * t).sin().powi(2))
        }).collect()
    }

    #[test]
    fn pi_pulse_from_shape() {
        let fit = fit_pi_pulse(&scan(9.82e6, 1.0, 0.6e-6)).unwrap();
        assert!((fit.get("tau_pi").unwrap() / (PI / 9.82e6) - 1.0).abs() < 1e-8);
        assert!(fit.diagnostics["argmax_duration"] > 0.3e-6);
    }

    #[test]
    fn amplitude_scale_does_not_move_tau_pi() {
        let a = fit_pi_pulse(&scan(9.82e6, 1.0, 0.6e-6)).unwrap();
        let b = fit_pi_pulse(&scan(9.82e6, 5.0, 0.6e-6)).unwrap();
        assert!((a.get("tau_pi").unwrap() / b.get("tau_pi").unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn truncated_scan_is_an_error() {
        assert!(matches!(fit_pi_pulse(&scan(9.82e6, 1.0, 0.25e-6)), Err(Error::Fit(_))));
    }

    #[test]
    fn exact_quadratic_recovered() {
        let data: Vec<(f64, f64)> = (0..7).map(|i| {
            let d = 1e-6 * (1.0 + i as f64);
            (d, 3e6 * d * d - 2.0 * d + 5e-5)
        }).collect();
        let fit = fit_heating_quadratic(&data).unwrap();
        assert!((fit.get("a").unwrap() / 3e6 - 1.0).abs() < 1e-8);
        assert!((fit.get("b").unwrap() / -2.0 - 1.0).abs() < 1e-8);
        assert!((fit.get("c").unwrap() / 5e-5 - 1.0).abs() < 1e-8);
        assert!((fit.diagnostics["r_squared"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_data() {
        let data: Vec<(f64, f64)> = (0..5).map(|i| (1e-6 * (2.0 + i as f64), 40e-6)).collect();
        let fit = fit_heating_quadratic(&data).unwrap();
        assert!(fit.get("a").unwrap().abs() * 1e-12 < 1e-15);
        assert!(fit.get("b").unwrap().abs() * 1e-6 < 1e-15);
        assert!((fit.get("c").unwrap() - 40e-6).abs() < 1e-15);
    }

    #[test]
    fn collinear_distances_rejected() {
        let data = vec![(1.0, 2.0), (1.0, 2.1), (2.0, 3.0), (2.0, 3.0)];
        assert!(fit_heating_quadratic(&data).is_err());
    }
}
