//! Damped Gauss–Newton (Levenberg–Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITERATIONS: usize = 200;
pub(crate) const STEP_TOLERANCE: f64 = 1e-9;

/// Model value at `x` for parameters `p`; writes ∂f/∂p into `grad`.
pub(crate) type ModelFn<'a> = dyn Fn(f64, &[f64], &mut [f64]) -> f64 + 'a;

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub ssr: f64,
    pub converged: bool,
    pub iterations: usize,
    pub covariance: Option<DMatrix<f64>>,
    /// Condition number of JᵀJ at the optimum.
    pub condition: f64,
}

fn residuals_and_jacobian(xs: &[f64], ys: &[f64], p: &[f64], model: &ModelFn) -> (DVector<f64>, DMatrix<f64>) {
    let (m, n) = (xs.len(), p.len());
    let mut r = DVector::zeros(m);
    let mut j = DMatrix::zeros(m, n);
    let mut grad = vec![0.0; n];
    for i in 0..m {
        let f = model(xs[i], p, &mut grad);
        r[i] = ys[i] - f;
        for k in 0..n {
            j[(i, k)] = grad[k];
        }
    }
    (r, j)
}

fn ssr_at(xs: &[f64], ys: &[f64], p: &[f64], model: &ModelFn) -> f64 {
    let mut grad = vec![0.0; p.len()];
    xs.iter().zip(ys).map(|(&x, &y)| (y - model(x, p, &mut grad)).powi(2)).sum()
}

pub(crate) fn levenberg_marquardt(xs: &[f64], ys: &[f64], p0: &[f64], model: &ModelFn) -> LmOutcome {
    let system = |p: &[f64]| residuals_and_jacobian(xs, ys, p, model);
    let ssr = |p: &[f64]| ssr_at(xs, ys, p, model);
    solve(p0, xs.len(), &system, &ssr)
}

/// LM on an arbitrary residual vector r(p) with a central-difference
/// Jacobian (relative step `rel_h`).
pub(crate) fn levenberg_marquardt_residuals(
    p0: &[f64],
    rel_h: f64,
    residuals: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
) -> LmOutcome {
    let m = residuals(p0).len();
    let system = |p: &[f64]| {
        let r = DVector::from_vec(residuals(p));
        let mut j = DMatrix::zeros(r.len(), p.len());
        for k in 0..p.len() {
            let h = rel_h * p[k].abs().max(1e-300);
            let mut lo = p.to_vec();
            let mut hi = p.to_vec();
            lo[k] -= h;
            hi[k] += h;
            let (rl, rh) = (residuals(&lo), residuals(&hi));
            // r = y − f, so ∂f/∂p = −∂r/∂p.
            for i in 0..r.len() {
                j[(i, k)] = -(rh[i] - rl[i]) / (2.0 * h);
            }
        }
        (r, j)
    };
    let ssr = |p: &[f64]| residuals(p).iter().map(|r| r * r).sum::<f64>();
    solve(p0, m, &system, &ssr)
}

type System<'a> = dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + 'a;

fn solve(
    p0: &[f64],
    m: usize,
    system: &System,
    ssr_at: &dyn Fn(&[f64]) -> f64,
) -> LmOutcome {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut ssr = ssr_at(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (r, j) = system(&p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if ssr == 0.0 || g.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.clone().cholesky().map(|c| c.solve(&g)).or_else(|| a.lu().solve(&g)) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rel_step = delta
                .iter()
                .zip(&p)
                .map(|(d, v)| d.abs() / v.abs().max(1e-300))
                .fold(0.0, f64::max);
            let trial_ssr = ssr_at(&trial);
            if trial_ssr.is_finite() && trial_ssr <= ssr {
                p = trial;
                ssr = trial_ssr;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_step < STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            if rel_step < STEP_TOLERANCE {
                // No further decrease is possible at this resolution.
                converged = true;
                break;
            }
            lambda *= 4.0;
        }
        if converged || !accepted {
            break;
        }
    }

    let (_, j) = system(&p);
    let jtj = j.transpose() * &j;
    let sv = jtj.clone().svd(false, false).singular_values;
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    let dof = m.saturating_sub(n).max(1) as f64;
    let covariance = if converged { jtj.try_inverse().map(|inv| inv * (ssr / dof)) } else { None };
    LmOutcome { params: p, ssr, converged: converged && covariance.is_some(), iterations, covariance, condition }
}
