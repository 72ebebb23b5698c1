//! Airy function Ai and its derivative on the real line.

use std::f64::consts::PI;

/// Ai(0).
const C1: f64 = 0.355_028_053_887_817_2;
/// -Ai'(0).
const C2: f64 = 0.258_819_403_792_806_8;

/// Magnitude of the first zero of Ai: Ai(-α₁) = 0.
pub const AIRY_ZERO_1: f64 = 2.338_107_410_459_767;

/// Location of the first (global) maximum of Ai.
pub const AIRY_MAX_LOCATION: f64 = -1.018_792_971_647_471;

/// (Ai(t), Ai'(t)).
pub fn airy_ai(t: f64) -> (f64, f64) {
    if t > 5.0 {
        asymptotic_positive(t)
    } else if t < -8.0 {
        asymptotic_negative(t)
    } else {
        maclaurin(t)
    }
}

fn maclaurin(t: f64) -> (f64, f64) {
    // f = Σ a_k t^{3k}, g = Σ b_k t^{3k+1}, Ai = C1 f − C2 g.
    let t3 = t * t * t;
    let (mut f, mut g) = (1.0, t);
    let (mut df, mut dg) = (0.0, 1.0);
    let (mut a, mut b) = (1.0, t);
    let mut k = 1.0f64;
    loop {
        a *= t3 / ((3.0 * k - 1.0) * (3.0 * k));
        b *= t3 / ((3.0 * k) * (3.0 * k + 1.0));
        f += a;
        g += b;
        // term derivatives: d/dt t^{3k} = 3k t^{3k-1}
        df += 3.0 * k * a / t;
        dg += (3.0 * k + 1.0) * b / t;
        if a.abs() < 1e-18 * f.abs().max(1e-300) && b.abs() < 1e-18 * g.abs().max(1e-300) {
            break;
        }
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    if t == 0.0 {
        return (C1, -C2);
    }
    (C1 * f - C2 * g, C1 * df - C2 * dg)
}

/// Coefficients u_k, v_k of the large-argument expansions.
fn expansion_coefficients() -> ([f64; 7], [f64; 7]) {
    let mut u = [1.0; 7];
    let mut v = [1.0; 7];
    for k in 1..7 {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

fn asymptotic_positive(t: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * t.powf(1.5);
    let (u, v) = expansion_coefficients();
    let (mut s, mut sd) = (0.0, 0.0);
    let mut p = 1.0;
    for k in 0..7 {
        s += u[k] * p;
        sd += v[k] * p;
        p *= -1.0 / zeta;
    }
    let e = (-zeta).exp() / (2.0 * PI.sqrt());
    (e * s / t.powf(0.25), -e * t.powf(0.25) * sd)
}

fn asymptotic_negative(t: f64) -> (f64, f64) {
    let x = -t;
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let (u, v) = expansion_coefficients();
    // Even terms multiply the leading trig factor, odd terms its quadrature partner.
    let (mut pu, mut qu, mut pv, mut qv) = (0.0, 0.0, 0.0, 0.0);
    let mut z = 1.0;
    for k in 0..7 {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            pu += sign * u[k] * z;
            pv += sign * v[k] * z;
        } else {
            qu += sign * u[k] * z;
            qv += sign * v[k] * z;
        }
        z /= zeta;
    }
    let (s, c) = (zeta + PI / 4.0).sin_cos();
    let ai = (s * pu - c * qu) / (PI.sqrt() * x.powf(0.25));
    let aip = -x.powf(0.25) / PI.sqrt() * (c * pv + s * qv);
    (ai, aip)
}

/// ∫_a^∞ Ai(t)² dt = Ai'(a)² − a·Ai(a)².
pub fn ai_squared_tail(a: f64) -> f64 {
    let (ai, aip) = airy_ai(a);
    aip * aip - a * ai * ai
}

/// ∫_a^∞ Ai'(t)² dt = −(a·Ai'(a)² − a²·Ai(a)² + 2·Ai(a)·Ai'(a))/3.
pub fn ai_prime_squared_tail(a: f64) -> f64 {
    let (ai, aip) = airy_ai(a);
    -(a * aip * aip - a * a * ai * ai + 2.0 * ai * aip) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // Abramowitz & Stegun table values.
        let (ai, aip) = airy_ai(1.0);
        assert!((ai - 0.135_292_416_312_881_4).abs() < 1e-14);
        assert!((aip + 0.159_147_441_296_793_2).abs() < 1e-14);
        let (ai, _) = airy_ai(-AIRY_ZERO_1);
        assert!(ai.abs() < 1e-14);
        let (ai, aip) = airy_ai(AIRY_MAX_LOCATION);
        assert!(aip.abs() < 1e-13);
        assert!((ai - 0.535_656_656_015_699_9).abs() < 1e-13);
    }

    #[test]
    fn branches_join() {
        for &(t, tol) in &[(5.0, 1e-6), (-8.0, 1e-7)] {
            let (a0, d0) = maclaurin(t);
            let (a1, d1) = if t > 0.0 { asymptotic_positive(t) } else { asymptotic_negative(t) };
            assert!((a0 - a1).abs() < tol * a0.abs(), "t={t} {a0} {a1}");
            assert!((d0 - d1).abs() < tol * d0.abs(), "t={t} {d0} {d1}");
        }
    }

    #[test]
    fn tail_integrals_match_quadrature() {
        // Simpson on [a, 12] as an independent check.
        let a = -2.0;
        let n = 20_000;
        let h = (12.0 - a) / n as f64;
        let (mut s0, mut s1) = (0.0, 0.0);
        for i in 0..=n {
            let t = a + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let (ai, aip) = airy_ai(t);
            s0 += w * ai * ai;
            s1 += w * aip * aip;
        }
        s0 *= h / 3.0;
        s1 *= h / 3.0;
        assert!((s0 - ai_squared_tail(a)).abs() < 1e-8);
        assert!((s1 - ai_prime_squared_tail(a)).abs() < 1e-8);
    }
}
