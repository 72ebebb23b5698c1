//! Spherical Bessel kernels for large order.
//!
//! `j_l` is evaluated by Miller's downward recurrence normalised with the sum
//! rule Σ(2k+1)j_k² = 1; `y_l` by the (stable) upward recurrence with a
//! running logarithmic scale so orders of several hundred never overflow.

const TINY: f64 = 1e-300;
const RESCALE_AT: f64 = 1e150;

/// j_{l-1}(z)/j_l(z) by the modified Lentz continued fraction.
pub fn j_ratio(l: u32, z: f64) -> f64 {
    let b = |k: u32| (2 * k + 1) as f64 / z;
    let mut f = b(l);
    if f == 0.0 {
        f = TINY;
    }
    let mut c = f;
    let mut d = 0.0;
    let mut k = l + 1;
    loop {
        let bk = b(k);
        d = bk - d;
        if d == 0.0 {
            d = TINY;
        }
        c = bk - 1.0 / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 || k > l + 200_000 {
            return f;
        }
        k += 1;
    }
}

/// Log-derivative ψ_l'(z)/ψ_l(z) of the Riccati–Bessel function ψ_l = z j_l.
pub fn psi_log_derivative(l: u32, z: f64) -> f64 {
    j_ratio(l, z) - l as f64 / z
}

/// (j_{l-1}(z), j_l(z)) with absolute normalisation, l ≥ 1, z > 0.
pub fn spherical_j_pair(l: u32, z: f64) -> (f64, f64) {
    debug_assert!(l >= 1 && z > 0.0);
    let top = (l as f64).max(z) + 20.0 + 8.0 * z.cbrt();
    let top = top.ceil() as u32;
    let mut f_hi = 0.0f64; // f_{k+1}
    let mut f = 1e-30f64; // f_k
    let mut sum = 0.0f64;
    let mut jl = 0.0;
    let mut jlm1 = 0.0;
    let mut k = top;
    let mut f1 = 0.0;
    loop {
        sum += (2 * k + 1) as f64 * f * f;
        if k == l {
            jl = f;
        }
        if k == l - 1 {
            jlm1 = f;
        }
        if k == 1 {
            f1 = f;
        }
        if k == 0 {
            break;
        }
        let f_lo = (2 * k + 1) as f64 / z * f - f_hi;
        f_hi = f;
        f = f_lo;
        k -= 1;
        if f.abs() > RESCALE_AT {
            let s = 1.0 / RESCALE_AT;
            f *= s;
            f_hi *= s;
            sum *= s * s;
            jl *= s;
            jlm1 *= s;
            f1 *= s;
        }
    }
    let f0 = f;
    let norm = sum.sqrt();
    let (sz, cz) = z.sin_cos();
    let j0 = sz / z;
    let j1 = sz / (z * z) - cz / z;
    let sign = if j0.abs() > j1.abs() {
        (j0 * f0).signum()
    } else {
        (j1 * f1).signum()
    };
    (sign * jlm1 / norm, sign * jl / norm)
}

/// Riccati–Bessel ψ_l(z) = z j_l(z) and its derivative.
pub fn riccati_psi(l: u32, z: f64) -> (f64, f64) {
    let (jm, j) = spherical_j_pair(l, z);
    (z * j, z * jm - l as f64 * j)
}

/// (y_{l-1}(x), y_l(x)) scaled by e^{-log_scale}; returns (y_{l-1}, y_l, log_scale).
pub fn spherical_y_pair_scaled(l: u32, x: f64) -> (f64, f64, f64) {
    debug_assert!(l >= 1 && x > 0.0);
    let (sx, cx) = x.sin_cos();
    let mut y_prev = -cx / x;
    let mut y = -cx / (x * x) - sx / x;
    let mut log_scale = 0.0;
    for k in 1..l {
        let y_next = (2 * k + 1) as f64 / x * y - y_prev;
        y_prev = y;
        y = y_next;
        if y.abs() > RESCALE_AT {
            y /= RESCALE_AT;
            y_prev /= RESCALE_AT;
            log_scale += RESCALE_AT.ln();
        }
    }
    (y_prev, y, log_scale)
}

/// Log-derivative χ_l'(x)/χ_l(x) of the Riccati–Neumann function χ_l = x y_l.
pub fn chi_log_derivative(l: u32, x: f64) -> f64 {
    let (ym, y, _) = spherical_y_pair_scaled(l, x);
    ym / y - l as f64 / x
}

/// ln|χ_l(x)|, sign(χ_l(x)) and χ_l'(x)/χ_l(x).
pub fn riccati_chi_log(l: u32, x: f64) -> (f64, f64, f64) {
    let (ym, y, scale) = spherical_y_pair_scaled(l, x);
    let chi = x * y;
    (chi.abs().ln() + scale, chi.signum(), ym / y - l as f64 / x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed forms for low orders.
    fn j2(z: f64) -> f64 {
        (3.0 / (z * z) - 1.0) * z.sin() / z - 3.0 * z.cos() / (z * z)
    }
    fn y2(z: f64) -> f64 {
        (-3.0 / (z * z) + 1.0) * z.cos() / z - 3.0 * z.sin() / (z * z)
    }

    #[test]
    fn low_order_closed_forms() {
        for &z in &[0.3, 1.0, 2.5, 7.0, 19.3] {
            let (j1, j2v) = spherical_j_pair(2, z);
            let j1_exact = z.sin() / (z * z) - z.cos() / z;
            assert!((j2v - j2(z)).abs() < 1e-13, "z={z}");
            assert!((j1 - j1_exact).abs() < 1e-13, "z={z}");
            let (_, y, s) = spherical_y_pair_scaled(2, z);
            assert!((y * s.exp() - y2(z)).abs() < 1e-12 * y2(z).abs().max(1.0));
        }
    }

    #[test]
    fn wronskian_at_large_order() {
        // j_l y_{l-1} - j_{l-1} y_l = 1/z²
        for &(l, z) in &[(150u32, 140.0), (300, 310.0), (480, 470.5), (40, 90.0)] {
            let (jm, j) = spherical_j_pair(l, z);
            let (ym, y, s) = spherical_y_pair_scaled(l, z);
            let w = (j * ym - jm * y) * s.exp();
            assert!(((w * z * z) - 1.0).abs() < 1e-9, "l={l} z={z} w·z²={}", w * z * z);
        }
    }

    #[test]
    fn continued_fraction_matches_miller() {
        for &(l, z) in &[(5u32, 3.0), (200, 205.0), (200, 150.0), (500, 499.0)] {
            let (jm, j) = spherical_j_pair(l, z);
            let r = j_ratio(l, z);
            assert!((r - jm / j).abs() < 1e-9 * r.abs().max(1.0), "l={l} z={z}");
        }
    }
}
