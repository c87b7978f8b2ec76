//! General adaptive robust loss with a shape parameter α.
//!
//! `f(x, α) = |α−2|/α · ((x²/|α−2| + 1)^{α/2} − 1)`, with the limits
//! `½x²` at α = 2 and `log(½x² + 1)` at α = 0.

/// Keeps the closed form away from its removable singularities.
const SINGULAR_GAP: f64 = 1e-5;

fn regularize(alpha: f64) -> f64 {
    if alpha.abs() < SINGULAR_GAP {
        if alpha < 0.0 { -SINGULAR_GAP } else { SINGULAR_GAP }
    } else if (alpha - 2.0).abs() < SINGULAR_GAP {
        if alpha < 2.0 { 2.0 - SINGULAR_GAP } else { 2.0 + SINGULAR_GAP }
    } else {
        alpha
    }
}

pub fn rho(x: f64, alpha: f64) -> f64 {
    if alpha == 2.0 {
        return 0.5 * x * x;
    }
    if alpha == 0.0 {
        return (0.5 * x * x).ln_1p();
    }
    if alpha == f64::NEG_INFINITY {
        return 1.0 - (-0.5 * x * x).exp();
    }
    let b = (alpha - 2.0).abs();
    b / alpha * ((x * x / b + 1.0).powf(alpha / 2.0) - 1.0)
}

/// `(f, ∂f/∂x, ∂f/∂α)`.
pub fn rho_with_grad(x: f64, alpha: f64) -> (f64, f64, f64) {
    let a = regularize(alpha);
    let b = (a - 2.0).abs();
    let s = (a - 2.0).signum();
    let u = x * x / b + 1.0;
    let p = a / 2.0;
    let up = u.powf(p);
    let f = b / a * (up - 1.0);
    let dx = x * u.powf(p - 1.0);
    let du_da = -x * x * s / (b * b);
    let da = (s / a - b / (a * a)) * (up - 1.0) + b / a * up * (0.5 * u.ln() + p * du_da / u);
    let f = if alpha == 2.0 || alpha == 0.0 { rho(x, alpha) } else { f };
    (f, dx, da)
}

/// `(log Z, ∂ log Z/∂α)` for `Z(α) = ∫_{−T}^{T} exp(−f(x, α)) dx` by Simpson's rule.
pub fn log_partition(alpha: f64, truncation: f64) -> (f64, f64) {
    const INTERVALS: usize = 1000;
    let h = truncation / INTERVALS as f64;
    let (mut z, mut dz) = (0.0, 0.0);
    for k in 0..=INTERVALS {
        let w = if k == 0 || k == INTERVALS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (f, _, fa) = rho_with_grad(k as f64 * h, alpha);
        let e = (-f).exp();
        z += w * e;
        dz -= w * fa * e;
    }
    // Symmetric integrand: double the half-line integral.
    let z = 2.0 * z * h / 3.0;
    let dz = 2.0 * dz * h / 3.0;
    (z.ln(), dz / z)
}
