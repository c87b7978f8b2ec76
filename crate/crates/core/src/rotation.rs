//! Axis-angle rotations and their derivatives.
//!
//! Rotations are built as `R = I + a(θ)·K + b(θ)·K²` with `K = [ω]×` and
//! `θ = |ω|`, so the coefficients and their derivatives can switch to Taylor
//! series near zero without a branch in the matrix algebra.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the Rodrigues coefficients use their series expansion.
pub const SERIES_ANGLE: f64 = 1e-8;

/// Below this angle the derivative coefficients use their series expansion
/// (the closed forms lose digits to cancellation well before `SERIES_ANGLE`).
const DERIV_SERIES_ANGLE: f64 = 1e-2;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin θ / θ` and `(1 - cos θ) / θ²`.
fn coeffs(theta: f64) -> (f64, f64) {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / half;
        (theta.sin() / theta, 0.5 * s * s)
    }
}

/// `a'(θ)/θ` and `b'(θ)/θ` for the coefficients of [`coeffs`].
fn coeff_derivs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < DERIV_SERIES_ANGLE {
        let c = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0 + t2 * t2 * t2 / 45360.0;
        let d = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0 + t2 * t2 * t2 / 453600.0;
        (c, d)
    } else {
        let (s, co) = theta.sin_cos();
        let c = (theta * co - s) / (t2 * theta);
        let d = (theta * s - 2.0 * (1.0 - co)) / (t2 * t2);
        (c, d)
    }
}

/// Rotation matrix of an axis-angle vector.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (a, b) = coeffs(theta);
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix together with `∂R/∂ω_k` for k = 0..3.
pub fn rodrigues_with_jacobian(w: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let theta = w.norm();
    let (a, b) = coeffs(theta);
    let (c, d) = coeff_derivs(theta);
    let k = skew(w);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let common = k * c + k2 * d;
    let mut jac = [Matrix3::zeros(); 3];
    for (i, j) in jac.iter_mut().enumerate() {
        let e = skew(&Vector3::ith(i, 1.0));
        *j = common * w[i] + e * a + (e * k + k * e) * b;
    }
    (r, jac)
}

/// Pulls a matrix adjoint `∂E/∂R` back to `∂E/∂ω`.
pub fn rodrigues_vjp(jac: &[Matrix3<f64>; 3], grad_r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        jac[0].component_mul(grad_r).sum(),
        jac[1].component_mul(grad_r).sum(),
        jac[2].component_mul(grad_r).sum(),
    )
}

/// Axis-angle vector of a rotation matrix, valid over the full range [0, π].
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let sym = (r + Matrix3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Geodesic angle between two rotations in radians.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    // atan2 of sine and cosine stays accurate near 0 and π, unlike acos.
    let r = a.transpose() * b;
    let sin = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite())
        && (r.transpose() * r - Matrix3::identity()).norm() < tol
        && (r.determinant() - 1.0).abs() < tol
}

/// Rotation taking unit vector `from` onto unit vector `to`.
pub fn align_vectors(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let f = from.normalize();
    let t = to.normalize();
    let axis = f.cross(&t);
    let s = axis.norm();
    let c = f.dot(&t);
    if s < 1e-15 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // Antipodal: rotate by π about any axis orthogonal to `from`.
        let helper = if f.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let ortho = f.cross(&helper).normalize();
        return rodrigues(&(ortho * std::f64::consts::PI));
    }
    rodrigues(&(axis / s * s.atan2(c)))
}
