//! Rotation group helpers on plain `Matrix3`/`Vector3` values.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

/// Below this angle the closed forms are replaced by their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula.
pub fn exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + (s / theta) * k + ((1.0 - c) / theta2) * k * k
}

/// Rotation angle of `r` in [0, pi].
pub fn angle(r: &Matrix3<f64>) -> f64 {
    let w = 0.5 * vee(&(r - r.transpose()));
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    w.norm().atan2(c)
}

/// Principal logarithm, valid on the whole group.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = 0.5 * vee(&(r - r.transpose()));
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if theta < PI - 1e-6 {
        return w * (theta / s);
    }
    // Near pi: the axis comes from the symmetric part, its sign from w.
    let b = (r + Matrix3::identity()) * 0.5;
    let mut k = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<f64> = b.column(k).into();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + ((1.0 - c) / theta2) * k + ((theta - s) / (theta2 * theta)) * k * k
}

pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() - 0.5 * k + (1.0 / theta2 - (1.0 + c) / (2.0 * theta * s)) * k * k
}

pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-phi)
}

pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_inv(&-phi)
}

/// Projects a nearly orthonormal matrix onto SO(3) (polar decomposition).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        out = u2 * vt;
    }
    out
}

/// Builds a rotation about `axis` (need not be unit) by `angle` radians.
pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp(&(axis.normalize() * angle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quarter_turn() {
        let r = exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_near_pi() {
        let phi = Vector3::new(0.3, -0.4, 0.5).normalize() * (PI - 1e-9);
        let back = log(&exp(&phi));
        assert_abs_diff_eq!(back, phi, epsilon = 1e-6);
    }

    #[test]
    fn jacobian_inverse_pair() {
        for phi in [Vector3::new(0.1, 0.2, -0.3), Vector3::new(1e-9, 0.0, 2e-9), Vector3::new(1.5, -1.0, 0.7)] {
            assert_abs_diff_eq!(left_jacobian(&phi) * left_jacobian_inv(&phi), Matrix3::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn right_jacobian_first_order() {
        // Exp(phi + d) ~ Exp(phi) Exp(Jr d)
        let phi = Vector3::new(0.4, -0.2, 0.9);
        let d = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = exp(&(phi + d));
        let rhs = exp(&phi) * exp(&(right_jacobian(&phi) * d));
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11);
    }
}
