use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Mul;

use super::so3::{self, skew};
use crate::error::{Error, Result};

/// Largest rotation angle accepted by [`log_se3`].
pub const LOG_ANGLE_LIMIT: f64 = PI - 1e-6;

/// Compositions between two polar re-projections of the rotation block.
pub const REORTHONORMALIZE_EVERY: u32 = 1000;

/// Rigid transform `T = [R p; 0 1]`, mapping body coordinates into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    #[serde(skip)]
    compositions: u32,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            compositions: 0,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            compositions: self.compositions,
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            compositions: self.compositions.max(other.compositions) + 1,
        };
        if out.compositions >= REORTHONORMALIZE_EVERY {
            out.rotation = so3::orthonormalize(&out.rotation);
            out.compositions = 0;
        }
        out
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Adjoint representation acting on `[rho; phi]` twists.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(skew(&self.translation) * self.rotation));
        ad
    }

    /// Retraction used by the estimator: `p + R dp`, `R Exp(dtheta)`.
    ///
    /// Agrees with `T Exp(delta)` to first order, so Jacobians derived for
    /// right perturbations apply unchanged.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let dp = delta.fixed_rows::<3>(0).into_owned();
        let dth = delta.fixed_rows::<3>(3).into_owned();
        Pose::new(
            self.rotation * so3::exp(&dth),
            self.translation + self.rotation * dp,
        )
    }

    /// Inverse of [`Pose::retract`]: `self.retract(self.local(other)) == other`.
    pub fn local(&self, other: &Pose) -> Vector6<f64> {
        let rt = self.rotation.transpose();
        let dp = rt * (other.translation - self.translation);
        let dth = so3::log(&(rt * other.rotation));
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&dp);
        v.fixed_rows_mut::<3>(3).copy_from(&dth);
        v
    }

    pub fn rotation_angle(&self) -> f64 {
        so3::angle(&self.rotation)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Element of se(3) in `[rho; phi]` order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.rho, &self.phi)
    }
}

/// Body-centric velocity `[nu; omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    /// Linear velocity, m/s.
    pub nu: Vector3<f64>,
    /// Angular velocity, rad/s.
    pub omega: Vector3<f64>,
}

impl BodyVelocity {
    pub fn new(nu: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { nu, omega }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.nu, &self.omega)
    }
}

pub fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// 4x4 `xi^` hat operator is never materialized; this is the 6x6 `xi^curlywedge`.
pub fn adjoint_curlywedge(xi: &Vector6<f64>) -> Matrix6<f64> {
    let rho = skew(&xi.fixed_rows::<3>(0).into());
    let phi = skew(&xi.fixed_rows::<3>(3).into());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&phi);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&rho);
    m
}

pub fn exp_se3(xi: &Twist) -> Pose {
    Pose::new(so3::exp(&xi.phi), so3::left_jacobian(&xi.phi) * xi.rho)
}

pub fn log_se3(t: &Pose) -> Result<Twist> {
    let angle = t.rotation_angle();
    if angle >= LOG_ANGLE_LIMIT {
        return Err(Error::NearPiRotation { angle });
    }
    let phi = so3::log(&t.rotation);
    let rho = so3::left_jacobian_inv(&phi) * t.translation;
    Ok(Twist::new(rho, phi))
}

/// `exp` on a stacked 6-vector.
pub fn expv(xi: &Vector6<f64>) -> Pose {
    exp_se3(&Twist::from_vector(xi))
}

/// `log` returning a stacked 6-vector.
pub fn logv(t: &Pose) -> Result<Vector6<f64>> {
    log_se3(t).map(|x| x.to_vector())
}

/// How the SE(3) left Jacobian (and its inverse) is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Closed-form expressions.
    #[default]
    Exact,
    /// First-order: `J ~ 1 + xi^/2`, `J^-1 ~ 1 - xi^/2`.
    Approx,
}

/// Coupling block `Q(rho, phi)` of the SE(3) left Jacobian.
fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = phi.norm_squared();
    let th = th2.sqrt();
    let rx = skew(rho);
    let px = skew(phi);
    let (c1, c2, c3) = if th < 1e-3 {
        // Series of the three closed-form coefficients; the closed forms
        // cancel catastrophically here.
        let t4 = th2 * th2;
        (
            1.0 / 6.0 - th2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - th2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - th2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = th.sin_cos();
        let t3 = th2 * th;
        (
            (th - s) / t3,
            (th2 + 2.0 * c - 2.0) / (2.0 * th2 * th2),
            (2.0 * th - 3.0 * s + th * c) / (2.0 * th2 * t3),
        )
    };
    let pr = px * rx;
    let rp = rx * px;
    let prp = pr * px;
    0.5 * rx + c1 * (pr + rp + prp) + c2 * (px * pr + rp * px - 3.0 * prp) + c3 * (prp * px + px * prp)
}

pub fn left_jacobian_se3(xi: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    match mode {
        JacobianMode::Approx => Matrix6::identity() + 0.5 * adjoint_curlywedge(xi),
        JacobianMode::Exact => {
            let rho: Vector3<f64> = xi.fixed_rows::<3>(0).into();
            let phi: Vector3<f64> = xi.fixed_rows::<3>(3).into();
            let j = so3::left_jacobian(&phi);
            let mut out = Matrix6::zeros();
            out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
            out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
            out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q_block(&rho, &phi));
            out
        }
    }
}

pub fn left_jacobian_inv_se3(xi: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    match mode {
        JacobianMode::Approx => Matrix6::identity() - 0.5 * adjoint_curlywedge(xi),
        JacobianMode::Exact => {
            let rho: Vector3<f64> = xi.fixed_rows::<3>(0).into();
            let phi: Vector3<f64> = xi.fixed_rows::<3>(3).into();
            let ji = so3::left_jacobian_inv(&phi);
            let mut out = Matrix6::zeros();
            out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
            out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
            out.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(-ji * q_block(&rho, &phi) * ji));
            out
        }
    }
}

pub fn right_jacobian_se3(xi: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    left_jacobian_se3(&-xi, mode)
}

pub fn right_jacobian_inv_se3(xi: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    left_jacobian_inv_se3(&-xi, mode)
}

/// Which Jacobian a power series in `xi^curlywedge` represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSeries {
    Left,
    LeftInverse,
}

const MAX_SERIES_TERMS: usize = 80;

fn series_coefficients(kind: JacobianSeries, mode: JacobianMode) -> &'static [f64] {
    use std::sync::OnceLock;
    static LEFT: OnceLock<Vec<f64>> = OnceLock::new();
    static LEFT_INV: OnceLock<Vec<f64>> = OnceLock::new();
    const LEFT_APPROX: [f64; 2] = [1.0, 0.5];
    const LEFT_INV_APPROX: [f64; 2] = [1.0, -0.5];
    match (kind, mode) {
        (JacobianSeries::Left, JacobianMode::Approx) => &LEFT_APPROX,
        (JacobianSeries::LeftInverse, JacobianMode::Approx) => &LEFT_INV_APPROX,
        (JacobianSeries::Left, JacobianMode::Exact) => LEFT.get_or_init(|| {
            // 1 / (n + 1)!
            let mut c = Vec::with_capacity(MAX_SERIES_TERMS);
            let mut f = 1.0;
            for n in 0..MAX_SERIES_TERMS {
                f /= (n + 1) as f64;
                c.push(f);
            }
            c
        }),
        (JacobianSeries::LeftInverse, JacobianMode::Exact) => LEFT_INV.get_or_init(bernoulli_over_factorial),
    }
}

/// `B_n / n!`, the Taylor coefficients of `x / (e^x - 1)`.
fn bernoulli_over_factorial() -> Vec<f64> {
    let mut inv_fact = vec![1.0f64; MAX_SERIES_TERMS + 2];
    for k in 1..inv_fact.len() {
        inv_fact[k] = inv_fact[k - 1] / k as f64;
    }
    let mut a = vec![0.0f64; MAX_SERIES_TERMS];
    a[0] = 1.0;
    for n in 1..MAX_SERIES_TERMS {
        let mut s = 0.0;
        for (k, ak) in a.iter().enumerate().take(n) {
            s += ak * inv_fact[n - k + 1];
        }
        a[n] = -s;
    }
    // Odd Bernoulli numbers past B_1 vanish; clear round-off.
    for (n, v) in a.iter_mut().enumerate() {
        if n > 1 && n % 2 == 1 {
            *v = 0.0;
        }
    }
    a
}

fn terms_needed(xi: &Vector6<f64>, coeffs: &[f64]) -> usize {
    let theta = xi.fixed_rows::<3>(3).norm();
    let scale = theta.max(xi.fixed_rows::<3>(0).norm() * 1e-3).max(1e-12);
    // Smallest n after which |c_n| theta^n (n + 1) stays below 1e-18.
    let mut n = 1;
    let mut pw = 1.0;
    while n < coeffs.len() {
        pw *= scale;
        let tail = (coeffs[n].abs().max(coeffs.get(n + 1).map_or(0.0, |c| c.abs()))) * pw * (n + 2) as f64;
        if tail < 1e-18 && n >= 2 {
            break;
        }
        n += 1;
    }
    (n + 1).min(coeffs.len())
}

/// Evaluates `J(xi) v` (or `J(xi)^-1 v`) through its power series in `xi^curlywedge`.
pub fn jacobian_series_apply(xi: &Vector6<f64>, v: &Vector6<f64>, kind: JacobianSeries, mode: JacobianMode) -> Vector6<f64> {
    let coeffs = series_coefficients(kind, mode);
    let n = terms_needed(xi, coeffs);
    let a = adjoint_curlywedge(xi);
    let mut w = *v;
    let mut out = coeffs[0] * w;
    for c in coeffs.iter().take(n).skip(1) {
        w = a * w;
        out += *c * w;
    }
    out
}

/// Derivative of `J(xi) v` (or `J(xi)^-1 v`) with respect to `xi`, for fixed `v`.
///
/// With `A = xi^curlywedge`, `d(A^n v) = -sum_k A^k (A^(n-1-k) v)^curlywedge dxi`.
pub fn jacobian_series_derivative(xi: &Vector6<f64>, v: &Vector6<f64>, kind: JacobianSeries, mode: JacobianMode) -> Matrix6<f64> {
    let coeffs = series_coefficients(kind, mode);
    let n = terms_needed(xi, coeffs);
    if n < 2 {
        return Matrix6::zeros();
    }
    let a = adjoint_curlywedge(xi);
    // w_m = A^m v for m = 0..n-2
    let mut ws = Vec::with_capacity(n - 1);
    let mut w = *v;
    for _ in 0..n - 1 {
        ws.push(w);
        w = a * w;
    }
    // P_m = sum_{k>m} c_k A^(k-1-m), evaluated by Horner from the top.
    let mut p = coeffs[n - 1] * Matrix6::identity();
    let mut out = -p * adjoint_curlywedge(&ws[n - 2]);
    for m in (0..n - 2).rev() {
        p = coeffs[m + 1] * Matrix6::identity() + a * p;
        out -= p * adjoint_curlywedge(&ws[m]);
    }
    out
}

/// `d(J_r(xi) v)/dxi`, where `J_r(xi) = J_l(-xi)`.
pub fn right_jacobian_derivative(xi: &Vector6<f64>, v: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    -jacobian_series_derivative(&-xi, v, JacobianSeries::Left, mode)
}

/// `d(J_r(xi)^-1 v)/dxi`.
pub fn right_jacobian_inv_derivative(xi: &Vector6<f64>, v: &Vector6<f64>, mode: JacobianMode) -> Matrix6<f64> {
    -jacobian_series_derivative(&-xi, v, JacobianSeries::LeftInverse, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Vector6<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let phi = axis * rng.random_range(0.0..max_angle);
        let rho = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        stack(&rho, &phi)
    }

    #[test]
    fn zero_and_translation() {
        let t = exp_se3(&Twist::default());
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
        let t = exp_se3(&Twist::new(Vector3::x(), Vector3::zeros()));
        assert_eq!(t.translation, Vector3::x());
        assert_eq!(t.rotation, Matrix3::identity());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, PI - 0.1);
            let t = expv(&xi);
            let back = logv(&t).unwrap();
            assert_abs_diff_eq!(back, xi, epsilon = 1e-10);
            let t2 = expv(&back);
            assert_abs_diff_eq!(t2.rotation, t.rotation, epsilon = 1e-10);
            assert_abs_diff_eq!(t2.translation, t.translation, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_rejects_near_pi() {
        let t = Pose::new(so3::exp(&Vector3::new(0.0, 0.0, PI - 1e-8)), Vector3::zeros());
        assert!(matches!(log_se3(&t), Err(Error::NearPiRotation { .. })));
    }

    #[test]
    fn curlywedge_cases() {
        assert_eq!(adjoint_curlywedge(&Vector6::zeros()), Matrix6::zeros());
        let m = adjoint_curlywedge(&stack(&Vector3::zeros(), &Vector3::z()));
        let k = skew(&Vector3::z());
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), k);
        assert_eq!(m.fixed_view::<3, 3>(3, 3).into_owned(), k);
        assert_eq!(m.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
        assert_eq!(m.fixed_view::<3, 3>(3, 0).into_owned(), Matrix3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 3.0);
            assert_abs_diff_eq!(adjoint_curlywedge(&xi) * xi, Vector6::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_identities() {
        for mode in [JacobianMode::Exact, JacobianMode::Approx] {
            assert_eq!(left_jacobian_se3(&Vector6::zeros(), mode), Matrix6::identity());
            assert_eq!(left_jacobian_inv_se3(&Vector6::zeros(), mode), Matrix6::identity());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 2.0);
            let j = left_jacobian_se3(&xi, JacobianMode::Exact);
            let ji = left_jacobian_inv_se3(&xi, JacobianMode::Exact);
            assert_abs_diff_eq!(j * ji, Matrix6::identity(), epsilon = 1e-9);
        }
    }

    #[test]
    fn left_jacobian_first_order_property() {
        // exp(xi + d) ~ exp(J_l d) exp(xi)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let xi = random_twist(&mut rng, 2.0);
            let d = random_twist(&mut rng, 1.0) * 1e-6;
            let lhs = expv(&(xi + d));
            let rhs = expv(&(left_jacobian_se3(&xi, JacobianMode::Exact) * d)) * expv(&xi);
            assert_abs_diff_eq!(lhs.rotation, rhs.rotation, epsilon = 1e-11);
            assert_abs_diff_eq!(lhs.translation, rhs.translation, epsilon = 1e-10);
        }
    }

    #[test]
    fn approximate_inverse_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut xi = random_twist(&mut rng, 0.3);
            let n = xi.norm();
            if n >= 0.3 {
                xi *= 0.29 / n;
            }
            let e = left_jacobian_inv_se3(&xi, JacobianMode::Exact) - left_jacobian_inv_se3(&xi, JacobianMode::Approx);
            // Leading neglected term is (1/12) (xi^curlywedge)^2.
            let ad = adjoint_curlywedge(&xi);
            let series_leading = ad * ad / 12.0;
            assert!((e - series_leading).norm() <= 1e-3 * xi.norm().powi(2) + 1e-12);
            assert!(e.norm() < 0.05 * xi.norm_squared() + 1e-15);
        }
    }

    #[test]
    fn adjoint_matches_exponential_of_curlywedge() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut xi = random_twist(&mut rng, 0.9);
            xi /= xi.norm().max(1.0);
            let ad = expv(&xi).adjoint();
            // Matrix exponential by truncated series.
            let a = adjoint_curlywedge(&xi);
            let mut term = Matrix6::identity();
            let mut sum = Matrix6::identity();
            for k in 1..40 {
                term = term * a / k as f64;
                sum += term;
            }
            assert_abs_diff_eq!(ad, sum, epsilon = 1e-8);
        }
    }

    #[test]
    fn composition_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = expv(&random_twist(&mut rng, 3.0));
            let b = expv(&random_twist(&mut rng, 3.0));
            let c = expv(&random_twist(&mut rng, 3.0));
            let l = (a * b) * c;
            let r = a * (b * c);
            assert_abs_diff_eq!(l.rotation, r.rotation, epsilon = 1e-12);
            assert_abs_diff_eq!(l.translation, r.translation, epsilon = 1e-12);
        }
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let step = expv(&stack(&Vector3::new(0.1, 0.0, 0.02), &Vector3::new(0.013, -0.007, 0.011)));
        let mut t = Pose::identity();
        for _ in 0..10_000 {
            t = t * step;
        }
        let r = t.rotation;
        assert_abs_diff_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn series_agree_with_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let xi = random_twist(&mut rng, 2.0);
            let v = random_twist(&mut rng, 2.0);
            let a = jacobian_series_apply(&xi, &v, JacobianSeries::Left, JacobianMode::Exact);
            assert_abs_diff_eq!(a, left_jacobian_se3(&xi, JacobianMode::Exact) * v, epsilon = 1e-10);
            let b = jacobian_series_apply(&xi, &v, JacobianSeries::LeftInverse, JacobianMode::Exact);
            assert_abs_diff_eq!(b, left_jacobian_inv_se3(&xi, JacobianMode::Exact) * v, epsilon = 1e-10);
        }
    }

    #[test]
    fn series_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-4;
        for mode in [JacobianMode::Exact, JacobianMode::Approx] {
            for _ in 0..20 {
                let xi = random_twist(&mut rng, 1.5);
                let v = random_twist(&mut rng, 2.0);
                let f_inv = |x: &Vector6<f64>| right_jacobian_inv_se3(x, mode) * v;
                let f = |x: &Vector6<f64>| right_jacobian_se3(x, mode) * v;
                let d_inv = right_jacobian_inv_derivative(&xi, &v, mode);
                let d = right_jacobian_derivative(&xi, &v, mode);
                for k in 0..6 {
                    let mut e = Vector6::zeros();
                    e[k] = h;
                    let fd_inv = (f_inv(&(xi + e)) - f_inv(&(xi - e))) / (2.0 * h);
                    let fd = (f(&(xi + e)) - f(&(xi - e))) / (2.0 * h);
                    assert_abs_diff_eq!(d_inv.column(k).into_owned(), fd_inv, epsilon = 1e-6);
                    assert_abs_diff_eq!(d.column(k).into_owned(), fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn retract_local_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = expv(&random_twist(&mut rng, 3.0));
            let d = random_twist(&mut rng, 2.5);
            let back = t.local(&t.retract(&d));
            assert_abs_diff_eq!(back, d, epsilon = 1e-10);
        }
    }

    proptest::proptest! {
        #[test]
        fn exp_log_round_trip_anywhere(v in proptest::array::uniform6(-1.0f64..1.0), scale in 0.0f64..3.0) {
            let xi = Vector6::from_column_slice(&v) * scale;
            proptest::prop_assume!(xi.fixed_rows::<3>(3).norm() < 3.0);
            let back = logv(&expv(&xi)).unwrap();
            proptest::prop_assert!((back - xi).norm() < 1e-9);
        }

        #[test]
        fn adjoint_moves_twists_across_poses(v in proptest::array::uniform6(-1.0f64..1.0), w in proptest::array::uniform6(-1.0f64..1.0)) {
            let t = expv(&Vector6::from_column_slice(&v));
            let xi = Vector6::from_column_slice(&w);
            let lhs = t * expv(&xi) * t.inverse();
            let rhs = expv(&(t.adjoint() * xi));
            proptest::prop_assert!(crate::lie::pose_distance(&lhs, &rhs) < 1e-9);
        }
    }
}
