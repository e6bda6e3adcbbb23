//! Odometry, wheel-speed, bias random-walk and receiver-clock factors.

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{idx, zero_jacobian, FactorResidual, NavState};
use crate::error::Result;
use crate::lie::{left_jacobian_inv_se3, logv, right_jacobian_inv_se3, JacobianMode, Pose};

/// Relative pose between two times, `Delta = T_j^-1 T_i` when noise free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryIncrement {
    pub t_i: f64,
    pub t_j: f64,
    pub delta: Pose,
    pub covariance: Matrix6<f64>,
}

/// Planar body-frame speed measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub t: f64,
    pub v2d: Vector2<f64>,
    pub lever_arm: Vector3<f64>,
    /// Angular rate used in the lever-arm term (known input).
    pub gyro_at_t: Vector3<f64>,
}

/// `log(T_i^-1 T_j Delta)`.
pub fn between_pose_residual(x_i: &NavState, x_j: &NavState, odo: &OdometryIncrement) -> Result<FactorResidual> {
    let r = logv(&(x_i.pose.inverse() * x_j.pose * odo.delta))?;
    let mut ji = zero_jacobian(6);
    let mut jj = zero_jacobian(6);
    ji.view_mut((0, idx::POS), (6, 6))
        .copy_from(&(-left_jacobian_inv_se3(&r, JacobianMode::Exact)));
    jj.view_mut((0, idx::POS), (6, 6))
        .copy_from(&(right_jacobian_inv_se3(&r, JacobianMode::Exact) * odo.delta.inverse().adjoint()));
    Ok(FactorResidual {
        value: DVector::from_column_slice(r.as_slice()),
        jacobians: vec![ji, jj],
    })
}

/// First two rows of `(nu + omega x l) - v~`.
pub fn velocity2d_residual(x: &NavState, s: &SpeedSample) -> FactorResidual {
    let pred = x.nu() + s.gyro_at_t.cross(&s.lever_arm);
    let value = DVector::from_vec(vec![pred[0] - s.v2d[0], pred[1] - s.v2d[1]]);
    let mut jac = zero_jacobian(2);
    jac[(0, idx::NU)] = 1.0;
    jac[(1, idx::NU + 1)] = 1.0;
    FactorResidual { value, jacobians: vec![jac] }
}

/// Bias random-walk residual `[b_a,j - b_a,i; b_g,j - b_g,i]`.
pub fn bias_residual(x_i: &NavState, x_j: &NavState) -> FactorResidual {
    let mut value = DVector::zeros(6);
    value.fixed_rows_mut::<3>(0).copy_from(&(x_j.bias_acc - x_i.bias_acc));
    value.fixed_rows_mut::<3>(3).copy_from(&(x_j.bias_gyro - x_i.bias_gyro));
    let mut ji = zero_jacobian(6);
    let mut jj = zero_jacobian(6);
    for k in 0..6 {
        ji[(k, idx::BIAS_ACC + k)] = -1.0;
        jj[(k, idx::BIAS_ACC + k)] = 1.0;
    }
    FactorResidual { value, jacobians: vec![ji, jj] }
}

/// Diagonal bias random-walk covariance over `dt`.
pub fn bias_covariance(accel_bias_walk: f64, gyro_bias_walk: f64, dt: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(6, 6);
    for k in 0..3 {
        m[(k, k)] = accel_bias_walk.powi(2) * dt;
        m[(k + 3, k + 3)] = gyro_bias_walk.powi(2) * dt;
    }
    m
}

/// Constant-drift clock residual `[[1, dt], [0, 1]] c_i - c_j`.
pub fn clock_residual(x_i: &NavState, x_j: &NavState, dt: f64) -> FactorResidual {
    let pred = x_i.clock.propagate(dt);
    let value = DVector::from_vec(vec![pred.bias_m - x_j.clock.bias_m, pred.drift_mps - x_j.clock.drift_mps]);
    let mut ji = zero_jacobian(2);
    let mut jj = zero_jacobian(2);
    ji[(0, idx::CLOCK_BIAS)] = 1.0;
    ji[(0, idx::CLOCK_DRIFT)] = dt;
    ji[(1, idx::CLOCK_DRIFT)] = 1.0;
    jj[(0, idx::CLOCK_BIAS)] = -1.0;
    jj[(1, idx::CLOCK_DRIFT)] = -1.0;
    FactorResidual { value, jacobians: vec![ji, jj] }
}

/// Covariance of the clock residual for white bias and drift noise intensities.
pub fn clock_covariance(bias_psd: f64, drift_psd: f64, dt: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            bias_psd * dt + drift_psd * dt.powi(3) / 3.0,
            drift_psd * dt * dt / 2.0,
            drift_psd * dt * dt / 2.0,
            drift_psd * dt,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::testing::{check_jacobians, random_state, rng, v3};
    use crate::factors::ClockState;
    use crate::lie::expv;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector6;
    use rand::Rng;

    fn odo(delta: Pose) -> OdometryIncrement {
        OdometryIncrement { t_i: 0.0, t_j: 0.1, delta, covariance: Matrix6::identity() }
    }

    #[test]
    fn between_consistent_and_translation() {
        let mut r = rng(21);
        let a = random_state(&mut r);
        let b = random_state(&mut r);
        let res = between_pose_residual(&a, &b, &odo(b.pose.inverse() * a.pose)).unwrap();
        assert!(res.value.norm() < 1e-8);

        let id = NavState::default();
        let res = between_pose_residual(&id, &id, &odo(Pose::from_translation(Vector3::x()))).unwrap();
        assert_abs_diff_eq!(res.value, DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn between_jacobians_match_finite_differences() {
        let mut r = rng(22);
        for _ in 0..50 {
            let a = random_state(&mut r);
            let mut b = a;
            b.pose = a.pose * expv(&Vector6::from_fn(|_, _| r.random_range(-1.0..1.0)));
            let noise = expv(&Vector6::from_fn(|_, _| r.random_range(-0.2..0.2)));
            let o = odo(b.pose.inverse() * a.pose * noise);
            let res = between_pose_residual(&a, &b, &o).unwrap();
            let f = |s: &[NavState]| between_pose_residual(&s[0], &s[1], &o).unwrap().value;
            check_jacobians(f, &[a, b], &res.jacobians, 1e-4);
        }
    }

    #[test]
    fn speed_cases() {
        let mut x = NavState::default();
        x.body_velocity[0] = 5.0;
        let s = SpeedSample { t: 0.0, v2d: Vector2::new(5.0, 0.0), lever_arm: Vector3::zeros(), gyro_at_t: Vector3::zeros() };
        assert_eq!(velocity2d_residual(&x, &s).value, DVector::zeros(2));

        let x = NavState::default();
        let v = Vector2::new(0.3, -0.2);
        let s = SpeedSample { t: 0.0, v2d: v, lever_arm: Vector3::new(0.0, -1.0, 0.0), gyro_at_t: Vector3::z() };
        let res = velocity2d_residual(&x, &s);
        assert_abs_diff_eq!(res.value, DVector::from_vec(vec![1.0 - v[0], -v[1]]), epsilon = 1e-15);
    }

    #[test]
    fn speed_jacobian_matches_finite_differences() {
        let mut r = rng(23);
        for _ in 0..50 {
            let x = random_state(&mut r);
            let s = SpeedSample { t: 0.0, v2d: Vector2::new(3.0, 0.1), lever_arm: v3(&mut r, 1.0), gyro_at_t: v3(&mut r, 0.5) };
            let res = velocity2d_residual(&x, &s);
            check_jacobians(|st: &[NavState]| velocity2d_residual(&st[0], &s).value, &[x], &res.jacobians, 1e-6);
        }
    }

    #[test]
    fn bias_cases() {
        let mut r = rng(24);
        let a = random_state(&mut r);
        assert_eq!(bias_residual(&a, &a).value, DVector::zeros(6));
        let mut b = a;
        b.bias_acc += Vector3::new(1e-3, 0.0, 0.0);
        let res = bias_residual(&a, &b);
        assert_abs_diff_eq!(res.value[0], 1e-3, epsilon = 1e-15);
        for k in 0..6 {
            assert_eq!(res.jacobians[0][(k, idx::BIAS_ACC + k)], -1.0);
            assert_eq!(res.jacobians[1][(k, idx::BIAS_ACC + k)], 1.0);
        }
        assert_eq!(res.jacobians[0].iter().filter(|v| **v != 0.0).count(), 6);
    }

    #[test]
    fn clock_cases() {
        let mut a = NavState::default();
        a.clock = ClockState::new(5.0, 2.0);
        let mut b = a;
        b.clock = a.clock.propagate(0.5);
        assert_eq!(clock_residual(&a, &b, 0.5).value, DVector::zeros(2));

        a.clock = ClockState::new(0.0, 1.0);
        b.clock = ClockState::new(0.0, 1.0);
        let res = clock_residual(&a, &b, 1.0);
        assert_eq!(res.value, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(res.jacobians[0][(0, idx::CLOCK_DRIFT)], 1.0);
        assert_eq!(res.jacobians[1][(1, idx::CLOCK_DRIFT)], -1.0);
        let cov = clock_covariance(0.5, 0.1, 0.1);
        assert!(cov.clone().cholesky().is_some());
    }
}
