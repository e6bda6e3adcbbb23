use nalgebra::{SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{idx, STATE_DIM};
use crate::error::Result;
use crate::gp::{query_state_with_jacobians, GpKnot, InterpKernel};
use crate::lie::{JacobianMode, Pose};

pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type StateVector = SVector<f64, STATE_DIM>;

/// Receiver clock bias (m) and drift (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockState {
    pub bias_m: f64,
    pub drift_mps: f64,
}

impl ClockState {
    pub fn new(bias_m: f64, drift_mps: f64) -> Self {
        Self { bias_m, drift_mps }
    }

    /// Constant-drift propagation over `dt`.
    pub fn propagate(&self, dt: f64) -> Self {
        Self::new(self.bias_m + dt * self.drift_mps, self.drift_mps)
    }
}

/// Estimation unknown at one timestamp.
///
/// `body_velocity` is `[nu; omega]` in the body frame; the world-frame linear
/// velocity is `R nu`. `accel_input` is the IMU-derived body acceleration used
/// by the jerk prior and is never estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavState {
    pub timestamp: f64,
    pub pose: Pose,
    pub body_velocity: Vector6<f64>,
    pub accel_input: Vector6<f64>,
    pub bias_acc: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub clock: ClockState,
}

impl NavState {
    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation
    }

    pub fn rotation(&self) -> nalgebra::Matrix3<f64> {
        self.pose.rotation
    }

    pub fn nu(&self) -> Vector3<f64> {
        self.body_velocity.fixed_rows::<3>(0).into_owned()
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.body_velocity.fixed_rows::<3>(3).into_owned()
    }

    /// Linear velocity in the world frame.
    pub fn world_velocity(&self) -> Vector3<f64> {
        self.pose.rotation * self.nu()
    }

    pub fn knot(&self) -> GpKnot {
        GpKnot {
            pose: self.pose,
            velocity: self.body_velocity,
            accel: self.accel_input,
        }
    }

    /// Applies a tangent increment of length 18 (no clock) or 20.
    pub fn retract(&self, delta: &[f64]) -> NavState {
        let v3 = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        let mut pose_delta = Vector6::zeros();
        pose_delta.fixed_rows_mut::<3>(0).copy_from(&v3(idx::POS));
        pose_delta.fixed_rows_mut::<3>(3).copy_from(&v3(idx::ROT));
        let mut out = *self;
        out.pose = self.pose.retract(&pose_delta);
        for k in 0..6 {
            out.body_velocity[k] += delta[idx::NU + k];
        }
        out.bias_acc += v3(idx::BIAS_ACC);
        out.bias_gyro += v3(idx::BIAS_GYRO);
        if delta.len() > idx::CLOCK_DRIFT {
            out.clock.bias_m += delta[idx::CLOCK_BIAS];
            out.clock.drift_mps += delta[idx::CLOCK_DRIFT];
        }
        out
    }

    /// Inverse of [`NavState::retract`] for the full 20-dimensional tangent.
    pub fn local(&self, other: &NavState) -> StateVector {
        let mut d = StateVector::zeros();
        d.fixed_rows_mut::<6>(idx::POS).copy_from(&self.pose.local(&other.pose));
        d.fixed_rows_mut::<6>(idx::NU).copy_from(&(other.body_velocity - self.body_velocity));
        d.fixed_rows_mut::<3>(idx::BIAS_ACC).copy_from(&(other.bias_acc - self.bias_acc));
        d.fixed_rows_mut::<3>(idx::BIAS_GYRO).copy_from(&(other.bias_gyro - self.bias_gyro));
        d[idx::CLOCK_BIAS] = other.clock.bias_m - self.clock.bias_m;
        d[idx::CLOCK_DRIFT] = other.clock.drift_mps - self.clock.drift_mps;
        d
    }
}

/// A state queried between two knots, with Jacobians w.r.t. both knots.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedNav {
    pub state: NavState,
    pub jac_i: StateJacobian,
    pub jac_j: StateJacobian,
}

/// Queries the full navigation state inside a segment.
///
/// Pose and velocity follow the GP; biases are held at `x_i`; the clock is
/// interpolated linearly.
pub fn interpolate_nav(x_i: &NavState, x_j: &NavState, kernel: &InterpKernel, mode: JacobianMode) -> Result<InterpolatedNav> {
    let gp = query_state_with_jacobians(&x_i.knot(), &x_j.knot(), kernel, mode)?;
    let alpha = kernel.tau / kernel.dt;
    let state = NavState {
        timestamp: x_i.timestamp + kernel.tau,
        pose: gp.state.pose,
        body_velocity: gp.state.velocity,
        accel_input: x_i.accel_input,
        bias_acc: x_i.bias_acc,
        bias_gyro: x_i.bias_gyro,
        clock: ClockState::new(
            (1.0 - alpha) * x_i.clock.bias_m + alpha * x_j.clock.bias_m,
            (1.0 - alpha) * x_i.clock.drift_mps + alpha * x_j.clock.drift_mps,
        ),
    };
    let mut jac_i = StateJacobian::zeros();
    let mut jac_j = StateJacobian::zeros();
    jac_i.fixed_view_mut::<12, 12>(0, 0).copy_from(&gp.jac_i);
    jac_j.fixed_view_mut::<12, 12>(0, 0).copy_from(&gp.jac_j);
    for k in idx::BIAS_ACC..idx::CLOCK_BIAS {
        jac_i[(k, k)] = 1.0;
    }
    for k in idx::CLOCK_BIAS..STATE_DIM {
        jac_i[(k, k)] = 1.0 - alpha;
        jac_j[(k, k)] = alpha;
    }
    Ok(InterpolatedNav { state, jac_i, jac_j })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::testing::{random_local_state, random_state, rng};
    use crate::gp::GpModel;
    use crate::lie::expv;
    use approx::assert_abs_diff_eq;

    #[test]
    fn retract_local_round_trip() {
        let mut r = rng(1);
        for _ in 0..20 {
            let a = random_state(&mut r);
            let b = random_state(&mut r);
            let d = a.local(&b);
            let back = a.retract(d.as_slice());
            assert!((back.position() - b.position()).norm() < 1e-6);
            assert_abs_diff_eq!(back.rotation(), b.rotation(), epsilon = 1e-9);
            assert_abs_diff_eq!(back.clock.bias_m, b.clock.bias_m, epsilon = 1e-9);
        }
    }

    #[test]
    fn short_retract_leaves_clock() {
        let mut r = rng(2);
        let a = random_state(&mut r);
        let b = a.retract(&[0.1; 18]);
        assert_eq!(a.clock, b.clock);
    }

    #[test]
    fn interpolation_jacobians_match_finite_differences() {
        let mut r = rng(3);
        for model in [GpModel::Wnoa, GpModel::Wnoj] {
            let kernel = InterpKernel::new(0.04, 0.1, model).unwrap();
            for _ in 0..10 {
                let a = random_local_state(&mut r);
                let mut b = random_local_state(&mut r);
                b.pose = a.pose * expv(&(a.body_velocity * 0.1));
                let q = interpolate_nav(&a, &b, &kernel, JacobianMode::Exact).unwrap();
                let base = q.state;
                let f = |s: &[NavState]| {
                    let st = interpolate_nav(&s[0], &s[1], &kernel, JacobianMode::Exact).unwrap().state;
                    nalgebra::DVector::from_column_slice(base.local(&st).as_slice())
                };
                let to_dyn = |m: &StateJacobian| nalgebra::DMatrix::from_column_slice(STATE_DIM, STATE_DIM, m.as_slice());
                crate::factors::testing::check_jacobians(f, &[a, b], &[to_dyn(&q.jac_i), to_dyn(&q.jac_j)], 1e-6);
            }
        }
    }
}
