//! IMU preintegration on SO(3) with first-order bias correction.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{idx, zero_jacobian, FactorResidual, NavState};
use crate::error::{Error, Result};
use crate::geodesy::gravity_ecef;
use crate::lie::so3;

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Largest bias departure from the linearization point before the
/// preintegrated values must be rebuilt.
pub const BIAS_RELINEARIZE_THRESHOLD: f64 = 0.1;

/// Gravity applied over one preintegration interval: the value whose
/// single and double integrals match a gravity field varying linearly along
/// the interval (evaluated at 1/2 and 1/3 of the way).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalGravity {
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl IntervalGravity {
    pub fn uniform(g: Vector3<f64>) -> Self {
        Self { velocity: g, position: g }
    }

    /// Gravity along the straight-line motion of `x` over `dt`.
    pub fn along(x: &NavState, dt: f64) -> Self {
        let p = x.position();
        let v = x.world_velocity();
        Self {
            velocity: gravity_ecef(&(p + v * (dt / 2.0))),
            position: gravity_ecef(&(p + v * (dt / 3.0))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Continuous-time noise densities and bias random-walk intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoise {
    /// m/s^2/sqrt(Hz)
    pub accel_noise_density: f64,
    /// rad/s/sqrt(Hz)
    pub gyro_noise_density: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_bias_walk: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_noise_density: 2e-3,
            gyro_noise_density: 1e-4,
            accel_bias_walk: 1e-4,
            gyro_bias_walk: 1e-5,
        }
    }
}

/// First-order sensitivities of the preintegrated deltas to the biases.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiasJacobians {
    pub rot_gyro: Matrix3<f64>,
    pub vel_acc: Matrix3<f64>,
    pub vel_gyro: Matrix3<f64>,
    pub pos_acc: Matrix3<f64>,
    pub pos_gyro: Matrix3<f64>,
}

/// Preintegrated IMU increments between two states.
#[derive(Debug, Clone, PartialEq)]
pub struct Preintegrated {
    pub d_rot: Matrix3<f64>,
    pub d_vel: Vector3<f64>,
    pub d_pos: Vector3<f64>,
    pub dt_total: f64,
    /// Covariance of `[dR; dv; dp]`.
    pub covariance: Matrix9,
    pub bias_acc_lin: Vector3<f64>,
    pub bias_gyro_lin: Vector3<f64>,
    pub gravity: IntervalGravity,
    pub bias_jacobians: BiasJacobians,
}

/// Integrates `samples` over `[t_start, t_end]`.
///
/// Each sample is held until the next one; the first also covers any gap
/// before it and the last extends to `t_end`.
pub fn preintegrate(
    samples: &[ImuSample],
    t_start: f64,
    t_end: f64,
    bias_acc: &Vector3<f64>,
    bias_gyro: &Vector3<f64>,
    gravity: &IntervalGravity,
    noise: &ImuNoise,
) -> Result<Preintegrated> {
    if samples.is_empty() {
        return Err(Error::EmptyStream);
    }
    if let Some(k) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(Error::NonMonotoneTime(k + 1));
    }
    if t_end <= t_start {
        return Err(Error::NonPositiveDt(t_end - t_start));
    }
    let mut d_rot = Matrix3::identity();
    let mut d_vel = Vector3::zeros();
    let mut d_pos = Vector3::zeros();
    let mut cov = Matrix9::zeros();
    let mut bj = BiasJacobians::default();
    let eye = Matrix3::identity();
    for (k, s) in samples.iter().enumerate() {
        let seg_start = if k == 0 { t_start } else { s.t.max(t_start) };
        let seg_end = match samples.get(k + 1) {
            Some(next) => next.t.min(t_end),
            None => t_end,
        };
        let dt = seg_end - seg_start;
        if dt <= 0.0 {
            continue;
        }
        let acc = s.accel - bias_acc;
        let w = (s.gyro - bias_gyro) * dt;
        let inc = so3::exp(&w);
        let acc_skew = so3::skew(&acc);
        let dt2 = dt * dt;

        // Noise propagation in [dR, dv, dp] order.
        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&inc.transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-d_rot * acc_skew * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * d_rot * acc_skew * dt2));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(eye * dt));
        let mut b = SMatrix::<f64, 9, 3>::zeros();
        b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(d_rot * dt));
        b.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * d_rot * dt2));
        let mut c = SMatrix::<f64, 9, 3>::zeros();
        c.fixed_view_mut::<3, 3>(0, 0).copy_from(&(so3::right_jacobian(&w) * dt));
        let var_a = noise.accel_noise_density.powi(2) / dt;
        let var_g = noise.gyro_noise_density.powi(2) / dt;
        cov = a * cov * a.transpose() + var_a * b * b.transpose() + var_g * c * c.transpose();

        bj.pos_acc += bj.vel_acc * dt - 0.5 * d_rot * dt2;
        bj.pos_gyro += bj.vel_gyro * dt - 0.5 * d_rot * acc_skew * bj.rot_gyro * dt2;
        bj.vel_acc -= d_rot * dt;
        bj.vel_gyro -= d_rot * acc_skew * bj.rot_gyro * dt;
        bj.rot_gyro = inc.transpose() * bj.rot_gyro - so3::right_jacobian(&w) * dt;

        d_pos += d_vel * dt + 0.5 * d_rot * acc * dt2;
        d_vel += d_rot * acc * dt;
        d_rot *= inc;
    }
    Ok(Preintegrated {
        d_rot: so3::orthonormalize(&d_rot),
        d_vel,
        d_pos,
        dt_total: t_end - t_start,
        covariance: (cov + cov.transpose()) * 0.5,
        bias_acc_lin: *bias_acc,
        bias_gyro_lin: *bias_gyro,
        gravity: *gravity,
        bias_jacobians: bj,
    })
}

impl Preintegrated {
    /// Covariance as a dynamic matrix, with a small floor keeping it definite.
    pub fn covariance_dyn(&self) -> DMatrix<f64> {
        let mut m = DMatrix::from_column_slice(9, 9, self.covariance.as_slice());
        for k in 0..9 {
            m[(k, k)] += 1e-12;
        }
        m
    }

    /// Predicted state at the end of the interval, starting from `x_i`.
    pub fn predict(&self, x_i: &NavState) -> NavState {
        let (d_rot, d_vel, d_pos) = self.corrected(x_i);
        let dt = self.dt_total;
        let r_i = x_i.rotation();
        let v_i = x_i.world_velocity();
        let r_j = so3::orthonormalize(&(r_i * d_rot));
        let v_j = v_i + self.gravity.velocity * dt + r_i * d_vel;
        let p_j = x_i.position() + v_i * dt + 0.5 * self.gravity.position * dt * dt + r_i * d_pos;
        let mut out = *x_i;
        out.timestamp = x_i.timestamp + dt;
        out.pose = crate::lie::Pose::new(r_j, p_j);
        out.body_velocity.fixed_rows_mut::<3>(0).copy_from(&(r_j.transpose() * v_j));
        out.clock = x_i.clock.propagate(dt);
        out
    }

    /// Deltas corrected to first order for the biases of `x_i`.
    fn corrected(&self, x_i: &NavState) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
        let dba = x_i.bias_acc - self.bias_acc_lin;
        let dbg = x_i.bias_gyro - self.bias_gyro_lin;
        let bj = &self.bias_jacobians;
        (
            self.d_rot * so3::exp(&(bj.rot_gyro * dbg)),
            self.d_vel + bj.vel_acc * dba + bj.vel_gyro * dbg,
            self.d_pos + bj.pos_acc * dba + bj.pos_gyro * dbg,
        )
    }

    /// Bias departure from the linearization point (largest of the two blocks).
    pub fn bias_offset(&self, x_i: &NavState) -> f64 {
        (x_i.bias_acc - self.bias_acc_lin)
            .norm()
            .max((x_i.bias_gyro - self.bias_gyro_lin).norm())
    }
}

/// Residual `[r_dR; r_dv; r_dp]` between `x_i` and `x_j`.
pub fn imu_factor_residual(x_i: &NavState, x_j: &NavState, pre: &Preintegrated) -> Result<FactorResidual> {
    let offset = pre.bias_offset(x_i);
    if offset > BIAS_RELINEARIZE_THRESHOLD {
        return Err(Error::StaleBiasLinearization(offset));
    }
    let dt = pre.dt_total;
    let g = pre.gravity;
    let (r_i, r_j) = (x_i.rotation(), x_j.rotation());
    let (nu_i, nu_j) = (x_i.nu(), x_j.nu());
    let v_i = r_i * nu_i;
    let v_j = r_j * nu_j;
    let bj = &pre.bias_jacobians;
    let dbg = x_i.bias_gyro - pre.bias_gyro_lin;
    let (d_rot, d_vel, d_pos) = pre.corrected(x_i);

    let r_rot = so3::log(&(d_rot.transpose() * r_i.transpose() * r_j));
    let dv_world = v_j - v_i - g.velocity * dt;
    let dp_world = x_j.position() - x_i.position() - v_i * dt - 0.5 * g.position * dt * dt;
    let r_vel = r_i.transpose() * dv_world - d_vel;
    let r_pos = r_i.transpose() * dp_world - d_pos;

    let mut value = DVector::zeros(9);
    value.fixed_rows_mut::<3>(0).copy_from(&r_rot);
    value.fixed_rows_mut::<3>(3).copy_from(&r_vel);
    value.fixed_rows_mut::<3>(6).copy_from(&r_pos);

    let jr_inv = so3::right_jacobian_inv(&r_rot);
    let mut ji = zero_jacobian(9);
    let mut jj = zero_jacobian(9);
    let put = |m: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix3<f64>| {
        m.view_mut((r, c), (3, 3)).copy_from(b);
    };
    // Rotation rows.
    put(&mut ji, 0, idx::ROT, &(-jr_inv * r_j.transpose() * r_i));
    put(&mut jj, 0, idx::ROT, &jr_inv);
    let e_rot = so3::exp(&r_rot);
    put(
        &mut ji,
        0,
        idx::BIAS_GYRO,
        &(-jr_inv * e_rot.transpose() * so3::right_jacobian(&(bj.rot_gyro * dbg)) * bj.rot_gyro),
    );
    // Velocity rows.
    put(&mut ji, 3, idx::ROT, &(so3::skew(&(r_i.transpose() * dv_world)) + so3::skew(&nu_i)));
    put(&mut ji, 3, idx::NU, &(-Matrix3::identity()));
    put(&mut ji, 3, idx::BIAS_ACC, &(-bj.vel_acc));
    put(&mut ji, 3, idx::BIAS_GYRO, &(-bj.vel_gyro));
    let rij = r_i.transpose() * r_j;
    put(&mut jj, 3, idx::ROT, &(-rij * so3::skew(&nu_j)));
    put(&mut jj, 3, idx::NU, &rij);
    // Position rows.
    put(&mut ji, 6, idx::POS, &(-Matrix3::identity()));
    put(&mut ji, 6, idx::ROT, &(so3::skew(&(r_i.transpose() * dp_world)) + dt * so3::skew(&nu_i)));
    put(&mut ji, 6, idx::NU, &(-dt * Matrix3::identity()));
    put(&mut ji, 6, idx::BIAS_ACC, &(-bj.pos_acc));
    put(&mut ji, 6, idx::BIAS_GYRO, &(-bj.pos_gyro));
    put(&mut jj, 6, idx::POS, &rij);

    Ok(FactorResidual { value, jacobians: vec![ji, jj] })
}
