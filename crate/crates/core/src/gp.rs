//! Gaussian-process motion priors (WNOA / WNOJ) on SE(3).
//!
//! Between two knots `x_i`, `x_j` the trajectory is lifted into the local
//! tangent frame of `x_i`, `xi(t) = ln(T_i^-1 T(t))`, where it follows a
//! linear time-invariant SDE. Poses are body-to-world and velocities are
//! body-centric, so `xi_dot = J_r(xi)^-1 varpi` uses the right Jacobian; this is
//! the mirror image of the world-to-body form (negate `xi` and `varpi`), with
//! identical whitened costs.
//!
//! All kernel matrices are Kronecker products of a small scalar matrix with
//! the 6x6 identity (or `Q_c`), so interpolation weights do not depend on `Q_c`.

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{
    adjoint_curlywedge, expv, left_jacobian_inv_se3, logv, right_jacobian_derivative,
    right_jacobian_inv_derivative, right_jacobian_inv_se3, right_jacobian_se3, JacobianMode, Pose,
};

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

/// Order of the motion prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpModel {
    /// White noise on acceleration (constant-velocity prior), state `[xi; xi_dot]`.
    Wnoa,
    /// White noise on jerk, state `[xi; xi_dot; xi_ddot]`.
    #[default]
    Wnoj,
}

impl GpModel {
    /// Number of 6-D blocks in the local state.
    pub fn order(self) -> usize {
        match self {
            GpModel::Wnoa => 2,
            GpModel::Wnoj => 3,
        }
    }

    pub fn state_dim(self) -> usize {
        6 * self.order()
    }
}

impl std::str::FromStr for GpModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wnoa" => Ok(GpModel::Wnoa),
            "wnoj" => Ok(GpModel::Wnoj),
            other => Err(Error::config("gp", format!("unknown model `{other}`"))),
        }
    }
}

/// Power spectral density `Q_c = diag(qc_diag)` and prior order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpHyperparams {
    pub qc_diag: Vector6<f64>,
    pub model: GpModel,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            qc_diag: Vector6::repeat(1.0),
            model: GpModel::Wnoj,
        }
    }
}

impl GpHyperparams {
    pub fn new(qc_diag: Vector6<f64>, model: GpModel) -> Result<Self> {
        if qc_diag.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(Error::config("gp.qc", "power spectral densities must be strictly positive"));
        }
        Ok(Self { qc_diag, model })
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveDt(dt))
    }
}

/// Per-axis transition matrix (`order x order`).
pub fn scalar_transition(dt: f64, order: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(order, order);
    for r in 0..order {
        let mut f = 1.0;
        for c in r + 1..order {
            f *= dt / (c - r) as f64;
            m[(r, c)] = f;
        }
    }
    m
}

/// Per-axis covariance and precision for unit spectral density.
pub fn scalar_q(dt: f64, order: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d2, d3) = (dt * dt, dt * dt * dt);
    match order {
        2 => (
            DMatrix::from_row_slice(2, 2, &[d3 / 3.0, d2 / 2.0, d2 / 2.0, dt]),
            DMatrix::from_row_slice(2, 2, &[12.0 / d3, -6.0 / d2, -6.0 / d2, 4.0 / dt]),
        ),
        3 => {
            let (d4, d5) = (d3 * dt, d3 * d2);
            (
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[d5 / 20.0, d4 / 8.0, d3 / 6.0, d4 / 8.0, d3 / 3.0, d2 / 2.0, d3 / 6.0, d2 / 2.0, dt],
                ),
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[
                        720.0 / d5,
                        -360.0 / d4,
                        60.0 / d3,
                        -360.0 / d4,
                        192.0 / d3,
                        -36.0 / d2,
                        60.0 / d3,
                        -36.0 / d2,
                        9.0 / dt,
                    ],
                ),
            )
        }
        _ => unreachable!("prior order is 2 or 3"),
    }
}

/// `S (x) D` for a scalar block matrix `S` and 6x6 diagonal `D`.
fn kron_diag(s: &DMatrix<f64>, d: &Vector6<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let mut out = DMatrix::zeros(6 * n, 6 * n);
    for r in 0..n {
        for c in 0..n {
            for k in 0..6 {
                out[(6 * r + k, 6 * c + k)] = s[(r, c)] * d[k];
            }
        }
    }
    out
}

/// Transition matrix `Phi(dt)`; 12x12 (WNOA) or 18x18 (WNOJ).
pub fn make_transition(dt: f64, model: GpModel) -> Result<DMatrix<f64>> {
    check_dt(dt)?;
    Ok(kron_diag(&scalar_transition(dt, model.order()), &Vector6::repeat(1.0)))
}

/// Covariance `Q(dt)` and its closed-form inverse.
pub fn make_q(dt: f64, hyper: &GpHyperparams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dt(dt)?;
    let (q, qi) = scalar_q(dt, hyper.model.order());
    let inv_qc = hyper.qc_diag.map(|v| 1.0 / v);
    Ok((kron_diag(&q, &hyper.qc_diag), kron_diag(&qi, &inv_qc)))
}

/// Scalar interpolation weights `(Lambda, Omega)` at offset `tau` into a segment of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpKernel {
    pub tau: f64,
    pub dt: f64,
    pub lambda: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

impl InterpKernel {
    /// Builds the weights; accepts the closed interval so endpoint limits can be probed.
    pub fn new(tau: f64, dt: f64, model: GpModel) -> Result<Self> {
        check_dt(dt)?;
        if !(0.0..=dt).contains(&tau) {
            return Err(Error::QueryOutOfSegment { tau, dt });
        }
        let order = model.order();
        let phi_tau = scalar_transition(tau, order);
        let phi_rest = scalar_transition(dt - tau, order);
        let phi_dt = scalar_transition(dt, order);
        let (q_tau, _) = scalar_q(tau.max(0.0), order);
        let (_, q_dt_inv) = scalar_q(dt, order);
        let omega = &q_tau * phi_rest.transpose() * q_dt_inv;
        let lambda = phi_tau - &omega * phi_dt;
        Ok(Self { tau, dt, lambda, omega })
    }

    pub fn order(&self) -> usize {
        self.lambda.nrows()
    }
}

/// Interpolation matrices `(Lambda, Omega)` for a query at `t_query` in `(t_i, t_j)`.
pub fn interpolation_matrices(t_i: f64, t_j: f64, t_query: f64, model: GpModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dt = t_j - t_i;
    check_dt(dt)?;
    let tau = t_query - t_i;
    if !(tau > 0.0 && tau < dt) {
        return Err(Error::QueryOutOfSegment { tau, dt });
    }
    let k = InterpKernel::new(tau, dt, model)?;
    let ones = Vector6::repeat(1.0);
    Ok((kron_diag(&k.lambda, &ones), kron_diag(&k.omega, &ones)))
}

/// Motion-prior link between two successive states.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSegment {
    pub t_i: f64,
    pub t_j: f64,
    pub hyper: GpHyperparams,
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
}

impl GpSegment {
    pub fn new(t_i: f64, t_j: f64, hyper: GpHyperparams) -> Result<Self> {
        let dt = t_j - t_i;
        let phi = make_transition(dt, hyper.model)?;
        let (q, q_inv) = make_q(dt, &hyper)?;
        Ok(Self { t_i, t_j, hyper, phi, q, q_inv })
    }

    pub fn dt(&self) -> f64 {
        self.t_j - self.t_i
    }

    pub fn model(&self) -> GpModel {
        self.hyper.model
    }

    /// Covariance of the 12-row prior residual: the `(xi, xi_dot)` block of `Q(dt)`.
    pub fn prior_covariance(&self) -> Matrix12 {
        Matrix12::from_fn(|r, c| self.q[(r, c)])
    }

    pub fn kernel(&self, tau: f64) -> Result<InterpKernel> {
        if !(tau > 0.0 && tau < self.dt()) {
            return Err(Error::QueryOutOfSegment { tau, dt: self.dt() });
        }
        InterpKernel::new(tau, self.dt(), self.model())
    }
}

/// One end of a GP segment: pose, body velocity and the (input) body acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GpKnot {
    pub pose: Pose,
    pub velocity: Vector6<f64>,
    pub accel: Vector6<f64>,
}

/// Local GP states of the two knots, expressed in the tangent frame at `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGpState {
    pub gamma_i: DVector<f64>,
    pub gamma_j: DVector<f64>,
}

struct Lifted {
    xi: Vector6<f64>,
    jinv: Matrix6<f64>,
    /// `xi_dot` at `t_j`.
    d: Vector6<f64>,
    /// `xi_ddot` at `t_j` (zero for WNOA).
    e: Vector6<f64>,
}

fn lift(x_i: &GpKnot, x_j: &GpKnot, model: GpModel, mode: JacobianMode) -> Result<Lifted> {
    let xi = logv(&(x_i.pose.inverse() * x_j.pose))?;
    let jinv = right_jacobian_inv_se3(&xi, mode);
    let d = jinv * x_j.velocity;
    let e = match model {
        GpModel::Wnoa => Vector6::zeros(),
        GpModel::Wnoj => 0.5 * adjoint_curlywedge(&d) * x_j.velocity + jinv * x_j.accel,
    };
    Ok(Lifted { xi, jinv, d, e })
}

/// Lifts two knots into the local frame of `x_i`.
pub fn lift_to_local(x_i: &GpKnot, x_j: &GpKnot, model: GpModel, mode: JacobianMode) -> Result<LocalGpState> {
    let l = lift(x_i, x_j, model, mode)?;
    let n = model.state_dim();
    let mut gi = DVector::zeros(n);
    let mut gj = DVector::zeros(n);
    gi.rows_mut(6, 6).copy_from(&x_i.velocity);
    gj.rows_mut(0, 6).copy_from(&l.xi);
    gj.rows_mut(6, 6).copy_from(&l.d);
    if model == GpModel::Wnoj {
        gi.rows_mut(12, 6).copy_from(&x_i.accel);
        gj.rows_mut(12, 6).copy_from(&l.e);
    }
    Ok(LocalGpState { gamma_i: gi, gamma_j: gj })
}

/// Pose and body velocity queried inside a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatedState {
    pub pose: Pose,
    pub velocity: Vector6<f64>,
}

/// Interpolated state with Jacobians of `[pose; velocity]` (right pose
/// perturbation, additive velocity) with respect to `[pose; velocity]` of each knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatedWithJacobians {
    pub state: InterpolatedState,
    pub jac_i: Matrix12,
    pub jac_j: Matrix12,
}

/// Queries the state at `tau` seconds after `x_i`.
pub fn query_state(x_i: &GpKnot, x_j: &GpKnot, segment: &GpSegment, tau: f64, mode: JacobianMode) -> Result<InterpolatedState> {
    let k = segment.kernel(tau)?;
    let l = lift(x_i, x_j, segment.model(), mode)?;
    let (xi_t, xid_t) = local_query(&k, x_i, &l);
    Ok(InterpolatedState {
        pose: x_i.pose * expv(&xi_t),
        velocity: right_jacobian_se3(&xi_t, mode) * xid_t,
    })
}

fn local_query(k: &InterpKernel, x_i: &GpKnot, l: &Lifted) -> (Vector6<f64>, Vector6<f64>) {
    let gi = [Vector6::zeros(), x_i.velocity, x_i.accel];
    let gj = [l.xi, l.d, l.e];
    let mut rows = [Vector6::zeros(); 2];
    for (r, row) in rows.iter_mut().enumerate() {
        for c in 0..k.order() {
            *row += k.lambda[(r, c)] * gi[c] + k.omega[(r, c)] * gj[c];
        }
    }
    (rows[0], rows[1])
}

/// [`query_state`] with analytic Jacobians, using a precomputed kernel.
pub fn query_state_with_jacobians(x_i: &GpKnot, x_j: &GpKnot, kernel: &InterpKernel, mode: JacobianMode) -> Result<InterpolatedWithJacobians> {
    let order = kernel.order();
    let model = if order == 3 { GpModel::Wnoj } else { GpModel::Wnoa };
    let l = lift(x_i, x_j, model, mode)?;
    let (xi_t, xid_t) = local_query(kernel, x_i, &l);

    let a_i = -left_jacobian_inv_se3(&l.xi, JacobianMode::Exact);
    let a_j = right_jacobian_inv_se3(&l.xi, JacobianMode::Exact);
    let d1 = right_jacobian_inv_derivative(&l.xi, &x_j.velocity, mode);

    // Derivatives of gamma_j blocks: [d xi, d d, d e] w.r.t. (T_i, T_j, varpi_j).
    let mut dg_ti = [a_i, d1 * a_i, Matrix6::zeros()];
    let mut dg_tj = [a_j, d1 * a_j, Matrix6::zeros()];
    let mut dg_wj = [Matrix6::zeros(), l.jinv, Matrix6::zeros()];
    if order == 3 {
        let d2 = right_jacobian_inv_derivative(&l.xi, &x_j.accel, mode);
        let half_adw = 0.5 * adjoint_curlywedge(&x_j.velocity);
        let de_dxi = -half_adw * d1 + d2;
        dg_ti[2] = de_dxi * a_i;
        dg_tj[2] = de_dxi * a_j;
        dg_wj[2] = -half_adw * l.jinv + 0.5 * adjoint_curlywedge(&l.d);
    }

    let row_jac = |r: usize| {
        let mut ti = Matrix6::zeros();
        let mut tj = Matrix6::zeros();
        let mut wj = Matrix6::zeros();
        for c in 0..order {
            let w = kernel.omega[(r, c)];
            ti += w * dg_ti[c];
            tj += w * dg_tj[c];
            wj += w * dg_wj[c];
        }
        // gamma_i = [0, varpi_i, accel_i]; accel is an input.
        let wi = kernel.lambda[(r, 1)] * Matrix6::identity();
        (ti, wi, tj, wj)
    };
    let (x_ti, x_wi, x_tj, x_wj) = row_jac(0);
    let (v_ti, v_wi, v_tj, v_wj) = row_jac(1);

    let jr_pose = right_jacobian_se3(&xi_t, JacobianMode::Exact);
    let ad_inv = expv(&xi_t).inverse().adjoint();
    let jr_vel = right_jacobian_se3(&xi_t, mode);
    let d3 = right_jacobian_derivative(&xi_t, &xid_t, mode);

    let mut jac_i = Matrix12::zeros();
    let mut jac_j = Matrix12::zeros();
    jac_i.fixed_view_mut::<6, 6>(0, 0).copy_from(&(ad_inv + jr_pose * x_ti));
    jac_i.fixed_view_mut::<6, 6>(0, 6).copy_from(&(jr_pose * x_wi));
    jac_i.fixed_view_mut::<6, 6>(6, 0).copy_from(&(d3 * x_ti + jr_vel * v_ti));
    jac_i.fixed_view_mut::<6, 6>(6, 6).copy_from(&(d3 * x_wi + jr_vel * v_wi));
    jac_j.fixed_view_mut::<6, 6>(0, 0).copy_from(&(jr_pose * x_tj));
    jac_j.fixed_view_mut::<6, 6>(0, 6).copy_from(&(jr_pose * x_wj));
    jac_j.fixed_view_mut::<6, 6>(6, 0).copy_from(&(d3 * x_tj + jr_vel * v_tj));
    jac_j.fixed_view_mut::<6, 6>(6, 6).copy_from(&(d3 * x_wj + jr_vel * v_wj));

    Ok(InterpolatedWithJacobians {
        state: InterpolatedState {
            pose: x_i.pose * expv(&xi_t),
            velocity: jr_vel * xid_t,
        },
        jac_i,
        jac_j,
    })
}

/// Between-state prior residual `[r_gamma; r_varpi]` with Jacobians w.r.t.
/// `[pose; velocity]` of each knot. Accelerations are inputs, not variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPriorResidual {
    pub residual: Vector12,
    pub jac_i: Matrix12,
    pub jac_j: Matrix12,
}

pub fn gp_prior_residual(x_i: &GpKnot, x_j: &GpKnot, segment: &GpSegment, mode: JacobianMode) -> Result<GpPriorResidual> {
    let dt = segment.dt();
    let model = segment.model();
    let l = lift(x_i, x_j, model, mode)?;
    let accel = match model {
        GpModel::Wnoa => Vector6::zeros(),
        GpModel::Wnoj => x_i.accel,
    };
    let r_pose = l.xi - dt * x_i.velocity - 0.5 * dt * dt * accel;
    let r_vel = l.d - x_i.velocity - dt * accel;

    let a_i = -left_jacobian_inv_se3(&l.xi, JacobianMode::Exact);
    let a_j = right_jacobian_inv_se3(&l.xi, JacobianMode::Exact);
    let d1 = right_jacobian_inv_derivative(&l.xi, &x_j.velocity, mode);

    let mut residual = Vector12::zeros();
    residual.fixed_rows_mut::<6>(0).copy_from(&r_pose);
    residual.fixed_rows_mut::<6>(6).copy_from(&r_vel);
    let mut jac_i = Matrix12::zeros();
    jac_i.fixed_view_mut::<6, 6>(0, 0).copy_from(&a_i);
    jac_i.fixed_view_mut::<6, 6>(0, 6).copy_from(&(-dt * Matrix6::identity()));
    jac_i.fixed_view_mut::<6, 6>(6, 0).copy_from(&(d1 * a_i));
    jac_i.fixed_view_mut::<6, 6>(6, 6).copy_from(&(-Matrix6::identity()));
    let mut jac_j = Matrix12::zeros();
    jac_j.fixed_view_mut::<6, 6>(0, 0).copy_from(&a_j);
    jac_j.fixed_view_mut::<6, 6>(6, 0).copy_from(&(d1 * a_j));
    jac_j.fixed_view_mut::<6, 6>(6, 6).copy_from(&l.jinv);
    Ok(GpPriorResidual { residual, jac_i, jac_j })
}
