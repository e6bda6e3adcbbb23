//! Measurement models and factor residuals with analytic Jacobians.
//!
//! Every residual is returned together with one Jacobian block per involved
//! state, each `rows x STATE_DIM`, taken with respect to the estimator's state
//! perturbation (see [`NavState::retract`]).

pub mod gnss;
pub mod imu;
pub mod motion;
pub mod robust;
pub mod state;

pub use gnss::{cn0_variance, prdo_residual, pvt_residual, GnssEpoch, PvtSolution, SatelliteObs, L1_WAVELENGTH_M};
pub use imu::{imu_factor_residual, preintegrate, BiasJacobians, IntervalGravity, BIAS_RELINEARIZE_THRESHOLD, ImuNoise, ImuSample, Preintegrated};
pub use motion::{
    between_pose_residual, bias_covariance, bias_residual, clock_covariance, clock_residual, velocity2d_residual, OdometryIncrement, SpeedSample,
};
pub use robust::{apply_robust, sqrt_information, LossKind, RobustLoss, RobustResidual};
pub use state::{interpolate_nav, ClockState, InterpolatedNav, NavState, StateJacobian};

use nalgebra::{DMatrix, DVector};

/// Size of the full state tangent.
pub const STATE_DIM: usize = 20;

/// Column offsets inside the state tangent.
pub mod idx {
    pub const POS: usize = 0;
    pub const ROT: usize = 3;
    pub const NU: usize = 6;
    pub const OMEGA: usize = 9;
    pub const BIAS_ACC: usize = 12;
    pub const BIAS_GYRO: usize = 15;
    pub const CLOCK_BIAS: usize = 18;
    pub const CLOCK_DRIFT: usize = 19;
}

/// Unwhitened residual and its Jacobians, one `rows x STATE_DIM` block per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorResidual {
    pub value: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl FactorResidual {
    pub fn rows(&self) -> usize {
        self.value.len()
    }
}

fn zero_jacobian(rows: usize) -> DMatrix<f64> {
    DMatrix::zeros(rows, STATE_DIM)
}

/// Chains a residual Jacobian through an interpolation Jacobian.
pub fn chain(jac: &DMatrix<f64>, through: &StateJacobian) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(jac.nrows(), STATE_DIM);
    for r in 0..jac.nrows() {
        for k in 0..STATE_DIM {
            let v = jac[(r, k)];
            if v != 0.0 {
                for c in 0..STATE_DIM {
                    out[(r, c)] += v * through[(k, c)];
                }
            }
        }
    }
    out
}
