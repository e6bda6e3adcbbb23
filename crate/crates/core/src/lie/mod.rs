//! SO(3)/SE(3) machinery for poses stored as `T_b^e` (body to parent frame).
//!
//! Twists are ordered `[rho; phi]` (translation first). The estimator perturbs
//! poses on the right, `T Exp(delta)`, via [`Pose::retract`].

pub mod se3;
pub mod so3;

pub use se3::{
    adjoint_curlywedge, exp_se3, expv, left_jacobian_inv_se3, left_jacobian_se3, log_se3, logv,
    right_jacobian_derivative, right_jacobian_inv_derivative, right_jacobian_inv_se3,
    right_jacobian_se3, stack, BodyVelocity, JacobianMode, JacobianSeries, Pose, Twist,
};
pub use so3::{skew, vee};

/// Log-distance between two poses, `|log(a^-1 b)|`; infinite near a half turn.
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    logv(&(a.inverse() * *b)).map_or(f64::INFINITY, |v| v.norm())
}
