//! GNSS measurement models: raw pseudorange/Doppler and receiver PVT fixes.

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{idx, zero_jacobian, FactorResidual, NavState};
use crate::error::{Error, Result};
use crate::geodesy::{dcm_ecef_to_ned, ecef_to_llh, EcefCoord};
use crate::lie::so3::skew;

/// GPS L1 carrier wavelength (m).
pub const L1_WAVELENGTH_M: f64 = 299_792_458.0 / 1_575.42e6;

/// Smallest antenna-satellite distance accepted by [`prdo_residual`].
pub const MIN_SATELLITE_RANGE_M: f64 = 1e6;

/// One satellite's observation with atmospheric and satellite clock terms removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteObs {
    pub sat_id: u32,
    pub sat_pos: Vector3<f64>,
    pub sat_vel: Vector3<f64>,
    pub pseudorange_m: f64,
    pub doppler_hz: f64,
    pub cn0_dbhz: f64,
    pub elevation_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssEpoch {
    pub t: f64,
    pub wavelength_m: f64,
    pub sats: Vec<SatelliteObs>,
}

impl GnssEpoch {
    /// Drops satellites below `mask_rad`.
    pub fn masked(mut self, mask_rad: f64) -> Self {
        self.sats.retain(|s| s.elevation_rad >= mask_rad);
        self
    }
}

/// Receiver position/velocity fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvtSolution {
    pub t: f64,
    /// Antenna position, ECEF.
    pub position: Vector3<f64>,
    /// Antenna velocity, NED at the reported position.
    pub velocity_ned: Vector3<f64>,
    /// Reported standard deviations `[pos ECEF; vel NED]`.
    pub std_devs: Vector6<f64>,
}

/// Variances of pseudorange (m^2) and Doppler (Hz^2) from the carrier-to-noise density.
pub fn cn0_variance(cn0_dbhz: f64, lambda_pr: f64, lambda_doppler: f64) -> (f64, f64) {
    let s = 10f64.powf(-cn0_dbhz / 10.0);
    (lambda_pr * s, lambda_doppler * s)
}

fn antenna_velocity(x: &NavState, lever_arm: &Vector3<f64>, gyro: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let m = x.nu() + gyro.cross(lever_arm);
    (x.rotation() * m, m)
}

/// Pseudorange and Doppler residual `[r_pr; r_do]` (metres, metres per second).
///
/// `r_pr = |p_ant - p_sat| + c_b - rho` and
/// `r_do = u . (v_ant - v_sat) + c_d + lambda * doppler`, with `u` the unit
/// vector from antenna to satellite. `gyro` is a known input for the lever-arm term.
pub fn prdo_residual(
    x: &NavState,
    sat: &SatelliteObs,
    wavelength_m: f64,
    lever_arm: &Vector3<f64>,
    gyro: &Vector3<f64>,
) -> Result<FactorResidual> {
    let r = x.rotation();
    let p_ant = x.position() + r * lever_arm;
    let los = sat.sat_pos - p_ant;
    let range = los.norm();
    if range < MIN_SATELLITE_RANGE_M {
        return Err(Error::DegenerateGeometry(format!("satellite {} only {range:.1} m away", sat.sat_id)));
    }
    let u = los / range;
    let (v_ant, m) = antenna_velocity(x, lever_arm, gyro);
    let w = v_ant - sat.sat_vel;

    let value = DVector::from_vec(vec![
        range + x.clock.bias_m - sat.pseudorange_m,
        u.dot(&w) + x.clock.drift_mps + wavelength_m * sat.doppler_hz,
    ]);

    let mut jac = zero_jacobian(2);
    let dpant_dp = r;
    let dpant_dth = -r * skew(lever_arm);
    // d|p_ant - p_sat| / dp_ant = -u^T
    let row = -u.transpose() * dpant_dp;
    jac.view_mut((0, idx::POS), (1, 3)).copy_from(&row);
    let row = -u.transpose() * dpant_dth;
    jac.view_mut((0, idx::ROT), (1, 3)).copy_from(&row);
    jac[(0, idx::CLOCK_BIAS)] = 1.0;
    // du/dp_ant = -(I - u u^T) / range
    let dw = -(w.transpose() * (Matrix3::identity() - u * u.transpose())) / range;
    let row = dw * dpant_dp;
    jac.view_mut((1, idx::POS), (1, 3)).copy_from(&row);
    let row = dw * dpant_dth - u.transpose() * r * skew(&m);
    jac.view_mut((1, idx::ROT), (1, 3)).copy_from(&row);
    let row = u.transpose() * r;
    jac.view_mut((1, idx::NU), (1, 3)).copy_from(&row);
    jac[(1, idx::CLOCK_DRIFT)] = 1.0;

    Ok(FactorResidual { value, jacobians: vec![jac] })
}

/// PVT residual `[p_ant - p~ (ECEF); C_n (v_ant) - v~_ned]`.
pub fn pvt_residual(x: &NavState, z: &PvtSolution, lever_arm: &Vector3<f64>, gyro: &Vector3<f64>) -> Result<FactorResidual> {
    let r = x.rotation();
    let p_ant = x.position() + r * lever_arm;
    let c_ned = dcm_ecef_to_ned(&ecef_to_llh(&EcefCoord::from(z.position))?);
    let (v_ant, m) = antenna_velocity(x, lever_arm, gyro);
    let rp = p_ant - z.position;
    let rv = c_ned * v_ant - z.velocity_ned;
    let mut value = DVector::zeros(6);
    value.fixed_rows_mut::<3>(0).copy_from(&rp);
    value.fixed_rows_mut::<3>(3).copy_from(&rv);

    let mut jac = zero_jacobian(6);
    jac.view_mut((0, idx::POS), (3, 3)).copy_from(&r);
    jac.view_mut((0, idx::ROT), (3, 3)).copy_from(&(-r * skew(lever_arm)));
    jac.view_mut((3, idx::ROT), (3, 3)).copy_from(&(-c_ned * r * skew(&m)));
    jac.view_mut((3, idx::NU), (3, 3)).copy_from(&(c_ned * r));
    Ok(FactorResidual { value, jacobians: vec![jac] })
}
