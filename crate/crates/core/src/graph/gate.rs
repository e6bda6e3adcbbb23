//! Near-zero-velocity detection by voting across velocity sources.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Moving,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub enabled: bool,
    /// Speed below which a source votes stationary (m/s).
    pub threshold_mps: f64,
    /// Evidence window (s).
    pub horizon_s: f64,
    /// Gyro magnitude below which the IMU votes stationary (rad/s).
    pub gyro_threshold: f64,
    /// Allowed deviation of specific-force magnitude from gravity (m/s^2).
    pub accel_threshold: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { enabled: true, threshold_mps: 0.05, horizon_s: 0.5, gyro_threshold: 0.01, accel_threshold: 0.05 }
    }
}

/// Majority vote over per-source speeds: stationary iff more than half of the
/// sources are below `threshold`. No sources means moving.
///
/// ```
/// use ctfusion::graph::{near_zero_velocity_gate, Motion};
/// assert_eq!(near_zero_velocity_gate(&[0.0, 0.02, 1.5], 0.05), Motion::Stationary);
/// assert_eq!(near_zero_velocity_gate(&[], 0.05), Motion::Moving);
/// ```
pub fn near_zero_velocity_gate(speeds: &[f64], threshold: f64) -> Motion {
    let still = speeds.iter().filter(|s| **s < threshold).count();
    if !speeds.is_empty() && 2 * still > speeds.len() {
        Motion::Stationary
    } else {
        Motion::Moving
    }
}

/// Votes from boolean per-source verdicts (`true` = stationary).
pub fn vote(stationary: &[bool]) -> Motion {
    let still = stationary.iter().filter(|s| **s).count();
    if !stationary.is_empty() && 2 * still > stationary.len() {
        Motion::Stationary
    } else {
        Motion::Moving
    }
}
