//! High-rate state publisher with read-copy snapshots.

use std::sync::Arc;

use nalgebra::DMatrix;
use parking_lot::RwLock;

use crate::error::Result;
use crate::factors::{preintegrate, ImuNoise, ImuSample, IntervalGravity, NavState};

/// Latest optimized state and its marginal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: NavState,
    pub covariance: Option<DMatrix<f64>>,
    /// True while the motion gate holds the estimate.
    pub stationary: bool,
}

/// Cheap-to-clone handle; readers never block the writer for longer than a pointer swap.
#[derive(Debug, Clone, Default)]
pub struct Publisher {
    latest: Arc<RwLock<Option<Arc<Snapshot>>>>,
}

impl Publisher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self, snapshot: Snapshot) {
        *self.latest.write() = Some(Arc::new(snapshot));
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.latest.read().clone()
    }

    /// Latest state propagated to `t_now` with IMU samples (sorted by time).
    pub fn publish_propagated(&self, t_now: f64, imu: &[ImuSample], noise: &ImuNoise) -> Result<Option<NavState>> {
        match self.snapshot() {
            Some(s) => propagate(&s.state, t_now, imu, noise, s.stationary).map(Some),
            None => Ok(None),
        }
    }
}

/// IMU mechanization from `x` to `t_now` using the state's bias estimates.
pub fn propagate(x: &NavState, t_now: f64, imu: &[ImuSample], noise: &ImuNoise, hold: bool) -> Result<NavState> {
    let dt = t_now - x.timestamp;
    if hold || dt <= 1e-9 || imu.is_empty() {
        let mut out = *x;
        if hold {
            out.timestamp = t_now.max(x.timestamp);
        }
        return Ok(out);
    }
    let lo = imu.partition_point(|s| s.t <= x.timestamp + 1e-9).saturating_sub(1);
    let hi = imu.partition_point(|s| s.t < t_now - 1e-9).max(lo + 1);
    let window = &imu[lo..hi];
    let pre = preintegrate(window, x.timestamp, t_now, &x.bias_acc, &x.bias_gyro, &IntervalGravity::along(x, t_now - x.timestamp), noise)?;
    let mut out = pre.predict(x);
    let last = window.last().expect("non-empty");
    out.body_velocity.fixed_rows_mut::<3>(3).copy_from(&(last.gyro - x.bias_gyro));
    Ok(out)
}
