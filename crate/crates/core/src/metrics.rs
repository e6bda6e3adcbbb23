//! Trajectory error metrics, path smoothness and report comparison.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::NavState;
use crate::geodesy::{dcm_ecef_to_enu, dcm_ecef_to_ned, ecef_to_llh, EcefCoord};
use crate::lie::Pose;
use crate::sim::GroundTruth;

/// Forward-left-up body axes to forward-right-down.
const FLU_TO_FRD: Matrix3<f64> = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);

/// Roll, pitch and yaw (rad) of the forward-right-down body in the local NED frame.
pub fn attitude_ned(pose: &Pose) -> Result<Vector3<f64>> {
    let llh = ecef_to_llh(&EcefCoord::from(pose.translation))?;
    let r = dcm_ecef_to_ned(&llh) * pose.rotation * FLU_TO_FRD;
    Ok(Vector3::new(r[(2, 1)].atan2(r[(2, 2)]), -r[(2, 0)].clamp(-1.0, 1.0).asin(), r[(1, 0)].atan2(r[(0, 0)])))
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// One line of a trajectory CSV. Angles in degrees, velocity in NED.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x_e: f64,
    pub y_e: f64,
    pub z_e: f64,
    pub lat: f64,
    pub lon: f64,
    pub h: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    #[serde(rename = "vN")]
    pub v_n: f64,
    #[serde(rename = "vE")]
    pub v_e: f64,
    #[serde(rename = "vD")]
    pub v_d: f64,
}

impl TrajectoryRow {
    pub fn from_state(x: &NavState) -> Result<Self> {
        let p = x.position();
        let llh = ecef_to_llh(&EcefCoord::from(p))?;
        let att = attitude_ned(&x.pose)?.map(f64::to_degrees);
        let v = dcm_ecef_to_ned(&llh) * x.world_velocity();
        Ok(Self {
            t: x.timestamp,
            x_e: p.x,
            y_e: p.y,
            z_e: p.z,
            lat: llh.latitude_rad.to_degrees(),
            lon: llh.longitude_rad.to_degrees(),
            h: llh.height_m,
            roll: att.x,
            pitch: att.y,
            yaw: att.z,
            v_n: v.x,
            v_e: v.y,
            v_d: v.z,
        })
    }
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Path smoothness: the sum over consecutive point triples of
/// `(2 (pi - angle) / (a + b))^2`, where `a`, `b` are the two segment lengths and
/// `angle` is the interior angle at the middle point (law of cosines with the chord `c`).
/// Consecutive duplicate points are removed first.
///
/// ```
/// use ctfusion::metrics::smoothness;
/// use nalgebra::Vector3;
/// let corner = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.0)];
/// let s = smoothness(&corner).unwrap();
/// assert!((s - std::f64::consts::FRAC_PI_2.powi(2)).abs() < 1e-12);
/// ```
pub fn smoothness(points: &[Vector3<f64>]) -> Result<f64> {
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last() != Some(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 3 {
        return Err(Error::TooFewPoints(pts.len()));
    }
    let mut s = 0.0;
    for w in pts.windows(3) {
        let a = (w[1] - w[0]).norm();
        let b = (w[2] - w[1]).norm();
        let c = (w[2] - w[0]).norm();
        let cos = ((a * a + b * b - c * c) / (2.0 * a * b)).clamp(-1.0, 1.0);
        let k = 2.0 * (PI - cos.acos()) / (a + b);
        s += k * k;
    }
    Ok(s)
}

/// Errors of one estimated state against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochError {
    pub t: f64,
    /// ENU position error at the scenario origin (m).
    pub east_m: f64,
    pub north_m: f64,
    pub up_m: f64,
    pub yaw_deg: f64,
    pub velocity_mps: f64,
}

impl EpochError {
    pub fn horizontal(&self) -> f64 {
        self.east_m.hypot(self.north_m)
    }

    pub fn spatial(&self) -> f64 {
        (self.east_m.powi(2) + self.north_m.powi(2) + self.up_m.powi(2)).sqrt()
    }
}

pub fn epoch_error(x: &NavState, truth: &GroundTruth) -> Result<EpochError> {
    let s = truth.sample(x.timestamp);
    let d = dcm_ecef_to_enu(&truth.origin) * (x.position() - s.pose.translation);
    let yaw = attitude_ned(&x.pose)?.z - attitude_ned(&s.pose)?.z;
    Ok(EpochError {
        t: x.timestamp,
        east_m: d.x,
        north_m: d.y,
        up_m: d.z,
        yaw_deg: wrap_angle(yaw).to_degrees(),
        velocity_mps: (x.world_velocity() - s.world_velocity()).norm(),
    })
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in v {
        sum += x * x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Aggregate accuracy figures over a set of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub epochs: usize,
    pub rmse_2d_m: f64,
    pub rmse_3d_m: f64,
    pub max_2d_err_m: f64,
    pub mean_yaw_err_deg: f64,
    pub velocity_rmse_mps: f64,
}

impl ErrorSummary {
    pub fn from_errors(errors: &[EpochError]) -> Self {
        let n = errors.len();
        Self {
            epochs: n,
            rmse_2d_m: rms(errors.iter().map(EpochError::horizontal)),
            rmse_3d_m: rms(errors.iter().map(EpochError::spatial)),
            max_2d_err_m: errors.iter().map(EpochError::horizontal).fold(0.0, f64::max),
            mean_yaw_err_deg: if n == 0 { 0.0 } else { errors.iter().map(|e| e.yaw_deg.abs()).sum::<f64>() / n as f64 },
            velocity_rmse_mps: rms(errors.iter().map(|e| e.velocity_mps)),
        }
    }
}

/// Metrics a comparison must find in both reports; all are lower-is-better.
pub const COMPARED_METRICS: [&str; 7] = [
    "rmse_2d_m",
    "rmse_3d_m",
    "max_2d_err_m",
    "mean_yaw_err_deg",
    "smoothness_s",
    "velocity_rmse_mps",
    "interp_velocity_rmse_mps",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub baseline: f64,
    pub candidate: f64,
    pub delta: f64,
    pub regression: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metrics: BTreeMap<String, MetricDelta>,
}

impl Comparison {
    pub fn regressed(&self) -> bool {
        self.metrics.values().any(|m| m.regression)
    }
}

/// Thresholds beyond which a larger candidate value counts as a regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionThreshold {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for RegressionThreshold {
    fn default() -> Self {
        Self { relative: 0.1, absolute: 1e-3 }
    }
}

fn metric(report: &serde_json::Value, key: &str, which: &str) -> Result<f64> {
    report
        .get(key)
        .ok_or_else(|| Error::Schema(format!("{which} report is missing metric `{key}`")))?
        .as_f64()
        .ok_or_else(|| Error::Schema(format!("{which} report metric `{key}` is not a number")))
}

/// Side-by-side deltas (`candidate - baseline`) of the [`COMPARED_METRICS`].
pub fn compare(baseline: &serde_json::Value, candidate: &serde_json::Value, threshold: RegressionThreshold) -> Result<Comparison> {
    let mut metrics = BTreeMap::new();
    for key in COMPARED_METRICS {
        let a = metric(baseline, key, "baseline")?;
        let b = metric(candidate, key, "candidate")?;
        let regression = b > a * (1.0 + threshold.relative) + threshold.absolute;
        metrics.insert(key.to_string(), MetricDelta { baseline: a, candidate: b, delta: b - a, regression });
    }
    Ok(Comparison { metrics })
}
