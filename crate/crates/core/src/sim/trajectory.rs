//! Analytic ground-truth trajectories.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{dcm_ecef_to_enu, enu_to_ecef, GeodeticCoord};
use crate::lie::{so3, Pose};

/// Ground truth at one instant. Velocities and accelerations are body-frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose,
    pub nu: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub nu_dot: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

impl TruthSample {
    pub fn world_velocity(&self) -> Vector3<f64> {
        self.pose.rotation * self.nu
    }

    /// Accelerometer reading without bias or noise for gravity `g` (world frame).
    pub fn specific_force(&self, g: &Vector3<f64>) -> Vector3<f64> {
        self.omega.cross(&self.nu) + self.nu_dot - self.pose.rotation.transpose() * g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration_s: f64,
    /// Body-frame linear acceleration (m/s^2).
    #[serde(default)]
    pub accel_mps2: [f64; 3],
    /// Body-frame angular rate (deg/s).
    #[serde(default)]
    pub omega_dps: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Piecewise constant body acceleration and angular rate, starting level.
    Segments {
        /// Initial heading, clockwise from north (deg).
        #[serde(default)]
        heading_deg: f64,
        #[serde(default)]
        initial_speed_mps: f64,
        segments: Vec<SegmentSpec>,
    },
    /// Natural cubic spline through `[t, east, north, up]` waypoints; the body
    /// stays level and points along the horizontal velocity.
    Spline { waypoints: Vec<[f64; 4]> },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Segments {
            heading_deg: 0.0,
            initial_speed_mps: 10.0,
            segments: vec![SegmentSpec { duration_s: 60.0, accel_mps2: [0.0; 3], omega_dps: [0.0; 3] }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    t0: f64,
    pose: Pose,
    nu: Vector3<f64>,
    accel: Vector3<f64>,
    omega: Vector3<f64>,
}

impl Segment {
    fn sample(&self, t: f64) -> TruthSample {
        let tau = t - self.t0;
        let w = self.omega;
        let rot = self.pose.rotation * so3::exp(&(w * tau));
        let disp = tau * so3::left_jacobian(&(w * tau)) * self.nu + moment(&w, tau) * self.accel;
        TruthSample {
            t,
            pose: Pose::new(rot, self.pose.translation + self.pose.rotation * disp),
            nu: self.nu + self.accel * tau,
            omega: w,
            nu_dot: self.accel,
            omega_dot: Vector3::zeros(),
        }
    }
}

/// `int_0^tau u Exp(w u) du`.
fn moment(w: &Vector3<f64>, tau: f64) -> Matrix3<f64> {
    let theta = w.norm();
    let eye = Matrix3::identity();
    let ws = so3::skew(w);
    if theta * tau < 1e-4 {
        return eye * (tau * tau / 2.0) + ws * (tau.powi(3) / 3.0) + ws * ws * (tau.powi(4) / 8.0);
    }
    let k = ws / theta;
    let (s, c) = (theta * tau).sin_cos();
    let th2 = theta * theta;
    eye * (tau * tau / 2.0)
        + k * ((s - theta * tau * c) / th2)
        + k * k * (tau * tau / 2.0 - (c + theta * tau * s - 1.0) / th2)
}

#[derive(Debug, Clone, PartialEq)]
struct Cubic {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Cubic {
    /// Natural cubic spline (second derivatives `m` zero at the ends).
    fn natural(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let (mut a, mut b, mut c, mut d) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                a[i - 1] = h0;
                b[i - 1] = 2.0 * (h0 + h1);
                c[i - 1] = h1;
                d[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let f = a[i] / b[i - 1];
                b[i] -= f * c[i - 1];
                d[i] -= f * d[i - 1];
            }
            m[k] = d[k - 1] / b[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (d[i] - c[i] * m[i + 2]) / b[i];
            }
        }
        Self { t: t.to_vec(), y: y.to_vec(), m }
    }

    /// Value and first three derivatives.
    fn eval(&self, x: f64) -> [f64; 4] {
        let n = self.t.len();
        let i = self.t.partition_point(|&ti| ti <= x).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let (a, b) = (self.t[i + 1] - x, x - self.t[i]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let val = m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h) + (y0 / h - m0 * h / 6.0) * a + (y1 / h - m1 * h / 6.0) * b;
        let d1 = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0);
        let d2 = m0 * a / h + m1 * b / h;
        let d3 = (m1 - m0) / h;
        [val, d1, d2, d3]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Spline {
    axes: [Cubic; 3],
    enu_to_ecef: Matrix3<f64>,
    origin: GeodeticCoord,
}

impl Spline {
    fn sample(&self, t: f64) -> TruthSample {
        let [x, y, z] = [self.axes[0].eval(t), self.axes[1].eval(t), self.axes[2].eval(t)];
        let p = Vector3::new(x[0], y[0], z[0]);
        let v = Vector3::new(x[1], y[1], z[1]);
        let a = Vector3::new(x[2], y[2], z[2]);
        let (ve, vn, ae, an, je, jn) = (x[1], y[1], x[2], y[2], x[3], y[3]);
        let yaw = vn.atan2(ve);
        let den = ve * ve + vn * vn;
        let num = ve * an - vn * ae;
        let yaw_rate = num / den;
        let num_dot = ve * jn - vn * je;
        let den_dot = 2.0 * (ve * ae + vn * an);
        let yaw_acc = (num_dot * den - num * den_dot) / (den * den);
        let r_enu = so3::exp(&Vector3::new(0.0, 0.0, yaw));
        let omega = Vector3::new(0.0, 0.0, yaw_rate);
        let nu = r_enu.transpose() * v;
        let nu_dot = r_enu.transpose() * a - omega.cross(&nu);
        TruthSample {
            t,
            pose: Pose::new(self.enu_to_ecef * r_enu, enu_to_ecef(&p, &self.origin)),
            nu,
            omega,
            nu_dot,
            omega_dot: Vector3::new(0.0, 0.0, yaw_acc),
        }
    }
}

/// Continuous ground truth built from a [`TrajectorySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: Kind,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Segments(Vec<Segment>),
    Spline(Spline),
}

/// Body-to-ECEF rotation of a level, forward-left-up body with ENU yaw `yaw` (from east, CCW).
pub fn level_attitude(origin: &GeodeticCoord, yaw: f64) -> Matrix3<f64> {
    dcm_ecef_to_enu(origin).transpose() * so3::exp(&Vector3::new(0.0, 0.0, yaw))
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec, origin: &GeodeticCoord) -> Result<Self> {
        match spec {
            TrajectorySpec::Segments { heading_deg, initial_speed_mps, segments } => {
                if segments.is_empty() {
                    return Err(Error::Scenario("trajectory.segments: at least one segment is required".into()));
                }
                let yaw = (90.0 - heading_deg).to_radians();
                let mut seg = Segment {
                    t0: 0.0,
                    pose: Pose::new(level_attitude(origin, yaw), enu_to_ecef(&Vector3::zeros(), origin)),
                    nu: Vector3::new(*initial_speed_mps, 0.0, 0.0),
                    accel: Vector3::zeros(),
                    omega: Vector3::zeros(),
                };
                let mut out = Vec::with_capacity(segments.len());
                for (k, s) in segments.iter().enumerate() {
                    if !(s.duration_s > 0.0) {
                        return Err(Error::Scenario(format!("trajectory.segments[{k}].duration_s must be positive")));
                    }
                    seg.accel = Vector3::from(s.accel_mps2);
                    seg.omega = Vector3::from(s.omega_dps).map(f64::to_radians);
                    let end = seg.sample(seg.t0 + s.duration_s);
                    out.push(seg.clone());
                    seg = Segment { t0: end.t, pose: end.pose, nu: end.nu, accel: seg.accel, omega: seg.omega };
                }
                Ok(Self { kind: Kind::Segments(out) })
            }
            TrajectorySpec::Spline { waypoints } => {
                if waypoints.len() < 2 {
                    return Err(Error::Scenario("trajectory.waypoints: at least two waypoints are required".into()));
                }
                if waypoints.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::Scenario("trajectory.waypoints: times must increase".into()));
                }
                let t: Vec<f64> = waypoints.iter().map(|w| w[0]).collect();
                let axes = [1, 2, 3].map(|k| Cubic::natural(&t, &waypoints.iter().map(|w| w[k]).collect::<Vec<_>>()));
                let spline = Spline { axes, enu_to_ecef: dcm_ecef_to_enu(origin).transpose(), origin: *origin };
                let span = t[t.len() - 1] - t[0];
                for k in 0..=200 {
                    let s = spline.sample(t[0] + span * k as f64 / 200.0);
                    if s.nu.xy().norm() < 0.1 {
                        return Err(Error::Scenario("trajectory.waypoints: horizontal speed must stay above 0.1 m/s".into()));
                    }
                }
                Ok(Self { kind: Kind::Spline(spline) })
            }
        }
    }

    pub fn sample(&self, t: f64) -> TruthSample {
        match &self.kind {
            Kind::Segments(segs) => {
                let k = segs.partition_point(|s| s.t0 <= t).max(1) - 1;
                segs[k].sample(t)
            }
            Kind::Spline(s) => s.sample(t),
        }
    }
}
