use serde::{Deserialize, Serialize};

use crate::factors::{GnssEpoch, ImuSample, OdometryIncrement, PvtSolution, SpeedSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Imu,
    Gnss,
    Pvt,
    Odometry,
    Speed,
}

impl SensorKind {
    pub const ALL: [SensorKind; 5] = [SensorKind::Imu, SensorKind::Gnss, SensorKind::Pvt, SensorKind::Odometry, SensorKind::Speed];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Imu => "imu",
            SensorKind::Gnss => "gnss",
            SensorKind::Pvt => "pvt",
            SensorKind::Odometry => "odometry",
            SensorKind::Speed => "speed",
        }
    }
}

/// Any sensor reading, stamped with the sensor's raw (delayed) clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Measurement {
    Imu(ImuSample),
    Gnss(GnssEpoch),
    Pvt(PvtSolution),
    Odometry(OdometryIncrement),
    Speed(SpeedSample),
}

fn nanos(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

impl Measurement {
    pub fn sensor(&self) -> SensorKind {
        match self {
            Measurement::Imu(_) => SensorKind::Imu,
            Measurement::Gnss(_) => SensorKind::Gnss,
            Measurement::Pvt(_) => SensorKind::Pvt,
            Measurement::Odometry(_) => SensorKind::Odometry,
            Measurement::Speed(_) => SensorKind::Speed,
        }
    }

    /// Raw stamp; the end of the interval for odometry.
    pub fn time(&self) -> f64 {
        match self {
            Measurement::Imu(m) => m.t,
            Measurement::Gnss(m) => m.t,
            Measurement::Pvt(m) => m.t,
            Measurement::Odometry(m) => m.t_j,
            Measurement::Speed(m) => m.t,
        }
    }

    /// Canonical processing order, independent of arrival order.
    pub fn order_key(&self) -> (i64, SensorKind, i64) {
        let secondary = match self {
            Measurement::Odometry(m) => nanos(m.t_i),
            _ => 0,
        };
        (nanos(self.time()), self.sensor(), secondary)
    }
}
