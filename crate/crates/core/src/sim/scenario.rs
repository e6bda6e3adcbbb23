//! Scenario description, parsed from TOML.

use serde::{Deserialize, Serialize};

use super::constellation::ConstellationSpec;
use super::trajectory::TrajectorySpec;
use crate::error::{Error, Result};
use crate::factors::{ImuNoise, L1_WAVELENGTH_M};
use crate::geodesy::GeodeticCoord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSpec {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub height_m: f64,
}

impl Default for OriginSpec {
    fn default() -> Self {
        Self { lat_deg: 50.78, lon_deg: 6.07, height_m: 200.0 }
    }
}

/// Receiver clock: initial values and random-walk intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockSpec {
    pub bias_m: f64,
    pub drift_mps: f64,
    /// m^2/s
    pub bias_psd: f64,
    /// m^2/s^3
    pub drift_psd: f64,
}

impl Default for ClockSpec {
    fn default() -> Self {
        Self { bias_m: 100.0, drift_mps: 0.5, bias_psd: 0.1, drift_psd: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSpec {
    pub rate_hz: f64,
    pub offset_s: f64,
    pub noise: ImuNoise,
    pub initial_accel_bias: [f64; 3],
    pub initial_gyro_bias: [f64; 3],
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self {
            rate_hz: 200.0,
            offset_s: 0.0025,
            noise: ImuNoise::default(),
            initial_accel_bias: [0.02, -0.01, 0.015],
            initial_gyro_bias: [1e-4, -2e-4, 5e-5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssSpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub delay_s: f64,
    /// Pseudorange variance scale: var = lambda * 10^(-C/N0 / 10) (m^2).
    pub lambda_pseudorange: f64,
    /// Doppler variance scale (Hz^2).
    pub lambda_doppler: f64,
    pub elevation_mask_deg: f64,
    pub zenith_cn0_dbhz: f64,
    /// C/N0 loss per degree below zenith.
    pub cn0_slope_db_per_deg: f64,
    pub cn0_noise_db: f64,
    pub wavelength_m: f64,
    /// Antenna position in the body frame (m).
    pub lever_arm: [f64; 3],
}

impl Default for GnssSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            rate_hz: 10.0,
            offset_s: 0.037,
            delay_s: 0.0,
            lambda_pseudorange: 31_622.78,
            lambda_doppler: 8_720.0,
            elevation_mask_deg: 15.0,
            zenith_cn0_dbhz: 48.0,
            cn0_slope_db_per_deg: 0.12,
            cn0_noise_db: 1.0,
            wavelength_m: L1_WAVELENGTH_M,
            lever_arm: [0.5, 0.0, 1.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvtSpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub delay_s: f64,
    pub sigma_pos_m: f64,
    pub sigma_vel_mps: f64,
    /// Reported std devs are the true ones times this factor.
    pub lying_factor: f64,
}

impl Default for PvtSpec {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 10.0, offset_s: 0.037, delay_s: 0.0, sigma_pos_m: 1.0, sigma_vel_mps: 0.1, lying_factor: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometrySpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub delay_s: f64,
    pub sigma_trans_m: f64,
    pub sigma_rot_deg: f64,
}

impl Default for OdometrySpec {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 10.0, offset_s: 0.061, delay_s: 0.0, sigma_trans_m: 0.02, sigma_rot_deg: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedSpec {
    pub enabled: bool,
    pub rate_hz: f64,
    pub offset_s: f64,
    pub delay_s: f64,
    pub sigma_mps: f64,
    /// Sensor position in the body frame (m).
    pub lever_arm: [f64; 3],
}

impl Default for SpeedSpec {
    fn default() -> Self {
        Self { enabled: true, rate_hz: 100.0, offset_s: 0.0043, delay_s: 0.0, sigma_mps: 0.05, lever_arm: [-1.0, 0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorsSpec {
    pub imu: ImuSpec,
    pub gnss: GnssSpec,
    pub pvt: PvtSpec,
    pub odometry: OdometrySpec,
    pub speed: SpeedSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationKind {
    /// No GNSS observations and no PVT fixes.
    Outage,
    /// Adds `bias_m` to the pseudorange of each satellite with probability `fraction`.
    Multipath { bias_m: f64, fraction: f64 },
    /// Keeps only the `n` highest satellites.
    ReducedSats { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub kind: DegradationKind,
}

impl Degradation {
    pub fn active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Turns off every stochastic term (sensor noise, bias and clock walks).
    #[serde(default)]
    pub noise_free: bool,
    #[serde(default)]
    pub origin: OriginSpec,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub constellation: ConstellationSpec,
    #[serde(default)]
    pub clock: ClockSpec,
    #[serde(default)]
    pub sensors: SensorsSpec,
    #[serde(default)]
    pub degradations: Vec<Degradation>,
}

fn default_name() -> String {
    "scenario".into()
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: default_name(),
            duration_s: 60.0,
            seed: 0,
            noise_free: false,
            origin: OriginSpec::default(),
            trajectory: TrajectorySpec::default(),
            constellation: ConstellationSpec::default(),
            clock: ClockSpec::default(),
            sensors: SensorsSpec::default(),
            degradations: Vec::new(),
        }
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be non-negative, got {v}")))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::config(e.span().map(|r| format!("bytes {}..{}", r.start, r.end)).unwrap_or_default(), e.message()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn origin(&self) -> Result<GeodeticCoord> {
        GeodeticCoord::from_degrees(self.origin.lat_deg, self.origin.lon_deg, self.origin.height_m)
            .map_err(|e| Error::config("origin", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("duration_s", self.duration_s)?;
        self.origin()?;
        let s = &self.sensors;
        let schedules = [
            ("sensors.imu", s.imu.rate_hz, s.imu.offset_s, 0.0),
            ("sensors.gnss", s.gnss.rate_hz, s.gnss.offset_s, s.gnss.delay_s),
            ("sensors.pvt", s.pvt.rate_hz, s.pvt.offset_s, s.pvt.delay_s),
            ("sensors.odometry", s.odometry.rate_hz, s.odometry.offset_s, s.odometry.delay_s),
            ("sensors.speed", s.speed.rate_hz, s.speed.offset_s, s.speed.delay_s),
        ];
        for (name, rate, offset, delay) in schedules {
            positive(&format!("{name}.rate_hz"), rate)?;
            non_negative(&format!("{name}.offset_s"), offset)?;
            non_negative(&format!("{name}.delay_s"), delay)?;
            if offset >= self.duration_s {
                return Err(Error::config(format!("{name}.offset_s"), "schedule starts after the scenario ends"));
            }
        }
        let n = &s.imu.noise;
        for (k, v) in [
            ("accel_noise_density", n.accel_noise_density),
            ("gyro_noise_density", n.gyro_noise_density),
            ("accel_bias_walk", n.accel_bias_walk),
            ("gyro_bias_walk", n.gyro_bias_walk),
        ] {
            positive(&format!("sensors.imu.noise.{k}"), v)?;
        }
        positive("sensors.gnss.lambda_pseudorange", s.gnss.lambda_pseudorange)?;
        positive("sensors.gnss.lambda_doppler", s.gnss.lambda_doppler)?;
        positive("sensors.gnss.wavelength_m", s.gnss.wavelength_m)?;
        non_negative("sensors.gnss.cn0_noise_db", s.gnss.cn0_noise_db)?;
        positive("sensors.pvt.sigma_pos_m", s.pvt.sigma_pos_m)?;
        positive("sensors.pvt.sigma_vel_mps", s.pvt.sigma_vel_mps)?;
        positive("sensors.pvt.lying_factor", s.pvt.lying_factor)?;
        positive("sensors.odometry.sigma_trans_m", s.odometry.sigma_trans_m)?;
        positive("sensors.odometry.sigma_rot_deg", s.odometry.sigma_rot_deg)?;
        positive("sensors.speed.sigma_mps", s.speed.sigma_mps)?;
        positive("clock.bias_psd", self.clock.bias_psd)?;
        positive("clock.drift_psd", self.clock.drift_psd)?;
        for (k, d) in self.degradations.iter().enumerate() {
            let p = format!("degradations[{k}]");
            if !(d.t_start < d.t_end) || d.t_start < 0.0 {
                return Err(Error::config(format!("{p}.t_end"), "window must satisfy 0 <= t_start < t_end"));
            }
            if let DegradationKind::Multipath { fraction, .. } = d.kind {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::config(format!("{p}.fraction"), "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn active(&self, t: f64) -> impl Iterator<Item = &DegradationKind> {
        self.degradations.iter().filter(move |d| d.active(t)).map(|d| &d.kind)
    }
}
