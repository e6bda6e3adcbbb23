//! Idealized circular-orbit constellation.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{dcm_ecef_to_enu, llh_to_ecef, GeodeticCoord};

/// Earth's gravitational parameter (m^3/s^2).
pub const EARTH_MU: f64 = 3.986_004_418e14;
pub const GPS_ORBIT_RADIUS_M: f64 = 26_578_000.0;

/// Direction of a satellite seen from the origin at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyPosition {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationSpec {
    pub count: usize,
    pub geometry_seed: u64,
    pub radius_m: f64,
    /// Satellites hold still (fixed-direction mode).
    pub static_geometry: bool,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Explicit initial directions; overrides `count` when non-empty.
    pub satellites: Vec<SkyPosition>,
}

impl Default for ConstellationSpec {
    fn default() -> Self {
        Self {
            count: 8,
            geometry_seed: 7,
            radius_m: GPS_ORBIT_RADIUS_M,
            static_geometry: false,
            min_elevation_deg: 25.0,
            max_elevation_deg: 85.0,
            satellites: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Satellite {
    pub id: u32,
    radius: f64,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    rate: f64,
}

impl Satellite {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.rate * t).sin_cos();
        self.radius * (c * self.e1 + s * self.e2)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.rate * t).sin_cos();
        self.radius * self.rate * (c * self.e2 - s * self.e1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub satellites: Vec<Satellite>,
}

impl Constellation {
    /// Places each satellite on a circular orbit through its `t = 0` sky position
    /// as seen from `origin`.
    pub fn new(spec: &ConstellationSpec, origin: &GeodeticCoord) -> Result<Self> {
        if !(spec.radius_m > 7e6) {
            return Err(Error::config("constellation.radius_m", "must exceed 7000 km"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
        let sky: Vec<SkyPosition> = if spec.satellites.is_empty() {
            if spec.count == 0 {
                return Err(Error::config("constellation.count", "must be positive"));
            }
            if !(spec.min_elevation_deg < spec.max_elevation_deg) || spec.min_elevation_deg < 0.0 || spec.max_elevation_deg > 90.0 {
                return Err(Error::config("constellation.min_elevation_deg", "elevation band must satisfy 0 <= min < max <= 90"));
            }
            let n = spec.count;
            (0..n)
                .map(|k| {
                    let jitter = rng.random_range(-0.3..0.3);
                    // Alternate between the lower and upper half of the band.
                    let half = (spec.max_elevation_deg - spec.min_elevation_deg) / 2.0;
                    let lo = spec.min_elevation_deg + if k % 2 == 0 { 0.0 } else { half };
                    SkyPosition {
                        azimuth_deg: 360.0 * (k as f64 + 0.5 + jitter) / n as f64,
                        elevation_deg: lo + rng.random_range(0.0..half),
                    }
                })
                .collect()
        } else {
            spec.satellites.clone()
        };
        let o = llh_to_ecef(origin).to_vector();
        let enu_to_ecef = dcm_ecef_to_enu(origin).transpose();
        let r = spec.radius_m;
        let rate = if spec.static_geometry { 0.0 } else { (EARTH_MU / r.powi(3)).sqrt() };
        let mut satellites = Vec::with_capacity(sky.len());
        for (k, s) in sky.iter().enumerate() {
            if !(-90.0..=90.0).contains(&s.elevation_deg) {
                return Err(Error::config(format!("constellation.satellites[{k}].elevation_deg"), "must lie in [-90, 90]"));
            }
            let (az, el) = (s.azimuth_deg.to_radians(), s.elevation_deg.to_radians());
            let u = enu_to_ecef * Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            // |o + rho u| = r
            let b = o.dot(&u);
            let rho = -b + (b * b - o.norm_squared() + r * r).sqrt();
            let e1 = (o + rho * u) / r;
            let z = Vector3::z();
            let mut n = z - z.dot(&e1) * e1;
            if n.norm() < 1e-6 {
                n = Vector3::x() - e1.x * e1;
            }
            let n = n.normalize();
            let plane = rng.random_range(-1.2..1.2f64);
            let e2 = plane.cos() * n + plane.sin() * e1.cross(&n);
            satellites.push(Satellite { id: k as u32 + 1, radius: r, e1, e2, rate });
        }
        Ok(Self { satellites })
    }
}
