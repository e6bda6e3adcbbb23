//! WGS84 frames: geodetic (LLH), ECEF and the local NED/ENU tangent planes.
//!
//! Angles are radians throughout. The ECEF to LLH inverse uses Heikkinen's
//! closed-form solution, so no iteration is involved in either direction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Direction cosine matrix, rotating vectors from one frame into another.
pub type Dcm = Matrix3<f64>;

/// Ellipsoid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wgs84Constants {
    /// First eccentricity.
    pub ecc: f64,
    /// Equatorial radius in meters.
    pub a_m: f64,
}

impl Default for Wgs84Constants {
    fn default() -> Self {
        WGS84
    }
}

pub const WGS84: Wgs84Constants = Wgs84Constants {
    ecc: 0.08181919,
    a_m: 6_378_137.0,
};

impl Wgs84Constants {
    pub fn ecc2(&self) -> f64 {
        self.ecc * self.ecc
    }

    /// Semi-minor axis.
    pub fn b_m(&self) -> f64 {
        self.a_m * (1.0 - self.ecc2()).sqrt()
    }

    /// Transverse radius of curvature at latitude `lat`.
    pub fn transverse_radius(&self, lat: f64) -> f64 {
        let s = lat.sin();
        self.a_m / (1.0 - self.ecc2() * s * s).sqrt()
    }
}

/// Geodetic coordinate on the WGS84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    pub latitude_rad: f64,
    pub longitude_rad: f64,
    pub height_m: f64,
}

impl GeodeticCoord {
    /// Builds a coordinate, normalizing longitude into (-pi, pi].
    pub fn new(latitude_rad: f64, longitude_rad: f64, height_m: f64) -> Result<Self> {
        if !(latitude_rad.is_finite() && longitude_rad.is_finite() && height_m.is_finite()) {
            return Err(Error::DegenerateInput("non-finite geodetic coordinate".into()));
        }
        if latitude_rad.abs() > PI / 2.0 + 1e-12 {
            return Err(Error::DegenerateInput(format!(
                "latitude {latitude_rad} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            latitude_rad: latitude_rad.clamp(-PI / 2.0, PI / 2.0),
            longitude_rad: normalize_longitude(longitude_rad),
            height_m,
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height_m: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height_m)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_longitude(lon: f64) -> f64 {
    let mut l = (lon + PI).rem_euclid(2.0 * PI) - PI;
    if l <= -PI {
        l += 2.0 * PI;
    }
    l
}

/// Point in the Earth-centered Earth-fixed frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefCoord {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl EcefCoord {
    pub fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        Self { x_m, y_m, z_m }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x_m, self.y_m, self.z_m)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }
}

impl From<Vector3<f64>> for EcefCoord {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl From<EcefCoord> for Vector3<f64> {
    fn from(p: EcefCoord) -> Self {
        p.to_vector()
    }
}

pub fn llh_to_ecef(p: &GeodeticCoord) -> EcefCoord {
    llh_to_ecef_with(p, &WGS84)
}

pub fn llh_to_ecef_with(p: &GeodeticCoord, c: &Wgs84Constants) -> EcefCoord {
    let (sl, cl) = p.latitude_rad.sin_cos();
    let (so, co) = p.longitude_rad.sin_cos();
    let re = c.transverse_radius(p.latitude_rad);
    EcefCoord::new(
        (re + p.height_m) * cl * co,
        (re + p.height_m) * cl * so,
        (re * (1.0 - c.ecc2()) + p.height_m) * sl,
    )
}

/// Minimum distance from the Earth's center accepted by [`ecef_to_llh`].
pub const MIN_ECEF_NORM_M: f64 = 1e3;

pub fn ecef_to_llh(p: &EcefCoord) -> Result<GeodeticCoord> {
    ecef_to_llh_with(p, &WGS84)
}

/// Heikkinen's closed-form ECEF to geodetic conversion.
pub fn ecef_to_llh_with(p: &EcefCoord, c: &Wgs84Constants) -> Result<GeodeticCoord> {
    if !p.norm().is_finite() || p.norm() < MIN_ECEF_NORM_M {
        return Err(Error::DegenerateInput(format!(
            "ECEF point at {:.3} m from the Earth's center",
            p.norm()
        )));
    }
    let a = c.a_m;
    let e2 = c.ecc2();
    let b = c.b_m();
    let a2 = a * a;
    let b2 = b * b;
    let ep2 = (a2 - b2) / b2;
    let (x, y, z) = (p.x_m, p.y_m, p.z_m);
    let r2 = x * x + y * y;
    let r = r2.sqrt();

    let f = 54.0 * b2 * z * z;
    let g = r2 + (1.0 - e2) * z * z - e2 * (a2 - b2);
    let cc = e2 * e2 * f * r2 / (g * g * g);
    let s = (1.0 + cc + (cc * cc + 2.0 * cc).sqrt()).cbrt();
    let k = s + 1.0 + 1.0 / s;
    let pp = f / (3.0 * k * k * g * g);
    let q = (1.0 + 2.0 * e2 * e2 * pp).sqrt();
    let r0_sq = 0.5 * a2 * (1.0 + 1.0 / q) - pp * (1.0 - e2) * z * z / (q * (1.0 + q)) - 0.5 * pp * r2;
    let r0 = -pp * e2 * r / (1.0 + q) + r0_sq.max(0.0).sqrt();
    let t = r - e2 * r0;
    let u = (t * t + z * z).sqrt();
    let v = (t * t + (1.0 - e2) * z * z).sqrt();
    let z0 = b2 * z / (a * v);

    let height = u * (1.0 - b2 / (a * v));
    let lat = (z + ep2 * z0).atan2(r);
    let lon = if r == 0.0 { 0.0 } else { y.atan2(x) };
    Ok(GeodeticCoord {
        latitude_rad: lat,
        longitude_rad: normalize_longitude(lon),
        height_m: height,
    })
}

/// DCM rotating ECEF vectors into the NED frame at `origin`.
pub fn dcm_ecef_to_ned(origin: &GeodeticCoord) -> Dcm {
    let (sl, cl) = origin.latitude_rad.sin_cos();
    let (so, co) = origin.longitude_rad.sin_cos();
    // Row 3, column 1 is -cos(lat) cos(lon); the orthonormality tests pin it.
    Matrix3::new(
        -sl * co, -sl * so, cl, //
        -so, co, 0.0, //
        -cl * co, -cl * so, -sl,
    )
}

/// DCM rotating ECEF vectors into the ENU frame at `origin`.
pub fn dcm_ecef_to_enu(origin: &GeodeticCoord) -> Dcm {
    let (sl, cl) = origin.latitude_rad.sin_cos();
    let (so, co) = origin.longitude_rad.sin_cos();
    Matrix3::new(
        -so, co, 0.0, //
        -co * sl, -so * sl, cl, //
        co * cl, so * cl, sl,
    )
}

/// Local ENU coordinates of `p` relative to `origin`.
pub fn ecef_to_enu(p: &Vector3<f64>, origin: &GeodeticCoord) -> Vector3<f64> {
    let o = llh_to_ecef(origin).to_vector();
    dcm_ecef_to_enu(origin) * (p - o)
}

pub fn enu_to_ecef(enu: &Vector3<f64>, origin: &GeodeticCoord) -> Vector3<f64> {
    let o = llh_to_ecef(origin).to_vector();
    o + dcm_ecef_to_enu(origin).transpose() * enu
}

/// Unit vector of the ellipsoid normal ("up") at `origin`, in ECEF.
pub fn up_vector(origin: &GeodeticCoord) -> Vector3<f64> {
    dcm_ecef_to_enu(origin).row(2).transpose()
}

/// Elevation angle of `target` seen from `observer`, against the ellipsoid normal.
pub fn elevation(observer: &Vector3<f64>, target: &Vector3<f64>) -> Result<f64> {
    let llh = ecef_to_llh(&EcefCoord::from(*observer))?;
    let los = target - observer;
    let n = los.norm();
    if n == 0.0 {
        return Err(Error::DegenerateGeometry("coincident points".into()));
    }
    Ok((up_vector(&llh).dot(&los) / n).clamp(-1.0, 1.0).asin())
}

/// Standard gravity magnitude (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Central gravity model shared by the simulator and the estimator:
/// magnitude [`STANDARD_GRAVITY`], pointing at the Earth's center.
pub fn gravity_ecef(p: &Vector3<f64>) -> Vector3<f64> {
    let n = p.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    -STANDARD_GRAVITY * p / n
}
