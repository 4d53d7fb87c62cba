//! WGS-84 geodetic coordinates and the local East-North-Up frame.
//!
//! Altitudes are ellipsoidal heights; no geoid model is applied.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Rot3;
use crate::scalar::{lit, Real};

/// WGS-84 semi-major axis, metres.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

fn e2<T: Real>() -> T {
    let f: T = lit(WGS84_F);
    f * (lit::<T>(2.0) - f)
}

/// Latitude/longitude in decimal degrees, altitude in metres above the ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct GeodeticPoint<T: Real> {
    pub latitude: T,
    pub longitude: T,
    pub altitude: T,
}

impl<T: Real> GeodeticPoint<T> {
    pub fn new(latitude: T, longitude: T, altitude: T) -> Result<Self> {
        if !(latitude.abs() <= lit(90.0)) || !(longitude.abs() <= lit(180.0)) {
            return Err(Error::Config(format!(
                "geodetic point out of range: lat {}, lon {}",
                crate::scalar::to_f64(latitude),
                crate::scalar::to_f64(longitude)
            )));
        }
        Ok(Self {
            latitude,
            longitude,
            altitude,
        })
    }
}

pub fn geodetic_to_ecef<T: Real>(p: &GeodeticPoint<T>) -> Vector3<T> {
    let a: T = lit(WGS84_A);
    let e2 = e2::<T>();
    let (slat, clat) = p.latitude.to_radians_sin_cos();
    let (slon, clon) = p.longitude.to_radians_sin_cos();
    let n = a / (T::one() - e2 * slat * slat).sqrt();
    Vector3::new(
        (n + p.altitude) * clat * clon,
        (n + p.altitude) * clat * slon,
        (n * (T::one() - e2) + p.altitude) * slat,
    )
}

/// Inverse of [`geodetic_to_ecef`] by fixed-point iteration on latitude.
pub fn ecef_to_geodetic<T: Real>(x: &Vector3<T>) -> GeodeticPoint<T> {
    let a: T = lit(WGS84_A);
    let e2 = e2::<T>();
    let p = (x.x * x.x + x.y * x.y).sqrt();
    let lon = x.y.atan2(x.x);
    let mut lat = x.z.atan2(p * (T::one() - e2));
    let mut h = T::zero();
    for _ in 0..8 {
        let (s, c) = lat.sin_cos();
        let n = a / (T::one() - e2 * s * s).sqrt();
        h = if c.abs() > s.abs() {
            p / c - n
        } else {
            x.z / s - n * (T::one() - e2)
        };
        lat = x.z.atan2(p * (T::one() - e2 * n / (n + h)));
    }
    let deg = lit::<T>(180.0) / T::pi();
    GeodeticPoint {
        latitude: lat * deg,
        longitude: lon * deg,
        altitude: h,
    }
}

trait DegreesSinCos: Sized {
    fn to_radians_sin_cos(self) -> (Self, Self);
}

impl<T: Real> DegreesSinCos for T {
    fn to_radians_sin_cos(self) -> (T, T) {
        (self * T::pi() / lit(180.0)).sin_cos()
    }
}

/// Local ENU frame anchored at a geodetic origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct EnuOrigin<T: Real> {
    pub origin: GeodeticPoint<T>,
    pub origin_ecef: Vector3<T>,
    /// Rotation taking ECEF coordinates into ENU.
    pub ecef_to_enu: Rot3<T>,
    matrix: Matrix3<T>,
}

impl<T: Real> EnuOrigin<T> {
    pub fn new(origin: GeodeticPoint<T>) -> Self {
        let (slat, clat) = origin.latitude.to_radians_sin_cos();
        let (slon, clon) = origin.longitude.to_radians_sin_cos();
        let z = T::zero();
        #[rustfmt::skip]
        let matrix = Matrix3::new(
            -slon, clon, z,
            -slat * clon, -slat * slon, clat,
            clat * clon, clat * slon, slat,
        );
        Self {
            origin,
            origin_ecef: geodetic_to_ecef(&origin),
            ecef_to_enu: Rot3::from_rotation_matrix(&matrix),
            matrix,
        }
    }

    /// Unit vectors of the east, north and up axes expressed in ECEF.
    pub fn axes(&self) -> [Vector3<T>; 3] {
        let m = self.matrix.transpose();
        [m.column(0).into(), m.column(1).into(), m.column(2).into()]
    }

    pub fn to_enu(&self, p: &GeodeticPoint<T>) -> Vector3<T> {
        self.ecef_to_local(&geodetic_to_ecef(p))
    }

    pub fn ecef_to_local(&self, x: &Vector3<T>) -> Vector3<T> {
        self.matrix * (x - self.origin_ecef)
    }

    pub fn from_enu(&self, enu: &Vector3<T>) -> GeodeticPoint<T> {
        ecef_to_geodetic(&(self.matrix.transpose() * enu + self.origin_ecef))
    }
}

pub fn to_enu<T: Real>(p: &GeodeticPoint<T>, origin: &EnuOrigin<T>) -> Vector3<T> {
    origin.to_enu(p)
}
