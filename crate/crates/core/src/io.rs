//! CSV formats for IMU, GPS, odometry, ground truth and plot output.

use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::GpsMeasurement;
use crate::geodetic::{EnuOrigin, GeodeticPoint};
use crate::geom::{Pose3, Rot3};
use crate::imu::ImuSample;

#[derive(Debug, Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

pub fn read_imu_csv(path: impl AsRef<Path>) -> Result<Vec<ImuSample<f64>>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|row| {
            let r: ImuRow = row?;
            Ok(ImuSample::new(r.t, Vector3::new(r.gx, r.gy, r.gz), Vector3::new(r.ax, r.ay, r.az)))
        })
        .collect()
}

pub fn write_imu_csv(path: impl AsRef<Path>, samples: &[ImuSample<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(ImuRow {
            t: s.t,
            gx: s.gyro.x,
            gy: s.gyro.y,
            gz: s.gyro.z,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GpsRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    sxx: f64,
    syy: f64,
    szz: f64,
}

#[derive(Debug, Deserialize)]
struct GeodeticGpsRow {
    t: f64,
    lat: f64,
    lon: f64,
    alt: f64,
    sxx: f64,
    syy: f64,
    szz: f64,
}

fn gps_covariance(sxx: f64, syy: f64, szz: f64) -> Result<Matrix3<f64>> {
    if [sxx, syy, szz].iter().all(|v| *v > 0.0) {
        Ok(Matrix3::from_diagonal(&Vector3::new(sxx, syy, szz)))
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Fixes and the ENU origin they were converted about, if any.
pub type GpsReadout = (Vec<GpsMeasurement<f64>>, Option<EnuOrigin<f64>>);

/// Reads fixes in local ENU metres (`t,x,y,z,...`) or geodetic degrees
/// (`t,lat,lon,alt,...`). Geodetic fixes are converted about `origin`, or
/// about the first fix when none is given; the origin used is returned.
pub fn read_gps_csv(
    path: impl AsRef<Path>,
    origin: Option<EnuOrigin<f64>>,
) -> Result<GpsReadout> {
    let mut reader = csv::Reader::from_path(path)?;
    let geodetic = reader.headers()?.iter().any(|h| h == "lat");
    if !geodetic {
        let fixes = reader
            .deserialize()
            .map(|row| {
                let r: GpsRow = row?;
                Ok(GpsMeasurement::new(r.t, Vector3::new(r.x, r.y, r.z), gps_covariance(r.sxx, r.syy, r.szz)?))
            })
            .collect::<Result<_>>()?;
        return Ok((fixes, origin));
    }
    let mut origin = origin;
    let mut fixes = Vec::new();
    for row in reader.deserialize() {
        let r: GeodeticGpsRow = row?;
        let p = GeodeticPoint::new(r.lat, r.lon, r.alt)?;
        let o = *origin.get_or_insert_with(|| EnuOrigin::new(p));
        fixes.push(GpsMeasurement::new(r.t, o.to_enu(&p), gps_covariance(r.sxx, r.syy, r.szz)?));
    }
    Ok((fixes, origin))
}

pub fn write_gps_csv(path: impl AsRef<Path>, fixes: &[GpsMeasurement<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in fixes {
        let c = f.covariance;
        w.serialize(GpsRow {
            t: f.t,
            x: f.position.x,
            y: f.position.y,
            z: f.position.z,
            sxx: c[(0, 0)],
            syy: c[(1, 1)],
            szz: c[(2, 2)],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Relative pose between the states at `t_from` and `t_to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryRecord {
    pub t_from: f64,
    pub t_to: f64,
    pub measured: Pose3<f64>,
    pub covariance: Matrix6<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OdometryRow {
    t_from: f64,
    t_to: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    sigma_t: f64,
    sigma_r: f64,
}

pub fn read_odometry_csv(path: impl AsRef<Path>) -> Result<Vec<OdometryRecord>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|row| {
            let r: OdometryRow = row?;
            if !(r.sigma_t > 0.0 && r.sigma_r > 0.0) || r.t_to <= r.t_from {
                return Err(Error::Config(format!("bad odometry row at t_from = {}", r.t_from)));
            }
            let (t, a) = (r.sigma_t * r.sigma_t, r.sigma_r * r.sigma_r);
            Ok(OdometryRecord {
                t_from: r.t_from,
                t_to: r.t_to,
                measured: Pose3::new(Rot3::from_wxyz(r.qw, r.qx, r.qy, r.qz), Vector3::new(r.px, r.py, r.pz)),
                covariance: Matrix6::from_diagonal(&Vector6::new(t, t, t, a, a, a)),
            })
        })
        .collect()
}

pub fn write_odometry_csv(path: impl AsRef<Path>, records: &[OdometryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let [qw, qx, qy, qz] = r.measured.rotation.wxyz();
        let p = r.measured.translation;
        w.serialize(OdometryRow {
            t_from: r.t_from,
            t_to: r.t_to,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw,
            qx,
            qy,
            qz,
            sigma_t: r.covariance[(0, 0)].sqrt(),
            sigma_r: r.covariance[(3, 3)].sqrt(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Timestamped poses as `t,px,py,pz,qw,qx,qy,qz`.
pub fn write_poses_csv(path: impl AsRef<Path>, poses: &[(f64, Pose3<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (t, pose) in poses {
        let [qw, qx, qy, qz] = pose.rotation.wxyz();
        let p = pose.translation;
        w.serialize(PoseRow {
            t: *t,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw,
            qx,
            qy,
            qz,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_poses_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose3<f64>)>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|row| {
            let r: PoseRow = row?;
            Ok((r.t, Pose3::new(Rot3::from_wxyz(r.qw, r.qx, r.qy, r.qz), Vector3::new(r.px, r.py, r.pz))))
        })
        .collect()
}

/// Plot-ready `t,x,y,z` rows.
pub fn write_points_csv(path: impl AsRef<Path>, points: &[(f64, Vector3<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "y", "z"])?;
    for (t, p) in points {
        w.write_record([t, &p.x, &p.y, &p.z].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
