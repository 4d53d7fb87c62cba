//! Global-frame initialisation, its observability test, dropout detection
//! and drift correction after a GPS outage.

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{predict_antenna, ExtrinsicsGW, GpsFactor, StateId};
use crate::geom::{exp_so3, log_so3, yaw_rotation, Pose3};
use crate::graph::GraphProblem;
use crate::scalar::{lit, to_f64, Real};

/// Closed-form 4-DoF fit of `z ≈ R_z(θ) p + t` over `(p_W, z_G)` pairs.
pub fn svd_init<T: Real>(pairs: &[(Vector3<T>, Vector3<T>)]) -> Result<ExtrinsicsGW<T>> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    let n: T = lit(pairs.len() as f64);
    let cw = pairs.iter().fold(Vector3::zeros(), |a, (p, _)| a + p) / n;
    let cg = pairs.iter().fold(Vector3::zeros(), |a, (_, z)| a + z) / n;
    let (mut s, mut c, mut spread) = (T::zero(), T::zero(), T::zero());
    for (p, z) in pairs {
        let a = p - cw;
        let b = z - cg;
        s += a.x * b.y - a.y * b.x;
        c += a.x * b.x + a.y * b.y;
        spread += a.x * a.x + a.y * a.y;
    }
    if !(spread > lit(1e-12)) {
        return Err(Error::DegenerateSpread);
    }
    let yaw = s.atan2(c);
    let translation = cg - yaw_rotation(yaw).rotate(&cw);
    Ok(ExtrinsicsGW::new(yaw, translation))
}

/// Approximate Hessian of the GPS terms over `[δp_GW, δθ]` and the yaw variance it implies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ObservabilityReport<T: Real> {
    pub hessian: Matrix4<T>,
    /// `H⁻¹`, absent when `H` is singular.
    pub covariance: Option<Matrix4<T>>,
    /// Yaw variance in rad², infinite when `H` is singular.
    pub p_theta_theta: f64,
    pub observable: bool,
    pub num_measurements: usize,
}

pub fn assess_observability<T: Real>(
    factors: &[GpsFactor<T>],
    problem: &GraphProblem<T>,
    ext: &ExtrinsicsGW<T>,
    sigma_theta: T,
) -> Result<ObservabilityReport<T>> {
    if factors.is_empty() {
        return Err(Error::TooFewPairs { needed: 1, got: 0 });
    }
    let mut h = Matrix4::<T>::zeros();
    for f in factors {
        let pred = predict_antenna(f, problem.state(f.anchor)?, &problem.gravity)?;
        let eval = pred.evaluate(&f.measurement, ext)?;
        let e = pred.extrinsics_jacobian(ext);
        h += e.transpose() * eval.weight * e;
    }
    h = (h + h.transpose()) * lit::<T>(0.5);
    let eig = h.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let covariance = if hi > T::zero() && lo > hi * lit(1e-12) {
        h.cholesky().map(|c| c.inverse())
    } else {
        None
    };
    let p_theta_theta = covariance.map_or(f64::INFINITY, |p| to_f64(p[(3, 3)]));
    Ok(ObservabilityReport {
        hessian: h,
        covariance,
        p_theta_theta,
        observable: p_theta_theta < to_f64(sigma_theta * sigma_theta),
        num_measurements: factors.len(),
    })
}

/// True when the newest state carrying a GPS factor has already been fixed,
/// i.e. no fix arrived for longer than the optimisation window.
pub fn detect_dropout<T: Real>(problem: &GraphProblem<T>) -> bool {
    problem
        .newest_gps_state()
        .is_some_and(|id| problem.is_fixed(id).unwrap_or(false))
}

/// States touched by a drift correction: everything after `pivot` up to and
/// including `last`. States after `last` receive the full correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Last GPS-anchored state before the outage; never moved.
    pub pivot: StateId,
    pub last: StateId,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.last.0 - self.pivot.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of the correction applied to `id`.
    pub fn fraction<T: Real>(&self, id: StateId) -> T {
        let k = (id.0 - self.pivot.0).min(self.len());
        lit::<T>(k as f64) / lit(self.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    Position,
    Full,
}

/// A drift correction applied to the states after a dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct AlignmentCorrection<T: Real> {
    /// Estimated drift `T_WnewW`; the states receive its inverse.
    pub drift: Pose3<T>,
    pub segment: Segment,
    pub mode: AlignmentMode,
}

/// Segment between the newest GPS-anchored state and the anchor of `factor`.
pub fn dropout_segment<T: Real>(problem: &GraphProblem<T>, factor: &GpsFactor<T>) -> Result<Segment> {
    let pivot = problem.newest_gps_state().ok_or(Error::NoSegment)?;
    problem.state(factor.anchor)?;
    if factor.anchor <= pivot {
        return Err(Error::NoSegment);
    }
    Ok(Segment {
        pivot,
        last: factor.anchor,
    })
}

/// Moves the segment so that the new fix is matched exactly, distributing
/// the discrepancy uniformly per state.
pub fn position_align<T: Real>(
    problem: &mut GraphProblem<T>,
    factor: &GpsFactor<T>,
) -> Result<AlignmentCorrection<T>> {
    if !problem.extrinsics.fixed {
        return Err(Error::NotObservable);
    }
    let segment = dropout_segment(problem, factor)?;
    let pred = predict_antenna(factor, problem.state(factor.anchor)?, &problem.gravity)?;
    let implied = problem.extrinsics.to_world(&factor.measurement.position);
    let offset = implied - pred.position;
    for k in segment.pivot.0 + 1..problem.num_states() {
        let id = StateId(k);
        let mut s = *problem.state(id)?;
        s.position += offset * segment.fraction::<T>(id);
        problem.set_state(id, s)?;
    }
    Ok(AlignmentCorrection {
        drift: Pose3::new(crate::geom::Rot3::identity(), -offset),
        segment,
        mode: AlignmentMode::Position,
    })
}

/// Applies `T_WnewW⁻¹` across the segment: state `k` of `K` is rotated about
/// the pivot by the fraction `k/K` of the drift rotation and then shifted by
/// `k/K` of the remaining position error.
pub fn full_align<T: Real>(
    problem: &mut GraphProblem<T>,
    ext_new: &ExtrinsicsGW<T>,
    segment: Segment,
) -> Result<AlignmentCorrection<T>> {
    if segment.is_empty() {
        return Err(Error::NoSegment);
    }
    problem.state(segment.last)?;
    let drift = ext_new.pose().inverse().compose(&problem.extrinsics.pose());
    let correction = drift.inverse();
    let rot = correction.rotation.matrix();
    let phi = log_so3(&correction.rotation);
    let pivot = problem.state(segment.pivot)?.position;
    let shift = correction.translation + rot * pivot - pivot;
    for k in segment.pivot.0 + 1..problem.num_states() {
        let id = StateId(k);
        let f: T = segment.fraction(id);
        let r = exp_so3(&(phi * f));
        let mut s = *problem.state(id)?;
        s.position = pivot + r.rotate(&(s.position - pivot)) + shift * f;
        s.rotation = r.compose(&s.rotation);
        s.velocity = r.rotate(&s.velocity);
        problem.set_state(id, s)?;
    }
    Ok(AlignmentCorrection {
        drift,
        segment,
        mode: AlignmentMode::Full,
    })
}

/// Correspondences `(p_W, z_G)` from the current estimates of the anchors.
pub fn antenna_pairs<T: Real>(
    problem: &GraphProblem<T>,
    factors: &[GpsFactor<T>],
) -> Result<Vec<(Vector3<T>, Vector3<T>)>> {
    factors
        .iter()
        .map(|f| {
            let pred = predict_antenna(f, problem.state(f.anchor)?, &problem.gravity)?;
            Ok((pred.position, f.measurement.position))
        })
        .collect()
}

/// Fits new extrinsics to `factors` and tests whether they are observable.
pub fn reinitialise<T: Real>(
    problem: &GraphProblem<T>,
    factors: &[GpsFactor<T>],
    sigma_theta: T,
) -> Result<(ExtrinsicsGW<T>, ObservabilityReport<T>)> {
    let ext = svd_init(&antenna_pairs(problem, factors)?)?;
    let report = assess_observability(factors, problem, &ext, sigma_theta)?;
    Ok((ext, report))
}

/// Largest horizontal distance of any fix from the first one.
pub fn horizontal_baseline<T: Real>(factors: &[GpsFactor<T>]) -> T {
    let Some(first) = factors.first() else {
        return T::zero();
    };
    let origin = first.measurement.position;
    factors.iter().fold(T::zero(), |m, f| {
        let d = f.measurement.position - origin;
        m.max((d.x * d.x + d.y * d.y).sqrt())
    })
}
