//! Residuals, Jacobians and weights for the global-position factor, the
//! relative-pose odometry factor and the IMU link between consecutive states.
//!
//! Jacobians are taken with respect to the navigation-state error
//! `[δr, δα, δv, δb_g, δb_a]` (see [`crate::imu::state_index`]) and, for the
//! extrinsics, with respect to `[δp_GW, δθ]` where `p_GW = p̄_GW + δp_GW` and
//! `C_GW = Exp(δθ e_z) C̄_GW`.

use std::fmt;

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{left_jacobian_inv, log_so3, right_jacobian_inv, skew, yaw_rotation, Pose3, Rot3};
use crate::imu::{correct_bias, predict, prediction_jacobian, state_index as si, Matrix15, NavState, PreintegratedImu, Vector15};
use crate::scalar::Real;

/// Identifier of a state in a [`crate::graph::GraphProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

pub type Matrix3x15<T> = SMatrix<T, 3, 15>;
pub type Matrix3x4<T> = SMatrix<T, 3, 4>;
pub type Matrix6x15<T> = SMatrix<T, 6, 15>;

/// A position fix in the global ENU frame `G`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct GpsMeasurement<T: Real> {
    pub t: T,
    /// `z`, metres in `G`.
    pub position: Vector3<T>,
    /// `Σ_g0`, m².
    pub covariance: Matrix3<T>,
}

impl<T: Real> GpsMeasurement<T> {
    pub fn new(t: T, position: Vector3<T>, covariance: Matrix3<T>) -> Self {
        Self {
            t,
            position,
            covariance,
        }
    }

    pub fn isotropic(t: T, position: Vector3<T>, sigma: T) -> Self {
        Self::new(t, position, Matrix3::identity() * (sigma * sigma))
    }
}

/// Four degree-of-freedom transform `T_GW` between the estimator world frame
/// and the global frame. Both frames are gravity aligned, so only the yaw
/// angle of the rotation is free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ExtrinsicsGW<T: Real> {
    pub yaw: T,
    pub translation: Vector3<T>,
    pub fixed: bool,
}

impl<T: Real> ExtrinsicsGW<T> {
    pub fn new(yaw: T, translation: Vector3<T>) -> Self {
        Self {
            yaw,
            translation,
            fixed: false,
        }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), Vector3::zeros())
    }

    pub fn from_pose(pose: &Pose3<T>) -> Self {
        Self::new(pose.rotation.yaw(), pose.translation)
    }

    pub fn rotation(&self) -> Rot3<T> {
        yaw_rotation(self.yaw)
    }

    pub fn pose(&self) -> Pose3<T> {
        Pose3::new(self.rotation(), self.translation)
    }

    /// Maps a point from `W` into `G`.
    pub fn to_global(&self, p_w: &Vector3<T>) -> Vector3<T> {
        self.rotation().rotate(p_w) + self.translation
    }

    /// Maps a point from `G` into `W`.
    pub fn to_world(&self, p_g: &Vector3<T>) -> Vector3<T> {
        self.rotation().inverse().rotate(&(p_g - self.translation))
    }

    pub fn retract(&self, delta: &SVector<T, 4>) -> Self {
        Self {
            yaw: self.yaw + delta[3],
            translation: self.translation + Vector3::new(delta[0], delta[1], delta[2]),
            fixed: self.fixed,
        }
    }
}

/// Robust loss applied to whitened residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    #[default]
    None,
    Cauchy {
        scale: f64,
    },
}

impl Loss {
    /// Returns `(ρ(s), ρ'(s))` for a squared whitened norm `s`.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        match *self {
            Loss::None => (s, 1.0),
            Loss::Cauchy { scale } => {
                let c2 = scale * scale;
                (c2 * (1.0 + s / c2).ln(), 1.0 / (1.0 + s / c2))
            }
        }
    }
}

/// Global position factor: a fix at time `t_j` predicted from the anchor
/// state `i` through pre-integrated IMU terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct GpsFactor<T: Real> {
    pub measurement: GpsMeasurement<T>,
    pub anchor: StateId,
    pub preint: PreintegratedImu<T>,
    /// `p_SA`, antenna position in the IMU frame.
    pub lever_arm: Vector3<T>,
}

/// Residual and weight of a [`GpsFactor`].
#[derive(Clone, Copy, Debug)]
pub struct GpsEvaluation<T: Real> {
    pub residual: Vector3<T>,
    /// `W_g = Σ_g⁻¹`.
    pub weight: Matrix3<T>,
    /// `Σ_g = Σ_g0 + J Σ_x Jᵀ`.
    pub covariance: Matrix3<T>,
    /// Predicted antenna position in `W`.
    pub antenna_world: Vector3<T>,
}

/// Antenna position at the fix time predicted in `W` from the anchor state,
/// with its covariance and Jacobian with respect to the anchor state error.
#[derive(Clone, Copy, Debug)]
pub struct AntennaPrediction<T: Real> {
    pub position: Vector3<T>,
    /// Covariance of the prediction in `W`, conditioned on the anchor state.
    pub covariance: Matrix3<T>,
    /// `∂p_A / ∂δχ_i`.
    pub jacobian: Matrix3x15<T>,
}

pub fn predict_antenna<T: Real>(
    factor: &GpsFactor<T>,
    state_i: &NavState<T>,
    gravity: &Vector3<T>,
) -> Result<AntennaPrediction<T>> {
    let pre = correct_bias(&factor.preint, state_i.bias);
    let (pred, pred_cov) = predict(state_i, &pre, gravity)?;
    let lever_world = pred.rotation.rotate(&factor.lever_arm);
    // Antenna position with respect to the predicted pose error [δr, δα].
    let mut j_pose = SMatrix::<T, 3, 6>::zeros();
    j_pose
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    j_pose
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&-skew(&lever_world));
    let pose_cov = pred_cov.fixed_view::<6, 6>(0, 0).into_owned();
    let chain = prediction_jacobian(state_i, &pre);
    Ok(AntennaPrediction {
        position: pred.position + lever_world,
        covariance: j_pose * pose_cov * j_pose.transpose(),
        jacobian: j_pose * chain.fixed_view::<6, 15>(0, 0),
    })
}

impl<T: Real> AntennaPrediction<T> {
    pub fn evaluate(&self, measurement: &GpsMeasurement<T>, ext: &ExtrinsicsGW<T>) -> Result<GpsEvaluation<T>> {
        let c_gw = ext.rotation().matrix();
        let residual = measurement.position - ext.to_global(&self.position);
        let covariance = measurement.covariance + c_gw * self.covariance * c_gw.transpose();
        let weight = covariance
            .cholesky()
            .ok_or(Error::SingularCovariance)?
            .inverse();
        Ok(GpsEvaluation {
            residual,
            weight,
            covariance,
            antenna_world: self.position,
        })
    }

    pub fn state_jacobian(&self, ext: &ExtrinsicsGW<T>) -> Matrix3x15<T> {
        -(ext.rotation().matrix() * self.jacobian)
    }

    pub fn extrinsics_jacobian(&self, ext: &ExtrinsicsGW<T>) -> Matrix3x4<T> {
        let antenna_global = ext.rotation().rotate(&self.position);
        let mut j = Matrix3x4::<T>::zeros();
        j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&-Matrix3::identity());
        // Yaw column of skew(C_GW p_A) e_z.
        j.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&antenna_global.cross(&Vector3::z()));
        j
    }
}

pub fn gps_residual<T: Real>(
    factor: &GpsFactor<T>,
    state_i: &NavState<T>,
    ext: &ExtrinsicsGW<T>,
    gravity: &Vector3<T>,
) -> Result<GpsEvaluation<T>> {
    predict_antenna(factor, state_i, gravity)?.evaluate(&factor.measurement, ext)
}

/// Jacobians of the GPS residual with respect to the anchor state error and
/// the 4-DoF extrinsics error.
pub fn gps_jacobians<T: Real>(
    factor: &GpsFactor<T>,
    state_i: &NavState<T>,
    ext: &ExtrinsicsGW<T>,
    gravity: &Vector3<T>,
) -> Result<(Matrix3x15<T>, Matrix3x4<T>)> {
    let pred = predict_antenna(factor, state_i, gravity)?;
    Ok((pred.state_jacobian(ext), pred.extrinsics_jacobian(ext)))
}

/// Relative-pose constraint between two states, standing in for visual odometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct RelPoseFactor<T: Real> {
    pub from: StateId,
    pub to: StateId,
    /// Measured `T_ij` (pose of `j` in the body frame of `i`).
    pub measured: Pose3<T>,
    /// Covariance over `[translation, rotation]`.
    pub covariance: Matrix6<T>,
}

impl<T: Real> RelPoseFactor<T> {
    pub fn new(from: StateId, to: StateId, measured: Pose3<T>, covariance: Matrix6<T>) -> Result<Self> {
        covariance.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            from,
            to,
            measured,
            covariance,
        })
    }
}

/// Residual `[t̂_ij − t_ij ; log(C_ijᵀ Ĉ_ij)]` and Jacobians w.r.t. both states.
pub fn relpose_residual<T: Real>(
    factor: &RelPoseFactor<T>,
    state_i: &NavState<T>,
    state_j: &NavState<T>,
) -> (Vector6<T>, Matrix6x15<T>, Matrix6x15<T>) {
    let ci = state_i.rotation;
    let cit = ci.inverse();
    let dp = state_j.position - state_i.position;
    let t_est = cit.rotate(&dp);
    let rot_err = factor
        .measured
        .rotation
        .inverse()
        .compose(&cit)
        .compose(&state_j.rotation);
    let r_rot = log_so3(&rot_err);
    let mut residual = Vector6::zeros();
    residual
        .fixed_rows_mut::<3>(0)
        .copy_from(&(t_est - factor.measured.translation));
    residual.fixed_rows_mut::<3>(3).copy_from(&r_rot);

    let cit_m = cit.matrix();
    let cjt_m = state_j.rotation.inverse().matrix();
    let jr_inv = right_jacobian_inv(&r_rot);
    let mut ji = Matrix6x15::zeros();
    let mut jj = Matrix6x15::zeros();
    ji.fixed_view_mut::<3, 3>(0, si::POS).copy_from(&-cit_m);
    ji.fixed_view_mut::<3, 3>(0, si::ROT)
        .copy_from(&(cit_m * skew(&dp)));
    ji.fixed_view_mut::<3, 3>(3, si::ROT)
        .copy_from(&(-jr_inv * cjt_m));
    jj.fixed_view_mut::<3, 3>(0, si::POS).copy_from(&cit_m);
    jj.fixed_view_mut::<3, 3>(3, si::ROT)
        .copy_from(&(jr_inv * cjt_m));
    (residual, ji, jj)
}

/// Pre-integrated IMU link between consecutive states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ImuFactor<T: Real> {
    pub from: StateId,
    pub to: StateId,
    pub preint: PreintegratedImu<T>,
}

/// Residual `x_j ⊖ x̂_j` of an IMU link, its covariance, and Jacobians.
pub struct ImuEvaluation<T: Real> {
    pub residual: Vector15<T>,
    pub covariance: Matrix15<T>,
    pub jac_from: Matrix15<T>,
    pub jac_to: Matrix15<T>,
}

pub fn imu_residual<T: Real>(
    factor: &ImuFactor<T>,
    state_i: &NavState<T>,
    state_j: &NavState<T>,
    gravity: &Vector3<T>,
) -> Result<ImuEvaluation<T>> {
    let pre = correct_bias(&factor.preint, state_i.bias);
    let (pred, covariance) = predict(state_i, &pre, gravity)?;
    let err_rot = state_j.rotation.compose(&pred.rotation.inverse());
    let r_rot = log_so3(&err_rot);
    let mut residual = Vector15::zeros();
    residual
        .fixed_rows_mut::<3>(si::POS)
        .copy_from(&(state_j.position - pred.position));
    residual.fixed_rows_mut::<3>(si::ROT).copy_from(&r_rot);
    residual
        .fixed_rows_mut::<3>(si::VEL)
        .copy_from(&(state_j.velocity - pred.velocity));
    residual
        .fixed_rows_mut::<3>(si::BG)
        .copy_from(&(state_j.bias.gyro - pred.bias.gyro));
    residual
        .fixed_rows_mut::<3>(si::BA)
        .copy_from(&(state_j.bias.accel - pred.bias.accel));

    let jl_inv = left_jacobian_inv(&r_rot);
    let mut jac_to = Matrix15::identity();
    jac_to
        .fixed_view_mut::<3, 3>(si::ROT, si::ROT)
        .copy_from(&jl_inv);
    let mut d = -Matrix15::identity();
    d.fixed_view_mut::<3, 3>(si::ROT, si::ROT)
        .copy_from(&(-jl_inv * err_rot.matrix()));
    let jac_from = d * prediction_jacobian(state_i, &pre);
    Ok(ImuEvaluation {
        residual,
        covariance,
        jac_from,
        jac_to,
    })
}
