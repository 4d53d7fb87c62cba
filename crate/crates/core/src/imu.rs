//! Trapezoidal IMU pre-integration, first-order bias correction, and state
//! prediction.
//!
//! Error-state conventions:
//!
//! * Pre-integration error `[δα, δβ, δγ, δb_g, δb_a]` (see [`pre_index`]),
//!   with `α = Exp(δα) ᾱ`.
//! * Navigation state error `[δr, δα, δv, δb_g, δb_a]` (see [`state_index`]),
//!   with `r = r̄ + δr` and `C_WS = Exp(δα) C̄_WS`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, right_jacobian, skew, Pose3, Rot3};
use crate::scalar::{lit, Real};

pub type Matrix15<T> = SMatrix<T, 15, 15>;
pub type Vector15<T> = SVector<T, 15>;
pub type BiasJacobian<T> = SMatrix<T, 9, 6>;

/// Offsets into the 15-dimensional navigation-state error.
pub mod state_index {
    pub const POS: usize = 0;
    pub const ROT: usize = 3;
    pub const VEL: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
    pub const DIM: usize = 15;
}

/// Offsets into the 15-dimensional pre-integration error.
pub mod pre_index {
    pub const ALPHA: usize = 0;
    pub const BETA: usize = 3;
    pub const GAMMA: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
}

/// Bias-correction magnitudes above which the first-order update is suspect.
pub const GYRO_BIAS_WARN: f64 = 0.05;
pub const ACCEL_BIAS_WARN: f64 = 0.5;

/// Tolerance on the bias mismatch accepted by [`predict`].
pub const BIAS_MATCH_TOL: f64 = 1e-9;

/// Standard gravity in a gravity-aligned world frame with z up.
pub fn default_gravity<T: Real>() -> Vector3<T> {
    Vector3::new(T::zero(), T::zero(), lit(-9.81))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ImuSample<T: Real> {
    pub t: T,
    pub gyro: Vector3<T>,
    pub accel: Vector3<T>,
}

impl<T: Real> ImuSample<T> {
    pub fn new(t: T, gyro: Vector3<T>, accel: Vector3<T>) -> Self {
        Self { t, gyro, accel }
    }

    fn lerp(a: &Self, b: &Self, t: T) -> Self {
        let s = (t - a.t) / (b.t - a.t);
        Self {
            t,
            gyro: a.gyro + (b.gyro - a.gyro) * s,
            accel: a.accel + (b.accel - a.accel) * s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ImuBias<T: Real> {
    pub gyro: Vector3<T>,
    pub accel: Vector3<T>,
}

impl<T: Real> ImuBias<T> {
    pub fn new(gyro: Vector3<T>, accel: Vector3<T>) -> Self {
        Self { gyro, accel }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self.gyro - other.gyro)
            .amax()
            .max((self.accel - other.accel).amax())
    }
}

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ImuNoise<T: Real> {
    /// Gyro white noise, rad/s/√Hz.
    pub gyro_noise: T,
    /// Accelerometer white noise, m/s²/√Hz.
    pub accel_noise: T,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub gyro_walk: T,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub accel_walk: T,
}

impl<T: Real> Default for ImuNoise<T> {
    fn default() -> Self {
        Self {
            gyro_noise: lit(1.7e-4),
            accel_noise: lit(2.0e-3),
            gyro_walk: lit(1.9e-5),
            accel_walk: lit(3.0e-3),
        }
    }
}

/// Body pose, velocity and IMU biases at a timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct NavState<T: Real> {
    pub t: T,
    /// `p_WS`
    pub position: Vector3<T>,
    /// `C_WS`
    pub rotation: Rot3<T>,
    /// `v_W`
    pub velocity: Vector3<T>,
    pub bias: ImuBias<T>,
}

impl<T: Real> NavState<T> {
    pub fn new(t: T, pose: Pose3<T>, velocity: Vector3<T>, bias: ImuBias<T>) -> Self {
        Self {
            t,
            position: pose.translation,
            rotation: pose.rotation,
            velocity,
            bias,
        }
    }

    pub fn pose(&self) -> Pose3<T> {
        Pose3::new(self.rotation, self.position)
    }

    /// Applies an error-state increment with the `[δr, δα, δv, δb_g, δb_a]` convention.
    pub fn retract(&self, delta: &Vector15<T>) -> Self {
        use state_index::*;
        let d = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        Self {
            t: self.t,
            position: self.position + d(POS),
            rotation: exp_so3(&d(ROT)).compose(&self.rotation),
            velocity: self.velocity + d(VEL),
            bias: ImuBias::new(self.bias.gyro + d(BG), self.bias.accel + d(BA)),
        }
    }
}

/// Pre-integrated IMU terms between two timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct PreintegratedImu<T: Real> {
    pub t_start: T,
    pub t_end: T,
    /// Total integration time `Δt`.
    pub dt: T,
    /// Δ-rotation, evaluated at [`Self::bias`].
    pub alpha: Rot3<T>,
    /// Δ-velocity term, evaluated at [`Self::bias`].
    pub beta: Vector3<T>,
    /// Δ-position term, evaluated at [`Self::bias`].
    pub gamma: Vector3<T>,
    /// Bias the terms are currently evaluated at.
    pub bias: ImuBias<T>,
    /// Bias the samples were integrated with.
    pub lin_bias: ImuBias<T>,
    /// Rows `[α, β, γ]`, columns `[b_g, b_a]`. The rotation rows use the
    /// right perturbation `α(b + δb) ≈ α(b) Exp(J δb)`.
    pub bias_jacobian: BiasJacobian<T>,
    /// Covariance over `[δα, δβ, δγ, δb_g, δb_a]`.
    pub covariance: Matrix15<T>,
    lin_alpha: Rot3<T>,
    lin_beta: Vector3<T>,
    lin_gamma: Vector3<T>,
}

impl<T: Real> PreintegratedImu<T> {
    /// Zero-length interval: identity terms, zero covariance.
    pub fn empty(t: T, bias: ImuBias<T>) -> Self {
        Self {
            t_start: t,
            t_end: t,
            dt: T::zero(),
            alpha: Rot3::identity(),
            beta: Vector3::zeros(),
            gamma: Vector3::zeros(),
            bias,
            lin_bias: bias,
            bias_jacobian: BiasJacobian::zeros(),
            covariance: Matrix15::zeros(),
            lin_alpha: Rot3::identity(),
            lin_beta: Vector3::zeros(),
            lin_gamma: Vector3::zeros(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dt == T::zero()
    }

    /// `∂α/∂b_g` in the right-perturbation convention.
    pub fn d_alpha_d_bg(&self) -> Matrix3<T> {
        self.bias_jacobian.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn d_beta_d_bg(&self) -> Matrix3<T> {
        self.bias_jacobian.fixed_view::<3, 3>(3, 0).into_owned()
    }

    pub fn d_beta_d_ba(&self) -> Matrix3<T> {
        self.bias_jacobian.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn d_gamma_d_bg(&self) -> Matrix3<T> {
        self.bias_jacobian.fixed_view::<3, 3>(6, 0).into_owned()
    }

    pub fn d_gamma_d_ba(&self) -> Matrix3<T> {
        self.bias_jacobian.fixed_view::<3, 3>(6, 3).into_owned()
    }

    /// Rotation-vector correction currently applied to the linearisation-point `α`.
    fn alpha_correction(&self) -> Vector3<T> {
        self.d_alpha_d_bg() * (self.bias.gyro - self.lin_bias.gyro)
    }
}

/// Integrates consecutive IMU samples with the trapezoidal scheme.
pub fn preintegrate<T: Real>(
    samples: &[ImuSample<T>],
    bias: ImuBias<T>,
    noise: &ImuNoise<T>,
) -> Result<PreintegratedImu<T>> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    if let Some(k) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(Error::NonMonotoneTimestamps(k + 1));
    }

    let n = samples.len();
    let t_start = samples[0].t;
    let t_end = samples[n - 1].t;
    let total = t_end - t_start;
    let half = lit::<T>(0.5);
    let quarter = lit::<T>(0.25);

    // Per-sample discrete noise variances at the mean sampling interval.
    let h = total / lit((n - 1) as f64);
    let sample_noise = SMatrix::<T, 6, 6>::from_diagonal(&SVector::<T, 6>::from([
        noise.gyro_noise * noise.gyro_noise / h,
        noise.gyro_noise * noise.gyro_noise / h,
        noise.gyro_noise * noise.gyro_noise / h,
        noise.accel_noise * noise.accel_noise / h,
        noise.accel_noise * noise.accel_noise / h,
        noise.accel_noise * noise.accel_noise / h,
    ]));

    let mut alpha = Matrix3::<T>::identity();
    let mut alpha_rot = Rot3::<T>::identity();
    let mut beta = Vector3::<T>::zeros();
    let mut gamma = Vector3::<T>::zeros();
    // Bias Jacobians with the left-perturbation convention for α.
    let mut jac = BiasJacobian::<T>::zeros();
    let mut cov = Matrix15::<T>::zeros();
    // Cross-covariance between the error state and the noise of the sample
    // shared with the next step.
    let mut cross = SMatrix::<T, 15, 6>::zeros();

    for k in 0..n - 1 {
        let (s0, s1) = (&samples[k], &samples[k + 1]);
        let dt = s1.t - s0.t;
        let omega = (s0.gyro + s1.gyro) * half - bias.gyro;
        let acc = (s0.accel + s1.accel) * half - bias.accel;

        let step = omega * dt;
        let next_rot = alpha_rot.compose(&exp_so3(&step));
        let r0 = alpha;
        let r1 = next_rot.matrix();
        let r_sum = r0 + r1;
        let a0 = skew(&(r0 * acc));
        let a1 = skew(&(r1 * acc));
        let a_sum = a0 + a1;

        // Linearised step: δα' = δα + M_g e_g, etc.
        let m_g = r1 * right_jacobian(&step) * dt;
        let dbeta_dalpha = -a_sum * (half * dt);
        let dbeta_deg = -a1 * m_g * (half * dt);
        let dbeta_dea = r_sum * (half * dt);
        let dgamma_dalpha = -a_sum * (quarter * dt * dt);
        let dgamma_deg = -a1 * m_g * (quarter * dt * dt);
        let dgamma_dea = r_sum * (quarter * dt * dt);

        // Bias Jacobians (e_g = -δb_g, e_a = -δb_a).
        let ja = jac.fixed_view::<3, 6>(0, 0).into_owned();
        let jb = jac.fixed_view::<3, 6>(3, 0).into_owned();
        let jg = jac.fixed_view::<3, 6>(6, 0).into_owned();
        let mut eg = SMatrix::<T, 3, 6>::zeros();
        eg.fixed_view_mut::<3, 3>(0, 0).copy_from(&-Matrix3::identity());
        let mut ea = SMatrix::<T, 3, 6>::zeros();
        ea.fixed_view_mut::<3, 3>(0, 3).copy_from(&-Matrix3::identity());
        let ja_next = ja + m_g * eg;
        let jb_next = jb + dbeta_dalpha * ja + dbeta_deg * eg + dbeta_dea * ea;
        let jg_next = jg + jb * dt + dgamma_dalpha * ja + dgamma_deg * eg + dgamma_dea * ea;
        jac.fixed_view_mut::<3, 6>(0, 0).copy_from(&ja_next);
        jac.fixed_view_mut::<3, 6>(3, 0).copy_from(&jb_next);
        jac.fixed_view_mut::<3, 6>(6, 0).copy_from(&jg_next);

        // Covariance: x' = Φ x + B (n_k + n_{k+1}) + G w.
        let mut phi = Matrix15::<T>::identity();
        phi.fixed_view_mut::<3, 3>(0, 9).copy_from(&m_g);
        phi.fixed_view_mut::<3, 3>(3, 0).copy_from(&dbeta_dalpha);
        phi.fixed_view_mut::<3, 3>(3, 9).copy_from(&dbeta_deg);
        phi.fixed_view_mut::<3, 3>(3, 12).copy_from(&dbeta_dea);
        phi.fixed_view_mut::<3, 3>(6, 0).copy_from(&dgamma_dalpha);
        phi.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
        phi.fixed_view_mut::<3, 3>(6, 9).copy_from(&dgamma_deg);
        phi.fixed_view_mut::<3, 3>(6, 12).copy_from(&dgamma_dea);

        let mut b = SMatrix::<T, 15, 6>::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(m_g * half));
        b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(dbeta_deg * half));
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(dbeta_dea * half));
        b.fixed_view_mut::<3, 3>(6, 0).copy_from(&(dgamma_deg * half));
        b.fixed_view_mut::<3, 3>(6, 3).copy_from(&(dgamma_dea * half));
        let mut g = b;
        g.fixed_view_mut::<6, 6>(9, 0).copy_from(&SMatrix::<T, 6, 6>::identity());
        let walk = SMatrix::<T, 6, 6>::from_diagonal(&SVector::<T, 6>::from([
            noise.gyro_walk * noise.gyro_walk * dt,
            noise.gyro_walk * noise.gyro_walk * dt,
            noise.gyro_walk * noise.gyro_walk * dt,
            noise.accel_walk * noise.accel_walk * dt,
            noise.accel_walk * noise.accel_walk * dt,
            noise.accel_walk * noise.accel_walk * dt,
        ]));
        let shared = phi * cross * b.transpose();
        let bnb = b * sample_noise * b.transpose();
        cov = phi * cov * phi.transpose()
            + shared
            + shared.transpose()
            + bnb
            + bnb
            + g * walk * g.transpose();
        cov = (cov + cov.transpose()) * half;
        cross = b * sample_noise;

        // Nominal recursion.
        gamma += beta * dt + r_sum * acc * (quarter * dt * dt);
        beta += r_sum * acc * (half * dt);
        alpha_rot = next_rot;
        alpha = r1;
    }

    // Switch the α rows to the right-perturbation convention.
    let mut bias_jacobian = jac;
    let rt = alpha.transpose();
    let left = jac.fixed_view::<3, 6>(0, 0).into_owned();
    bias_jacobian
        .fixed_view_mut::<3, 6>(0, 0)
        .copy_from(&(rt * left));

    Ok(PreintegratedImu {
        t_start,
        t_end,
        dt: total,
        alpha: alpha_rot,
        beta,
        gamma,
        bias,
        lin_bias: bias,
        bias_jacobian,
        covariance: cov,
        lin_alpha: alpha_rot,
        lin_beta: beta,
        lin_gamma: gamma,
    })
}

/// First-order update of the pre-integration terms to a new bias estimate.
///
/// The correction is always taken from the original linearisation point.
pub fn correct_bias<T: Real>(pre: &PreintegratedImu<T>, new_bias: ImuBias<T>) -> PreintegratedImu<T> {
    let dbg = new_bias.gyro - pre.lin_bias.gyro;
    let dba = new_bias.accel - pre.lin_bias.accel;
    let mut out = pre.clone();
    out.bias = new_bias;
    if dbg == Vector3::zeros() && dba == Vector3::zeros() {
        out.alpha = pre.lin_alpha;
        out.beta = pre.lin_beta;
        out.gamma = pre.lin_gamma;
        return out;
    }
    if dbg.amax() > lit(GYRO_BIAS_WARN) || dba.amax() > lit(ACCEL_BIAS_WARN) {
        log::warn!(
            "large bias correction on pre-integration (gyro {:?}, accel {:?})",
            crate::scalar::to_f64(dbg.amax()),
            crate::scalar::to_f64(dba.amax())
        );
    }
    out.alpha = pre.lin_alpha.compose(&exp_so3(&(pre.d_alpha_d_bg() * dbg)));
    out.beta = pre.lin_beta + pre.d_beta_d_bg() * dbg + pre.d_beta_d_ba() * dba;
    out.gamma = pre.lin_gamma + pre.d_gamma_d_bg() * dbg + pre.d_gamma_d_ba() * dba;
    out
}

fn check_bias<T: Real>(state: &NavState<T>, pre: &PreintegratedImu<T>) -> Result<()> {
    let mismatch = state.bias.max_abs_diff(&pre.bias);
    if mismatch > lit(BIAS_MATCH_TOL) {
        return Err(Error::BiasMismatch(crate::scalar::to_f64(mismatch)));
    }
    Ok(())
}

/// Propagates `state_i` through the pre-integrated interval.
///
/// Returns the predicted state and its covariance conditioned on `state_i`,
/// ordered as the navigation-state error.
pub fn predict<T: Real>(
    state_i: &NavState<T>,
    pre: &PreintegratedImu<T>,
    gravity: &Vector3<T>,
) -> Result<(NavState<T>, Matrix15<T>)> {
    check_bias(state_i, pre)?;
    let c = state_i.rotation;
    let dt = pre.dt;
    let predicted = NavState {
        t: pre.t_end,
        position: state_i.position
            + state_i.velocity * dt
            + gravity * (lit::<T>(0.5) * dt * dt)
            + c.rotate(&pre.gamma),
        rotation: c.compose(&pre.alpha),
        velocity: state_i.velocity + c.rotate(&pre.beta) + gravity * dt,
        bias: state_i.bias,
    };

    use state_index as s;
    let cm = c.matrix();
    let mut map = Matrix15::<T>::zeros();
    map.fixed_view_mut::<3, 3>(s::POS, pre_index::GAMMA).copy_from(&cm);
    map.fixed_view_mut::<3, 3>(s::ROT, pre_index::ALPHA).copy_from(&cm);
    map.fixed_view_mut::<3, 3>(s::VEL, pre_index::BETA).copy_from(&cm);
    map.fixed_view_mut::<6, 6>(s::BG, pre_index::BG)
        .copy_from(&SMatrix::<T, 6, 6>::identity());
    let cov = map * pre.covariance * map.transpose();
    Ok((predicted, cov))
}

/// Jacobian of the predicted state error at `j` with respect to the error of
/// `state_i` (both in navigation-state ordering).
pub fn prediction_jacobian<T: Real>(state_i: &NavState<T>, pre: &PreintegratedImu<T>) -> Matrix15<T> {
    use state_index as s;
    let c = state_i.rotation.matrix();
    let cj = state_i.rotation.compose(&pre.alpha).matrix();
    let mut f = Matrix15::<T>::identity();
    f.fixed_view_mut::<3, 3>(s::POS, s::ROT)
        .copy_from(&-skew(&(c * pre.gamma)));
    f.fixed_view_mut::<3, 3>(s::POS, s::VEL)
        .copy_from(&(Matrix3::identity() * pre.dt));
    f.fixed_view_mut::<3, 3>(s::POS, s::BG)
        .copy_from(&(c * pre.d_gamma_d_bg()));
    f.fixed_view_mut::<3, 3>(s::POS, s::BA)
        .copy_from(&(c * pre.d_gamma_d_ba()));
    f.fixed_view_mut::<3, 3>(s::ROT, s::BG)
        .copy_from(&(cj * right_jacobian(&pre.alpha_correction()) * pre.d_alpha_d_bg()));
    f.fixed_view_mut::<3, 3>(s::VEL, s::ROT)
        .copy_from(&-skew(&(c * pre.beta)));
    f.fixed_view_mut::<3, 3>(s::VEL, s::BG)
        .copy_from(&(c * pre.d_beta_d_bg()));
    f.fixed_view_mut::<3, 3>(s::VEL, s::BA)
        .copy_from(&(c * pre.d_beta_d_ba()));
    f
}

/// Time-ordered IMU samples with interval extraction.
#[derive(Clone, Debug, Default)]
pub struct ImuBuffer<T: Real> {
    samples: Vec<ImuSample<T>>,
}

impl<T: Real> ImuBuffer<T> {
    pub fn new(samples: Vec<ImuSample<T>>) -> Result<Self> {
        if let Some(k) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(Error::NonMonotoneTimestamps(k + 1));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ImuSample<T>] {
        &self.samples
    }

    pub fn push(&mut self, sample: ImuSample<T>) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if sample.t <= last.t {
                return Err(Error::NonMonotoneTimestamps(self.samples.len()));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Samples covering `[t0, t1]`, with the boundary samples linearly
    /// interpolated when the interval ends fall between measurements.
    pub fn interval(&self, t0: T, t1: T) -> Result<Vec<ImuSample<T>>> {
        let (first, last) = match (self.samples.first(), self.samples.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::ImuCoverage),
        };
        if t1 < t0 || t0 < first.t || t1 > last.t {
            return Err(Error::ImuCoverage);
        }
        let at = |t: T| -> ImuSample<T> {
            let k = self.samples.partition_point(|s| s.t < t);
            let s = &self.samples[k];
            if s.t == t || k == 0 {
                *s
            } else {
                ImuSample::lerp(&self.samples[k - 1], s, t)
            }
        };
        let mut out = vec![at(t0)];
        let lo = self.samples.partition_point(|s| s.t <= t0);
        let hi = self.samples.partition_point(|s| s.t < t1);
        out.extend_from_slice(&self.samples[lo..hi]);
        if t1 > t0 {
            out.push(at(t1));
        }
        Ok(out)
    }

    /// Pre-integrates `[t0, t1]`; a zero-length interval yields an empty term.
    pub fn preintegrate(
        &self,
        t0: T,
        t1: T,
        bias: ImuBias<T>,
        noise: &ImuNoise<T>,
    ) -> Result<PreintegratedImu<T>> {
        if t1 == t0 {
            return Ok(PreintegratedImu::empty(t0, bias));
        }
        preintegrate(&self.interval(t0, t1)?, bias, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::log_so3;

    fn constant_samples(n: usize, rate: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Vec<ImuSample<f64>> {
        (0..n)
            .map(|k| ImuSample::new(k as f64 / rate, gyro, accel))
            .collect()
    }

    #[test]
    fn zero_inputs_give_identity_terms() {
        let s = constant_samples(11, 10.0, Vector3::zeros(), Vector3::zeros());
        let pre = preintegrate(&s, ImuBias::zero(), &ImuNoise::default()).unwrap();
        assert_eq!(pre.alpha, Rot3::identity());
        assert_eq!(pre.beta, Vector3::zeros());
        assert_eq!(pre.gamma, Vector3::zeros());
        assert!((pre.dt - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_rate_rotation() {
        let s = constant_samples(401, 200.0, Vector3::new(0.0, 0.0, 0.5), Vector3::zeros());
        let pre = preintegrate(&s, ImuBias::zero(), &ImuNoise::default()).unwrap();
        assert!((pre.dt - 2.0).abs() < 1e-12);
        assert!(pre.alpha.angle_to(&exp_so3(&Vector3::new(0.0, 0.0, 1.0))) < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let one = constant_samples(1, 10.0, Vector3::zeros(), Vector3::zeros());
        assert!(matches!(
            preintegrate(&one, ImuBias::zero(), &ImuNoise::default()),
            Err(Error::TooFewSamples(1))
        ));
        let mut s = constant_samples(4, 10.0, Vector3::zeros(), Vector3::zeros());
        s[2].t = s[1].t;
        assert!(matches!(
            preintegrate(&s, ImuBias::zero(), &ImuNoise::default()),
            Err(Error::NonMonotoneTimestamps(2))
        ));
    }

    #[test]
    fn correct_bias_is_exact_noop_at_linearisation_point() {
        let s = constant_samples(21, 100.0, Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.5, 0.1, 9.8));
        let bias = ImuBias::new(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 0.02, 0.0));
        let pre = preintegrate(&s, bias, &ImuNoise::default()).unwrap();
        assert_eq!(correct_bias(&pre, bias), pre);
    }

    #[test]
    fn free_fall_prediction() {
        let pre = PreintegratedImu {
            dt: 1.0,
            t_end: 1.0,
            ..PreintegratedImu::empty(0.0, ImuBias::zero())
        };
        let state = NavState::new(0.0, Pose3::new(Rot3::identity(), Vector3::new(1.0, 2.0, 3.0)), Vector3::zeros(), ImuBias::zero());
        let (next, _) = predict(&state, &pre, &default_gravity()).unwrap();
        assert!((next.position - Vector3::new(1.0, 2.0, 3.0 - 0.5 * 9.81)).norm() < 1e-12);
        assert!((next.velocity - Vector3::new(0.0, 0.0, -9.81)).norm() < 1e-12);
    }

    #[test]
    fn stationary_body_stays_put() {
        let rot = exp_so3(&Vector3::new(0.1, -0.2, 0.7));
        let g = default_gravity::<f64>();
        let accel = rot.inverse().rotate(&-g);
        let s = constant_samples(201, 200.0, Vector3::zeros(), accel);
        let pre = preintegrate(&s, ImuBias::zero(), &ImuNoise::default()).unwrap();
        let state = NavState::new(0.0, Pose3::new(rot, Vector3::new(4.0, -1.0, 2.0)), Vector3::zeros(), ImuBias::zero());
        let (next, _) = predict(&state, &pre, &g).unwrap();
        assert!((next.position - state.position).norm() < 1e-9);
        assert!(next.velocity.norm() < 1e-9);
        assert!(next.rotation.angle_to(&rot) < 1e-9);
    }

    #[test]
    fn predict_rejects_bias_mismatch() {
        let s = constant_samples(3, 10.0, Vector3::zeros(), Vector3::zeros());
        let pre = preintegrate(&s, ImuBias::zero(), &ImuNoise::default()).unwrap();
        let mut state = NavState::new(0.0, Pose3::identity(), Vector3::zeros(), ImuBias::zero());
        state.bias.gyro.x = 1e-3;
        assert!(matches!(predict(&state, &pre, &default_gravity()), Err(Error::BiasMismatch(_))));
        let fixed = correct_bias(&pre, state.bias);
        assert!(predict(&state, &fixed, &default_gravity()).is_ok());
    }

    #[test]
    fn covariance_symmetric_psd_and_growing() {
        let s = constant_samples(201, 200.0, Vector3::new(0.2, 0.1, -0.3), Vector3::new(0.3, -0.4, 9.7));
        let noise = ImuNoise::default();
        let mut last = 0.0;
        for end in [21, 51, 101, 201] {
            let pre = preintegrate(&s[..end], ImuBias::zero(), &noise).unwrap();
            let c = pre.covariance;
            assert!((c - c.transpose()).amax() < 1e-18);
            let eig = c.symmetric_eigenvalues();
            assert!(eig.min() > -1e-18, "{}", eig.min());
            assert!(c.trace() > last);
            last = c.trace();
        }
    }

    #[test]
    fn buffer_interval_interpolates_boundaries() {
        let s: Vec<_> = (0..11)
            .map(|k| ImuSample::new(k as f64 * 0.1, Vector3::new(k as f64, 0.0, 0.0), Vector3::zeros()))
            .collect();
        let buf = ImuBuffer::new(s).unwrap();
        let iv = buf.interval(0.25, 0.5).unwrap();
        assert!((iv[0].t - 0.25).abs() < 1e-15);
        assert!((iv[0].gyro.x - 2.5).abs() < 1e-12);
        assert!((iv.last().unwrap().t - 0.5).abs() < 1e-15);
        assert_eq!(iv.len(), 4);
        assert!(buf.interval(0.5, 1.2).is_err());
        assert!(buf.preintegrate(0.3, 0.3, ImuBias::zero(), &ImuNoise::default()).unwrap().is_empty());
    }

    #[test]
    fn single_precision_preintegration() {
        let s: Vec<ImuSample<f32>> = (0..101)
            .map(|k| ImuSample::new(k as f32 * 0.01, Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()))
            .collect();
        let pre = preintegrate(&s, ImuBias::zero(), &ImuNoise::default()).unwrap();
        assert!((log_so3(&pre.alpha) - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-5);
    }
}
