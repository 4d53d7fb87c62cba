//! Rotation and rigid-transform algebra.
//!
//! Rotations use the Hamilton quaternion convention. A rotation `C_AB` maps
//! coordinates of a vector expressed in frame `B` into frame `A`, so that a
//! point transforms as `p_A = T_AB * p_B`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

/// Below this rotation angle the exponential and logarithm use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Exponential map of SO(3) from a rotation vector.
pub fn exp_so3<T: Real>(phi: &Vector3<T>) -> Rot3<T> {
    let [w, x, y, z] = if phi.norm() < lit(SMALL_ANGLE) {
        exp_taylor(phi)
    } else {
        exp_closed(phi)
    };
    Rot3::from_wxyz(w, x, y, z)
}

fn exp_taylor<T: Real>(phi: &Vector3<T>) -> [T; 4] {
    let theta2 = phi.norm_squared();
    let v = phi * (lit::<T>(0.5) - theta2 / lit(48.0));
    [T::one() - theta2 / lit(8.0), v.x, v.y, v.z]
}

fn exp_closed<T: Real>(phi: &Vector3<T>) -> [T; 4] {
    let theta = phi.norm();
    let (s, c) = (theta * lit(0.5)).sin_cos();
    let v = phi * (s / theta);
    [c, v.x, v.y, v.z]
}

/// Principal logarithm of SO(3); the result has norm at most `pi`.
///
/// At exactly `pi` the axis sign is chosen so that the first non-zero
/// component among (z, y, x) is positive.
pub fn log_so3<T: Real>(r: &Rot3<T>) -> Vector3<T> {
    let q = r.q.quaternion();
    let (mut w, mut v) = (q.w, q.imag());
    if w < T::zero() {
        w = -w;
        v = -v;
    }
    if w <= T::default_epsilon() {
        let flip = if v.z != T::zero() {
            v.z < T::zero()
        } else if v.y != T::zero() {
            v.y < T::zero()
        } else {
            v.x < T::zero()
        };
        if flip {
            v = -v;
        }
    }
    let n2 = v.norm_squared();
    let n = n2.sqrt();
    if n < lit(SMALL_ANGLE) {
        let two = lit::<T>(2.0);
        v * (two / w * (T::one() - n2 / (lit::<T>(3.0) * w * w)))
    } else {
        let theta = lit::<T>(2.0) * n.atan2(w);
        v * (theta / n)
    }
}

/// Rotation about the gravity-aligned up axis (z of an ENU frame).
pub fn yaw_rotation<T: Real>(theta: T) -> Rot3<T> {
    let (s, c) = (theta * lit(0.5)).sin_cos();
    Rot3::from_wxyz(c, T::zero(), T::zero(), s)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let k2 = k * k;
    if theta2.sqrt() < lit(1e-5) {
        return Matrix3::<T>::identity() - k * lit::<T>(0.5) + k2 * lit::<T>(1.0 / 6.0);
    }
    let theta = theta2.sqrt();
    let a = (T::one() - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() - k * a + k2 * b
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let k2 = k * k;
    if theta2.sqrt() < lit(1e-5) {
        return Matrix3::<T>::identity() + k * lit::<T>(0.5) + k2 * lit::<T>(1.0 / 12.0);
    }
    let theta = theta2.sqrt();
    let c = T::one() / theta2 - (T::one() + theta.cos()) / (lit::<T>(2.0) * theta * theta.sin());
    Matrix3::<T>::identity() + k * lit::<T>(0.5) + k2 * c
}

/// Inverse of the left Jacobian of SO(3).
pub fn left_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    right_jacobian_inv(&-phi)
}

/// Unit quaternion rotation, renormalised after every composition.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Rot3<T: Real> {
    q: UnitQuaternion<T>,
}

impl<T: Real> Rot3<T> {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds a rotation from quaternion coefficients, normalising them.
    pub fn from_wxyz(w: T, x: T, y: T, z: T) -> Self {
        Self {
            q: UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)),
        }
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<T>) -> Self {
        Self { q }
    }

    /// Builds a rotation from an orthonormal matrix.
    pub fn from_rotation_matrix(m: &Matrix3<T>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Self {
            q: UnitQuaternion::from_rotation_matrix(&rot),
        }
    }

    pub fn exp(phi: &Vector3<T>) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Vector3<T> {
        log_so3(self)
    }

    /// Quaternion coefficients `(w, x, y, z)`.
    pub fn wxyz(&self) -> [T; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<T> {
        &self.q
    }

    pub fn matrix(&self) -> Matrix3<T> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self {
            q: self.q.inverse(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            q: UnitQuaternion::new_normalize(self.q.into_inner() * other.q.into_inner()),
        }
    }

    pub fn rotate(&self, v: &Vector3<T>) -> Vector3<T> {
        self.q.transform_vector(v)
    }

    /// Heading angle of the rotated x axis about the up axis.
    pub fn yaw(&self) -> T {
        let x = self.rotate(&Vector3::x());
        x.y.atan2(x.x)
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Self) -> T {
        log_so3(&self.inverse().compose(other)).norm()
    }

    pub fn cast<U: Real>(&self) -> Rot3<U> {
        let [w, x, y, z] = self.wxyz();
        Rot3::from_wxyz(
            lit(crate::scalar::to_f64(w)),
            lit(crate::scalar::to_f64(x)),
            lit(crate::scalar::to_f64(y)),
            lit(crate::scalar::to_f64(z)),
        )
    }
}

impl<T: Real> Default for Rot3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> fmt::Debug for Rot3<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rot3(w={w:?}, x={x:?}, y={y:?}, z={z:?})")
    }
}

impl<T: Real> Mul for Rot3<T> {
    type Output = Rot3<T>;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl<T: Real> Mul<Vector3<T>> for Rot3<T> {
    type Output = Vector3<T>;
    fn mul(self, rhs: Vector3<T>) -> Vector3<T> {
        self.rotate(&rhs)
    }
}

/// Rigid body transform `T_AB`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct Pose3<T: Real> {
    pub rotation: Rot3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose3<T> {
    pub fn new(rotation: Rot3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rot3::identity(), Vector3::zeros())
    }

    /// Four degree-of-freedom transform: yaw about the up axis plus translation.
    pub fn from_yaw_translation(yaw: T, translation: Vector3<T>) -> Self {
        Self::new(yaw_rotation(yaw), translation)
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.rotate(p) + self.translation
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }
}

impl<T: Real> Default for Pose3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Mul for Pose3<T> {
    type Output = Pose3<T>;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn exp_identity_and_quarter_turn() {
        let r = exp_so3(&v(0.0, 0.0, 0.0));
        assert_eq!(r.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        let r = exp_so3(&v(0.0, 0.0, PI / 2.0));
        assert!((r.rotate(&v(1.0, 0.0, 0.0)) - v(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn log_identity_small_and_pi() {
        assert_eq!(log_so3(&Rot3::<f64>::identity()), v(0.0, 0.0, 0.0));
        assert!((log_so3(&exp_so3(&v(0.3, 0.0, 0.0))) - v(0.3, 0.0, 0.0)).norm() < 1e-9);
        let half_turn = exp_so3(&v(0.0, 0.0, PI));
        assert!((log_so3(&half_turn) - v(0.0, 0.0, PI)).norm() < 1e-9);
        let neg = exp_so3(&v(0.0, 0.0, -PI));
        assert!((log_so3(&neg) - v(0.0, 0.0, PI)).norm() < 1e-9);
        let about_y = Rot3::from_wxyz(0.0, 0.0, -1.0, 0.0);
        assert!((log_so3(&about_y) - v(0.0, PI, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn skew_matches_cross() {
        assert_eq!(skew(&v(0.0, 0.0, 0.0)), Matrix3::zeros());
        assert_eq!(skew(&v(1.0, 0.0, 0.0)) * v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0));
    }

    #[test]
    fn yaw_rotation_cases() {
        assert_eq!(yaw_rotation(0.0f64).wxyz(), [1.0, 0.0, 0.0, 0.0]);
        let r = yaw_rotation(PI);
        assert!((r.rotate(&v(1.0, 0.0, 0.0)) - v(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((log_so3(&yaw_rotation(0.7)) - v(0.0, 0.0, 0.7)).norm() < 1e-12);
        assert!((yaw_rotation(0.7).yaw() - 0.7f64).abs() < 1e-12);
    }

    #[test]
    fn exp_continuous_across_taylor_boundary() {
        let axis = v(0.3, -0.5, 0.8).normalize();
        assert_eq!(exp_taylor(&v(0.0, 0.0, 0.0)), [1.0, 0.0, 0.0, 0.0]);
        for &angle in &[1e-10, 1e-7, 1e-4] {
            let phi = axis * angle;
            let (a, b) = (exp_taylor(&phi), exp_closed(&phi));
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12, "angle {angle}");
            }
        }
    }

    #[test]
    fn jacobian_inverses() {
        for phi in [v(0.1, -0.2, 0.3), v(1e-7, 0.0, 2e-7), v(1.2, 0.4, -2.0)] {
            let p = right_jacobian(&phi) * right_jacobian_inv(&phi);
            assert!((p - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn right_jacobian_first_order() {
        let phi = v(0.4, -0.3, 0.9);
        let d = v(1e-6, -2e-6, 0.5e-6);
        let lhs = exp_so3(&(phi + d));
        let rhs = exp_so3(&phi).compose(&exp_so3(&(right_jacobian(&phi) * d)));
        assert!(lhs.angle_to(&rhs) < 1e-11);
    }

    #[test]
    fn single_precision_round_trip() {
        let phi = Vector3::new(0.3f32, -0.2, 0.5);
        assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-5);
    }

    fn arb_vec(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| v(x, y, z))
    }

    proptest! {
        #[test]
        fn log_exp_round_trip(phi in arb_vec(2.0)) {
            prop_assume!(phi.norm() <= PI - 1e-6);
            prop_assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-9);
        }

        #[test]
        fn compose_inverse_is_identity(phi in arb_vec(3.0)) {
            let r = exp_so3(&phi);
            let id = r.compose(&r.inverse());
            prop_assert!(log_so3(&id).norm() < 1e-9);
            let [w, x, y, z] = id.wxyz();
            prop_assert!(((w * w + x * x + y * y + z * z).sqrt() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn skew_is_cross_product(a in arb_vec(10.0), b in arb_vec(10.0)) {
            prop_assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-14 * (1.0 + a.norm() * b.norm()));
        }

        #[test]
        fn pose_group_laws(a in arb_vec(3.0), b in arb_vec(3.0), c in arb_vec(3.0),
                           ta in arb_vec(10.0), tb in arb_vec(10.0), tc in arb_vec(10.0)) {
            let pa = Pose3::new(exp_so3(&a), ta);
            let pb = Pose3::new(exp_so3(&b), tb);
            let pc = Pose3::new(exp_so3(&c), tc);
            let id = pa.compose(&pa.inverse());
            prop_assert!(log_so3(&id.rotation).norm() < 1e-9);
            prop_assert!(id.translation.norm() < 1e-9);
            let l = pa.compose(&pb).compose(&pc);
            let r = pa.compose(&pb.compose(&pc));
            prop_assert!(l.rotation.angle_to(&r.rotation) < 1e-9);
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
            let n = pa.compose(&Pose3::identity());
            prop_assert!((n.translation - pa.translation).norm() < 1e-12);
        }
    }
}
