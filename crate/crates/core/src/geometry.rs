//! Rigid-body transforms on SE(3).
//!
//! A [`Pose`] is a rotation plus a translation. Rotations are kept as unit
//! quaternions so that serialization to `(w, x, y, z)` is lossless; every
//! operation is exact group algebra, and the exponential and logarithm use
//! the coupled SE(3) maps (the translational part passes through the
//! left Jacobian `V`). A decoupled `SO(3) x R^3` pair is available through
//! [`LieMap::Decoupled`] for comparison studies.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Below this rotation angle the exp/log coefficient functions switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Distance from `pi` at which the logarithm is refused.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is within {NEAR_PI_MARGIN} of pi; logarithm is ambiguous")]
    RotationNearPi { angle: f64 },
    #[error("matrix is not a proper rotation (det = {det})")]
    NotARotation { det: f64 },
}

/// Which exponential/logarithm pair to use for tangent-space updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LieMap {
    /// Full SE(3) maps with rotation/translation coupling.
    #[default]
    Coupled,
    /// Independent rotation-vector and translation maps.
    Decoupled,
}

/// Element of SE(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Tangent vector of SE(3): translational part `v` first, rotational `w` second.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion_wxyz();
        let t = self.translation;
        write!(
            f,
            "Pose(t: [{:.6}, {:.6}, {:.6}], q: [{:.6}, {:.6}, {:.6}, {:.6}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a quaternion, renormalizing it.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    /// Builds a pose from a 3x3 matrix, projecting it onto the closest rotation.
    ///
    /// Fails when the matrix has a non-positive determinant.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let det = rotation.determinant();
        if !(det > 0.0) {
            return Err(GeometryError::NotARotation { det });
        }
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let r = u * vt;
        let rot = Rotation3::from_matrix_unchecked(r);
        Ok(Pose {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation,
        })
    }

    /// Builds a pose from `(w, x, y, z)` quaternion components.
    ///
    /// Components already of unit norm (within 1e-12) are kept bit-for-bit so
    /// that file round trips are exact; anything further off is renormalized.
    pub fn from_quaternion_wxyz(q: [f64; 4], translation: Vector3<f64>) -> Self {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let rotation = if (raw.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(raw)
        } else {
            UnitQuaternion::new_normalize(raw)
        };
        Pose { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Pose {
            rotation: UnitQuaternion::from_axis_angle(&axis, angle),
            translation,
        }
    }

    /// Rotation about z by `angle`, placed at `translation`.
    pub fn rot_z(angle: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle, translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        // `+ 0.0` folds negative zeros
        [s * q.w + 0.0, s * q.i + 0.0, s * q.j + 0.0, s * q.k + 0.0]
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Translation distance and rotation angle to another pose.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let d = (self.translation - other.translation).norm();
        let rel = self.rotation.inverse() * other.rotation;
        let q = rel.quaternion();
        (d, 2.0 * q.imag().norm().atan2(q.w.abs()))
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        compose(self, rhs)
    }
}

impl Twist {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Twist { v, w }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            v: Vector3::new(a[0], a[1], a[2]),
            w: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z]
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist::from_array([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn scale(&self, l: f64) -> Twist {
        scale_twist(self, l)
    }

    /// Elementwise product with a 6-vector of gains.
    pub fn component_mul(&self, gains: &[f64; 6]) -> Twist {
        let a = self.to_array();
        Twist::from_array(std::array::from_fn(|i| a[i] * gains[i]))
    }

    pub fn norm_inf(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Matrix form `[w^ v; 0 0]` in se(3).
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.w));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.v + rhs.v, self.w + rhs.w)
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.v - rhs.v, self.w - rhs.w)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.v, -self.w)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, l: f64) -> Twist {
        scale_twist(&self, l)
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: UnitQuaternion::new_normalize(a.rotation.into_inner() * b.rotation.into_inner()),
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let r_inv = p.rotation.inverse();
    Pose {
        rotation: r_inv,
        translation: -(r_inv * p.translation),
    }
}

pub fn scale_twist(x: &Twist, l: f64) -> Twist {
    Twist::new(x.v * l, x.w * l)
}

/// Coefficients of the SO(3)/SE(3) series in the rotation angle:
/// `a = sin t / t`, `b = (1 - cos t) / t^2`, `c = (t - sin t) / t^3`.
fn coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        let half = 0.5 * theta;
        let s = half.sin();
        (theta.sin() / theta, 2.0 * s * s / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

/// Rotation vector of a unit quaternion, angle in `[0, pi]`.
fn quaternion_log(q: &UnitQuaternion<f64>) -> (Vector3<f64>, f64) {
    let q = q.quaternion();
    let (w, u) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = u.norm();
    let theta = 2.0 * s.atan2(w);
    // theta / s, with the series 2/w (1 - s^2 / (3 w^2)) near zero
    let factor = if s < SMALL_ANGLE {
        2.0 / w * (1.0 - s * s / (3.0 * w * w))
    } else {
        theta / s
    };
    (u * factor, theta)
}

fn quaternion_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = w.norm();
    let half = 0.5 * theta;
    let k = if theta < SMALL_ANGLE {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    let imag = w * k;
    UnitQuaternion::new_normalize(Quaternion::new(half.cos(), imag.x, imag.y, imag.z))
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (_, b, c) = coefficients(theta);
    let k = skew(w);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of [`left_jacobian`].
pub fn left_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    // d = (1 - a / (2 b)) / t^2
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (a, b, _) = coefficients(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * d
}

pub fn pose_exp(x: &Twist) -> Pose {
    Pose {
        rotation: quaternion_exp(&x.w),
        translation: left_jacobian(&x.w) * x.v,
    }
}

/// SE(3) logarithm on the principal branch.
pub fn pose_log(p: &Pose) -> Result<Twist, GeometryError> {
    let (w, theta) = quaternion_log(&p.rotation);
    if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(GeometryError::RotationNearPi { angle: theta });
    }
    Ok(Twist::new(left_jacobian_inverse(&w) * p.translation, w))
}

pub fn pose_exp_with(x: &Twist, map: LieMap) -> Pose {
    match map {
        LieMap::Coupled => pose_exp(x),
        LieMap::Decoupled => Pose {
            rotation: quaternion_exp(&x.w),
            translation: x.v,
        },
    }
}

pub fn pose_log_with(p: &Pose, map: LieMap) -> Result<Twist, GeometryError> {
    match map {
        LieMap::Coupled => pose_log(p),
        LieMap::Decoupled => {
            let (w, theta) = quaternion_log(&p.rotation);
            if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
                return Err(GeometryError::RotationNearPi { angle: theta });
            }
            Ok(Twist::new(p.translation, w))
        }
    }
}

/// `a * exp(s * log(a^-1 b))`: the point a fraction `s` along the geodesic from `a` to `b`.
pub fn geodesic_interpolate(a: &Pose, b: &Pose, s: f64) -> Result<Pose, GeometryError> {
    if s == 0.0 {
        return Ok(*a);
    }
    if s == 1.0 {
        return Ok(*b);
    }
    let rel = pose_log(&compose(&inverse(a), b))?;
    Ok(compose(a, &pose_exp(&scale_twist(&rel, s))))
}
