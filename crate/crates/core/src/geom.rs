//! Frame conventions, rotation algebra and manifold updates.
//!
//! Conventions used throughout the crate:
//!
//! * quaternions are scalar-first with the Hamilton product;
//! * `q_wb` (attitude of the body in the world frame) maps body vectors into
//!   the world frame;
//! * attitude errors are right-multiplicative: `q = q̂ ⊗ Exp(δθ)`;
//! * the world frame `w` has its z axis up and differs from the local ENU
//!   frame `n` by a yaw offset `ψ` about the Up axis.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius of the spherical model used for anchors (m).
pub const EARTH_RADIUS: f64 = 6_371_000.0;

const ANCHOR_NORM_BAND: (f64, f64) = (6.3e6, 6.5e6);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
    #[error("anchor position norm {0:.1} m outside the Earth-surface band")]
    AnchorOutOfBand(f64),
    #[error("error-state dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot chain {first_to:?} -> {second_from:?}: inner frames differ")]
    FrameMismatch {
        first_to: FrameTag,
        second_from: FrameTag,
    },
}

/// A unit quaternion rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds a rotation from scalar-first quaternion components. The input is
    /// normalized.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeomError> {
        if ![w, x, y, z].iter().all(|c| c.is_finite()) {
            return Err(GeomError::NonFinite("quaternion"));
        }
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if q.norm() < 1e-300 {
            return Err(GeomError::ZeroQuaternion);
        }
        Ok(Self(UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(UnitQuaternion::new_normalize(q.into_inner()))
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Self(UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// Exponential map of a rotation vector.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*phi))
    }

    /// Logarithm map, returning a rotation vector with angle in [0, π].
    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Scalar part of the quaternion.
    pub fn scalar(&self) -> f64 {
        self.0.w
    }

    /// Vector part of the quaternion.
    pub fn vector(&self) -> Vector3<f64> {
        self.0.imag()
    }

    pub fn components(&self) -> [f64; 4] {
        [self.0.w, self.0.i, self.0.j, self.0.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Hamilton product `self ⊗ other`, renormalized.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::from_unit_quaternion(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Self(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    pub fn norm(&self) -> f64 {
        self.0.as_ref().norm()
    }

    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

/// Coordinate frames of the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameTag {
    /// Earth-centered Earth-fixed.
    Ecef,
    /// Local East-North-Up at the anchor.
    Enu,
    /// Local world frame of the visual-inertial estimator.
    World,
    /// IMU body frame.
    Body,
    /// Camera frame.
    Camera,
}

/// A rigid transform `x_to = R x_from + t` between two tagged frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    pub from: FrameTag,
    pub to: FrameTag,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl FrameTransform {
    pub fn new(from: FrameTag, to: FrameTag, rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            from,
            to,
            rotation,
            translation,
        }
    }

    /// `next ∘ self`: apply `self` first, then `next`.
    pub fn then(&self, next: &FrameTransform) -> Result<FrameTransform, GeomError> {
        if self.to != next.from {
            return Err(GeomError::FrameMismatch {
                first_to: self.to,
                second_from: next.from,
            });
        }
        Ok(FrameTransform {
            from: self.from,
            to: next.to,
            rotation: next.rotation.compose(&self.rotation),
            translation: next.rotation.rotate(&self.translation) + next.translation,
        })
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    pub fn inverse(&self) -> FrameTransform {
        let inv = self.rotation.inverse();
        FrameTransform {
            from: self.to,
            to: self.from,
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }
}

/// The point that ties the local frames to the Earth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorGeodesy {
    /// Anchor position in ECEF (m).
    pub position_ecef: Vector3<f64>,
    /// Latitude (rad).
    pub latitude: f64,
    /// Longitude (rad).
    pub longitude: f64,
}

impl AnchorGeodesy {
    /// Spherical-Earth anchor at the given latitude, longitude and height.
    pub fn from_geodetic(latitude: f64, longitude: f64, height: f64) -> Result<Self, GeomError> {
        if !(latitude.is_finite() && longitude.is_finite() && height.is_finite()) {
            return Err(GeomError::NonFinite("anchor geodetic coordinates"));
        }
        let r = EARTH_RADIUS + height;
        let position_ecef = Vector3::new(
            r * latitude.cos() * longitude.cos(),
            r * latitude.cos() * longitude.sin(),
            r * latitude.sin(),
        );
        Self::new(position_ecef, latitude, longitude)
    }

    pub fn new(position_ecef: Vector3<f64>, latitude: f64, longitude: f64) -> Result<Self, GeomError> {
        if !position_ecef.iter().all(|c| c.is_finite()) {
            return Err(GeomError::NonFinite("anchor position"));
        }
        let norm = position_ecef.norm();
        if norm < ANCHOR_NORM_BAND.0 || norm > ANCHOR_NORM_BAND.1 {
            return Err(GeomError::AnchorOutOfBand(norm));
        }
        Ok(Self {
            position_ecef,
            latitude,
            longitude,
        })
    }
}

/// Rotation about the Up axis by `psi`, mapping world-frame vectors into the
/// ENU frame.
pub fn rotation_from_yaw(psi: f64) -> Result<Rotation, GeomError> {
    if !psi.is_finite() {
        return Err(GeomError::NonFinite("yaw offset"));
    }
    Ok(Rotation::exp(&Vector3::new(0.0, 0.0, psi)))
}

/// Rotation from the ENU frame at the anchor into ECEF. Its columns are the
/// East, North and Up directions expressed in ECEF.
pub fn ecef_from_enu(anchor: &AnchorGeodesy) -> Rotation {
    Rotation::from_matrix(&ecef_from_enu_matrix(anchor.latitude, anchor.longitude))
}

pub(crate) fn ecef_from_enu_matrix(lat: f64, lon: f64) -> Matrix3<f64> {
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    Matrix3::new(
        -so,
        -sl * co,
        cl * co, //
        co,
        -sl * so,
        cl * so, //
        0.0,
        cl,
        sl,
    )
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Inverse of the left Jacobian of SO(3).
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian_inv(&(-phi))
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
