//! Points, point clouds and rigid transforms.
//!
//! All distances are in meters and all angles in radians. Point clouds carry
//! an explicit frame tag so camera-frame and world-frame data cannot be mixed
//! silently.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn world(points: Vec<Point3>) -> Self {
        Self::new(points, Frame::World)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Applies `t` to every point. The caller is responsible for the frame
    /// tag of the result.
    pub fn transformed(&self, t: &RigidTransform, frame: Frame) -> Self {
        Self::new(self.points.iter().map(|p| t.apply(p)).collect(), frame)
    }
}

/// A proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid("rigid transform has non-finite entries"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOL {
            return Err(invalid(format!(
                "rotation is not orthonormal (|R^T R - I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    /// A zero axis yields a pure translation.
    pub fn from_axis_angle(axis: Vector3, angle: f64, translation: Vector3) -> Self {
        let rotation = match Unit::try_new(axis, 1e-15) {
            Some(axis) => *Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self { rotation, translation }
    }

    /// Rotation by the scaled axis `omega` (angle = |omega|) and translation.
    pub fn from_scaled_axis(omega: Vector3, translation: Vector3) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(omega).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a free vector (translation does not act on differences).
    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Magnitude of the rotation in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Maximum deviation from the rigid-transform invariants
    /// (`|R^T R - I|_max` and `|det R - 1|`).
    pub fn orthonormality_error(&self) -> f64 {
        let gram = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        gram.max((self.rotation.determinant() - 1.0).abs())
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Free-function form of [`RigidTransform::apply`].
pub fn apply(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}
