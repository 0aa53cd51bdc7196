//! Shared geometry: axis-aligned boxes and sensor poses.

use nalgebra::{Isometry3, Matrix4, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.max[i] > self.min[i]) {
                return Err(Error::InvalidConfig(format!(
                    "degenerate bounds on axis {i}: [{}, {}]",
                    self.min[i], self.max[i]
                )));
            }
        }
        Ok(())
    }
}

/// A rigid world-from-sensor transform.
///
/// Trajectories specify poses as a 3D position plus yaw about the world z
/// axis; frame files store the full 4x4 matrix, so arbitrary rigid transforms
/// round-trip through [`Pose::from_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub Isometry3<f64>);

impl Pose {
    pub fn identity() -> Self {
        Pose(Isometry3::identity())
    }

    pub fn from_position_yaw(position: Point3<f64>, yaw: f64) -> Self {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Pose(Isometry3::from_parts(
            Translation3::from(position.coords),
            rot,
        ))
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.0.translation.vector)
    }

    /// Map a sensor-frame direction into the world frame.
    pub fn rotate(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        self.0.rotation * dir
    }

    /// Map a sensor-frame point into the world frame.
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.0 * p
    }

    /// Row-major 4x4 world-from-sensor matrix.
    pub fn to_matrix(&self) -> [f64; 16] {
        let m: Matrix4<f64> = self.0.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Rebuild from a row-major 4x4; rejects non-rigid matrices.
    ///
    /// The rotation block must be orthonormal within 1e-6 with determinant +1
    /// and the last row must be (0, 0, 0, 1).
    pub fn from_matrix(m: &[f64; 16]) -> Result<Self> {
        let bad = |what: &str| Error::CorruptHeader(format!("pose is not rigid: {what}"));
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom
            .iter()
            .zip(&[0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(bad("last row"));
        }
        let r = nalgebra::Matrix3::from_iterator(
            // from_iterator fills column-major; transpose of row-major walk.
            (0..3).flat_map(|c| (0..3).map(move |r| m[r * 4 + c])),
        );
        let should_be_eye = r.transpose() * r;
        let eye = nalgebra::Matrix3::identity();
        if (should_be_eye - eye).abs().max() > 1e-6 {
            return Err(bad("rotation not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(bad("determinant != +1"));
        }
        let rot = UnitQuaternion::from_matrix(&r);
        let t = Translation3::new(m[3], m[7], m[11]);
        Ok(Pose(Isometry3::from_parts(t, rot)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pose_matrix_round_trip() {
        let p = Pose::from_position_yaw(Point3::new(1.0, -2.0, 0.5), 0.7);
        let m = p.to_matrix();
        let q = Pose::from_matrix(&m).unwrap();
        assert_relative_eq!(
            (p.position() - q.position()).norm(),
            0.0,
            epsilon = 1e-12
        );
        let d = Vector3::new(0.6, -0.8, 0.0);
        assert_relative_eq!((p.rotate(&d) - q.rotate(&d)).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn non_rigid_matrix_rejected() {
        let mut m = Pose::identity().to_matrix();
        m[0] = 2.0; // scale is not rigid
        assert!(Pose::from_matrix(&m).is_err());
    }

    #[test]
    fn aabb_contains_is_closed() {
        let b = Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        assert!(b.contains(&Point3::new(1.0, 0.0, 0.5)));
        assert!(!b.contains(&Point3::new(1.0 + 1e-12, 0.0, 0.5)));
    }
}
