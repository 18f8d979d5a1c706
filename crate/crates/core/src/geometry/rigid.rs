use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Rigid transform `p ↦ R(q)·p + t` with a unit quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidParams<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for RigidParams<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidParams<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds from a raw `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(wxyz: [T; 4], translation: Vector3<T>) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !(norm > lit(1e-12)) || !norm.is_finite() {
            return Err(Error::invalid(
                "rotation quaternion has zero or non-finite norm",
            ));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(Self::new(UnitQuaternion::new_normalize(q), translation))
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_axis_angle(axis: Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, lit(1e-15)) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rotation, translation)
    }

    /// `[w, x, y, z]`.
    pub fn wxyz(&self) -> [T; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn apply_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    pub fn apply(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        cloud
            .map(|p| self.apply_point(p))
            .expect("rigid transform keeps points finite")
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self::new(rotation, -(rotation * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn to_isometry(&self) -> Isometry3<T> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn rotation_angle(&self) -> T {
        self.rotation.angle()
    }
}

/// Applies `θ` to every point of `cloud`.
pub fn apply_rigid<T: Real>(cloud: &PointCloud<T>, theta: &RigidParams<T>) -> PointCloud<T> {
    theta.apply(cloud)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let c = PointCloud::from_arrays(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).unwrap();
        assert_eq!(apply_rigid(&c, &RigidParams::identity()), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let theta = RigidParams::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = theta.apply_point(&Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn rejects_zero_quaternion() {
        assert!(RigidParams::from_wxyz([0.0; 4], Vector3::zeros()).is_err());
    }

    fn arb_theta() -> impl Strategy<Value = RigidParams<f64>> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter_map("non-zero quaternion", |(q, t)| {
                RigidParams::from_wxyz(q, Vector3::from(t)).ok()
            })
    }

    proptest! {
        #[test]
        fn preserves_pairwise_distances(
            theta in arb_theta(),
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..12),
        ) {
            let cloud = PointCloud::from_arrays(&pts).unwrap();
            let moved = apply_rigid(&cloud, &theta);
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let before = (cloud.points()[i] - cloud.points()[j]).norm();
                    let after = (moved.points()[i] - moved.points()[j]).norm();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn inverse_round_trip(
            theta in arb_theta(),
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..12),
        ) {
            let cloud = PointCloud::from_arrays(&pts).unwrap();
            let back = apply_rigid(&apply_rigid(&cloud, &theta), &theta.inverse());
            for (a, b) in cloud.iter().zip(back.iter()) {
                prop_assert!((a - b).amax() < 1e-9);
            }
        }
    }
}
