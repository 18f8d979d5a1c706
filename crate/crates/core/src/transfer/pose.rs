use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Which object frame a descriptor's poses are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Canonical,
    Observed,
}

/// A 6D control pose of a grasping motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPose<T: Real> {
    pub position: Vector3<T>,
    orientation: Matrix3<T>,
    pub label: String,
}

impl<T: Real> ControlPose<T> {
    /// Fails unless `orientation` is a proper rotation within 1e-9.
    pub fn new(
        position: Vector3<T>,
        orientation: Matrix3<T>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let tol = lit::<T>(1e-9);
        let gram = orientation.transpose() * orientation - Matrix3::identity();
        if !(gram.amax() <= tol) || !((orientation.determinant() - T::one()).abs() <= tol) {
            return Err(Error::invalid("pose orientation is not a proper rotation"));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("pose position is not finite"));
        }
        Ok(Self {
            position,
            orientation,
            label: label.into(),
        })
    }

    pub fn from_quaternion(
        position: Vector3<T>,
        rotation: UnitQuaternion<T>,
        label: impl Into<String>,
    ) -> Self {
        Self {
            position,
            orientation: rotation.to_rotation_matrix().into_inner(),
            label: label.into(),
        }
    }

    pub fn orientation(&self) -> &Matrix3<T> {
        &self.orientation
    }

    pub fn quaternion(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.orientation))
    }

    /// Left-composition with a rigid transform `(R, t)`.
    pub(crate) fn premultiplied(&self, rotation: &Matrix3<T>, translation: &Vector3<T>) -> Self {
        Self {
            position: rotation * self.position + translation,
            orientation: rotation * self.orientation,
            label: self.label.clone(),
        }
    }

    /// Rotation angle between two orientations, in radians.
    pub fn angle_to(&self, other: &Self) -> T {
        let rel = self.orientation.transpose() * other.orientation;
        let cos = (rel.trace() - T::one()) * lit(0.5);
        cos.max(-T::one()).min(T::one()).acos()
    }
}

/// Ordered control poses of one grasping motion.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspDescriptor<T: Real> {
    pub poses: Vec<ControlPose<T>>,
    pub space: SpaceTag,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    label: String,
    position: [f64; 3],
    /// `[w, x, y, z]`.
    quaternion: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct DescriptorJson {
    space_tag: SpaceTag,
    poses: Vec<PoseJson>,
}

impl<T: Real> GraspDescriptor<T> {
    pub fn new(poses: Vec<ControlPose<T>>, space: SpaceTag) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("grasp descriptor needs at least one pose"));
        }
        Ok(Self { poses, space })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = DescriptorJson {
            space_tag: self.space,
            poses: self
                .poses
                .iter()
                .map(|p| {
                    let q = p.quaternion();
                    PoseJson {
                        label: p.label.clone(),
                        position: [
                            to_f64(p.position.x),
                            to_f64(p.position.y),
                            to_f64(p.position.z),
                        ],
                        quaternion: [to_f64(q.w), to_f64(q.i), to_f64(q.j), to_f64(q.k)],
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("descriptor serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DescriptorJson = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("grasp descriptor JSON: {e}")))?;
        let poses = doc
            .poses
            .into_iter()
            .map(|p| {
                let [w, x, y, z] = p.quaternion;
                let q = Quaternion::<T>::new(lit(w), lit(x), lit(y), lit(z));
                let norm = q.norm();
                if !(norm > lit(1e-12)) || !norm.is_finite() {
                    return Err(Error::invalid(format!(
                        "pose `{}` has a degenerate quaternion",
                        p.label
                    )));
                }
                let position =
                    Vector3::new(lit(p.position[0]), lit(p.position[1]), lit(p.position[2]));
                if !position.iter().all(|c: &T| c.is_finite()) {
                    return Err(Error::invalid(format!(
                        "pose `{}` has a non-finite position",
                        p.label
                    )));
                }
                Ok(ControlPose::from_quaternion(
                    position,
                    UnitQuaternion::new_normalize(q),
                    p.label,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(poses, doc.space_tag)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
