//! Moving control poses through deformation fields.
//!
//! Positions go through the field directly. Orientations are carried by
//! deforming the endpoints `p + ε·eᵢ` of the first two basis axes,
//! differencing, and re-orthonormalising (x, then y, then z = x × y).

use nalgebra::{Matrix3, Vector3};

use super::{ControlPose, GraspDescriptor, SpaceTag};
use crate::cpd::{kernel, DeformationField};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidParams};
use crate::scalar::{lit, to_f64, Real};

/// Basis endpoint offset in meters.
pub const BASIS_EPSILON: f64 = 1e-4;
/// Canonical points used to approximate the inverse field at a location.
pub const SUPPORT_SIZE: usize = 50;

fn gram_schmidt<T: Real>(x: Vector3<T>, y: Vector3<T>) -> Result<Matrix3<T>> {
    let tol = lit::<T>(1e-9);
    let xn = x.norm();
    if !(xn > tol) {
        return Err(Error::DegenerateBasis);
    }
    let x = x / xn;
    let y = y - x * x.dot(&y);
    let yn = y.norm();
    if !(yn > tol) {
        return Err(Error::DegenerateBasis);
    }
    let y = y / yn;
    let z = x.cross(&y);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Canonical → observed: deforms the pose, then applies `θ`.
pub fn warp_pose<T: Real>(
    field: &DeformationField<T>,
    theta: &RigidParams<T>,
    pose: &ControlPose<T>,
) -> Result<ControlPose<T>> {
    let eps = lit::<T>(BASIS_EPSILON);
    let base = field.apply_point(&pose.position);
    let axis = |i: usize| {
        let end = field.apply_point(&(pose.position + pose.orientation().column(i) * eps));
        (end - base) / eps
    };
    let basis = gram_schmidt(axis(0), axis(1))?;
    ControlPose::new(
        theta.apply_point(&base),
        theta.rotation_matrix() * basis,
        pose.label.clone(),
    )
}

/// Approximates `o + v⁻¹(o)` from canonical `support` points that deform
/// near `o`: `v⁻¹(o) = −Σ g(o, zᵢ + v(zᵢ))·v(zᵢ) / Σ g(o, zᵢ + v(zᵢ))`.
pub fn inverse_deform<T: Real>(
    field: &DeformationField<T>,
    o: &Vector3<T>,
    support: &PointCloud<T>,
) -> Result<Vector3<T>> {
    let displacements: Vec<Vector3<T>> = support.iter().map(|z| field.displacement(z)).collect();
    weighted_inverse(o, support.points(), &displacements, field.beta())
}

fn weighted_inverse<T: Real>(
    o: &Vector3<T>,
    support: &[Vector3<T>],
    displacements: &[Vector3<T>],
    beta: T,
) -> Result<Vector3<T>> {
    let scale = -T::one() / (lit::<T>(2.0) * beta * beta);
    let mut num = Vector3::zeros();
    let mut den = T::zero();
    for (z, v) in support.iter().zip(displacements) {
        let w = ((o - (z + v)).norm_squared() * scale).exp();
        num += v * w;
        den += w;
    }
    if !(den >= lit(1e-12)) {
        return Err(Error::VanishingSupport {
            weight: to_f64(den),
        });
    }
    Ok(o - num / den)
}

/// The `k` canonical points whose deformed positions lie nearest to `o`.
pub fn canonical_support<T: Real>(
    field: &DeformationField<T>,
    o: &Vector3<T>,
    k: usize,
) -> PointCloud<T> {
    let deformer = InverseDeformer::new(field);
    let idx = deformer.nearest(o, k);
    field
        .canonical()
        .subset(&idx)
        .expect("support indices are valid")
}

/// Observed → canonical pose via the approximate inverse field.
pub fn pose_to_canonical<T: Real>(
    field: &DeformationField<T>,
    pose: &ControlPose<T>,
    support: &PointCloud<T>,
) -> Result<ControlPose<T>> {
    let displacements: Vec<Vector3<T>> = support.iter().map(|z| field.displacement(z)).collect();
    pose_through_inverse(pose, support.points(), &displacements, field.beta())
}

fn pose_through_inverse<T: Real>(
    pose: &ControlPose<T>,
    support: &[Vector3<T>],
    displacements: &[Vector3<T>],
    beta: T,
) -> Result<ControlPose<T>> {
    let eps = lit::<T>(BASIS_EPSILON);
    let base = weighted_inverse(&pose.position, support, displacements, beta)?;
    let axis = |i: usize| -> Result<Vector3<T>> {
        let end = pose.position + pose.orientation().column(i) * eps;
        Ok((weighted_inverse(&end, support, displacements, beta)? - base) / eps)
    };
    let basis = gram_schmidt(axis(0)?, axis(1)?)?;
    ControlPose::new(base, basis, pose.label.clone())
}

/// Caches the canonical displacements `v(cᵢ)` of one field so repeated
/// inverse queries cost O(M) each.
pub struct InverseDeformer<'a, T: Real> {
    field: &'a DeformationField<T>,
    displacements: Vec<Vector3<T>>,
    deformed: Vec<Vector3<T>>,
}

impl<'a, T: Real> InverseDeformer<'a, T> {
    pub fn new(field: &'a DeformationField<T>) -> Self {
        let canon = field.canonical().points();
        let g = kernel(canon, canon, field.beta());
        let disp = g * field.weights();
        let displacements: Vec<_> = (0..canon.len())
            .map(|i| Vector3::new(disp[(i, 0)], disp[(i, 1)], disp[(i, 2)]))
            .collect();
        let deformed = canon
            .iter()
            .zip(&displacements)
            .map(|(c, v)| c + v)
            .collect();
        Self {
            field,
            displacements,
            deformed,
        }
    }

    /// Indices of the `k` deformed canonical points nearest `o`, nearest
    /// first.
    pub fn nearest(&self, o: &Vector3<T>, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.deformed.len()).collect();
        let dist = |i: &usize| (self.deformed[*i] - o).norm_squared();
        idx.sort_by(|a, b| {
            dist(a)
                .partial_cmp(&dist(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        idx.truncate(k.max(1));
        idx
    }

    pub fn pose_to_canonical(&self, pose: &ControlPose<T>, k: usize) -> Result<ControlPose<T>> {
        let idx = self.nearest(&pose.position, k);
        let canon = self.field.canonical().points();
        let support: Vec<_> = idx.iter().map(|&i| canon[i]).collect();
        let disp: Vec<_> = idx.iter().map(|&i| self.displacements[i]).collect();
        pose_through_inverse(pose, &support, &disp, self.field.beta())
    }
}

/// Pulls an observed-space descriptor back into canonical space using the
/// `k` nearest deformed canonical points as support for each pose.
pub fn descriptor_to_canonical<T: Real>(
    descriptor: &GraspDescriptor<T>,
    field: &DeformationField<T>,
    k: usize,
) -> Result<GraspDescriptor<T>> {
    if descriptor.space != SpaceTag::Observed {
        return Err(Error::invalid("descriptor is already in canonical space"));
    }
    let deformer = InverseDeformer::new(field);
    let poses = descriptor
        .poses
        .iter()
        .map(|p| deformer.pose_to_canonical(p, k))
        .collect::<Result<Vec<_>>>()?;
    GraspDescriptor::new(poses, SpaceTag::Canonical)
}

/// Warps a canonical descriptor onto an observed instance.
pub fn descriptor_to_observed<T: Real>(
    descriptor: &GraspDescriptor<T>,
    field: &DeformationField<T>,
    theta: &RigidParams<T>,
) -> Result<GraspDescriptor<T>> {
    if descriptor.space != SpaceTag::Canonical {
        return Err(Error::invalid("descriptor is not in canonical space"));
    }
    let poses = descriptor
        .poses
        .iter()
        .map(|p| warp_pose(field, theta, p))
        .collect::<Result<Vec<_>>>()?;
    GraspDescriptor::new(poses, SpaceTag::Observed)
}

/// Expresses observed-space poses in the manipulator base frame given the
/// object's pose in that frame.
pub fn to_robot_frame<T: Real>(
    descriptor: &GraspDescriptor<T>,
    object_pose: &RigidParams<T>,
) -> Result<GraspDescriptor<T>> {
    if descriptor.space != SpaceTag::Observed {
        return Err(Error::invalid(
            "only observed-space descriptors can be sent to the robot frame",
        ));
    }
    let r = object_pose.rotation_matrix();
    let poses = descriptor
        .poses
        .iter()
        .map(|p| p.premultiplied(&r, &object_pose.translation))
        .collect();
    GraspDescriptor::new(poses, SpaceTag::Observed)
}
