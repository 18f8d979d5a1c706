//! Constrained random grasp-motion generation around a canonical motion.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ControlPose, GraspDescriptor};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Uniform random rotation from three uniform samples in `[0, 1]`
/// (Shoemake's subgroup algorithm).
///
/// Components, in `(x, y, z, w)` order, are
/// `(√(1−u₁)·sin 2πu₂, √(1−u₁)·cos 2πu₂, √u₁·sin 2πu₃, √u₁·cos 2πu₃)`.
pub fn random_quaternion<T: Real>(u1: T, u2: T, u3: T) -> UnitQuaternion<T> {
    let r1 = (T::one() - u1).sqrt();
    let r2 = u1.sqrt();
    let (t1, t2) = (T::two_pi() * u2, T::two_pi() * u3);
    let coords = Vector4::new(r1 * t1.sin(), r1 * t1.cos(), r2 * t2.sin(), r2 * t2.cos());
    UnitQuaternion::new_unchecked(Quaternion::from(coords))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams<T: Real> {
    /// Hard bound on the offset distance (m).
    pub max_translation: T,
    /// Hard bound on the offset rotation angle (rad).
    pub max_angle: T,
    /// Per-component standard deviation of the translation offset (m).
    pub translation_stddev: T,
    pub seed: u64,
}

impl<T: Real> Default for SamplingParams<T> {
    fn default() -> Self {
        Self {
            max_translation: lit(0.04),
            max_angle: lit(0.2),
            translation_stddev: lit(0.02),
            seed: 0,
        }
    }
}

const MAX_REJECTIONS: usize = 10_000;

/// Draws one motion: every control pose is perturbed by an independent
/// bounded 6D offset.
///
/// Translation components are normal and the offset is resampled until
/// its norm is within `max_translation`. The rotation offset is a
/// Shoemake-uniform rotation whose angle is shrunk geodesically by
/// `max_angle / π`, so it never exceeds `max_angle`.
pub fn sample_grasp_motion<T: Real, R: Rng + ?Sized>(
    canonical_motion: &GraspDescriptor<T>,
    params: &SamplingParams<T>,
    rng: &mut R,
) -> Result<GraspDescriptor<T>> {
    let stddev = to_f64(params.translation_stddev);
    if !(stddev >= 0.0)
        || !(params.max_translation >= T::zero())
        || !(params.max_angle >= T::zero())
    {
        return Err(Error::invalid("sampling bounds must be non-negative"));
    }
    let normal = Normal::new(0.0, stddev).map_err(|e| Error::invalid(e.to_string()))?;
    let shrink = params.max_angle.min(T::pi()) / T::pi();
    let mut poses = Vec::with_capacity(canonical_motion.len());
    for pose in &canonical_motion.poses {
        let offset = (0..MAX_REJECTIONS)
            .map(|_| {
                Vector3::new(
                    lit::<T>(normal.sample(rng)),
                    lit::<T>(normal.sample(rng)),
                    lit::<T>(normal.sample(rng)),
                )
            })
            .find(|v| v.norm() <= params.max_translation)
            .ok_or(Error::RejectionLimit {
                attempts: MAX_REJECTIONS,
            })?;
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let mut q = random_quaternion(lit::<T>(u1), lit(u2), lit(u3));
        if q.w < T::zero() {
            q = UnitQuaternion::new_unchecked(-q.into_inner());
        }
        let delta = UnitQuaternion::from_scaled_axis(q.scaled_axis() * shrink);
        poses.push(ControlPose::from_quaternion(
            pose.position + offset,
            pose.quaternion() * delta,
            pose.label.clone(),
        ));
    }
    GraspDescriptor::new(poses, canonical_motion.space)
}

/// `count` motions from a generator seeded with `params.seed`.
pub fn sample_grasp_motions<T: Real>(
    canonical_motion: &GraspDescriptor<T>,
    params: &SamplingParams<T>,
    count: usize,
) -> Result<Vec<GraspDescriptor<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..count)
        .map(|_| sample_grasp_motion(canonical_motion, params, &mut rng))
        .collect()
}

/// A functional constraint on a single control pose.
pub trait PosePredicate<T: Real> {
    fn accepts(&self, pose: &ControlPose<T>) -> bool;
}

impl<T: Real, F: Fn(&ControlPose<T>) -> bool> PosePredicate<T> for F {
    fn accepts(&self, pose: &ControlPose<T>) -> bool {
        self(pose)
    }
}

/// Accepts poses whose local `axis` points within `max_angle` of
/// `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachCone<T: Real> {
    pub axis: Vector3<T>,
    pub direction: Vector3<T>,
    pub max_angle: T,
}

impl<T: Real> PosePredicate<T> for ApproachCone<T> {
    fn accepts(&self, pose: &ControlPose<T>) -> bool {
        let a = (pose.orientation() * self.axis).normalize();
        let cos = a
            .dot(&self.direction.normalize())
            .max(-T::one())
            .min(T::one());
        cos.acos() <= self.max_angle
    }
}

/// True iff every pose satisfies every predicate.
pub fn filter_constraints<T: Real>(
    descriptor: &GraspDescriptor<T>,
    predicates: &[&dyn PosePredicate<T>],
) -> bool {
    descriptor
        .poses
        .iter()
        .all(|pose| predicates.iter().all(|p| p.accepts(pose)))
}
