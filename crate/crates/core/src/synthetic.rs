//! Parametric drill-like category with analytically known grasps.
//!
//! A box body lies along x on top of the `z = 0` plane; a cylindrical handle
//! hangs below it at `x = −L_body/4`. The ground-truth grasp approaches the
//! middle of the handle from −y. Useful for tests, demos and benchmarks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{
    single_view_scan, tessellated_sphere, virtual_scan, voxel_downsample, Camera, PointCloud,
    ScanSettings, TriangleMesh,
};
use crate::pipeline::{TrainingInstance, TrainingSet};
use crate::scalar::{lit, Real};
use crate::transfer::{ControlPose, GraspDescriptor, SpaceTag};

pub const BODY_WIDTH: f64 = 0.05;
pub const HANDLE_RADIUS: f64 = 0.018;
pub const BODY_LENGTH_RANGE: (f64, f64) = (0.16, 0.24);
pub const BODY_HEIGHT_RANGE: (f64, f64) = (0.05, 0.08);
pub const HANDLE_LENGTH_RANGE: (f64, f64) = (0.08, 0.14);
/// Gap between the handle surface and the grasp pose.
pub const GRASP_STANDOFF: f64 = 0.01;
/// Extra retreat of the pregrasp pose along the approach axis.
pub const PREGRASP_RETREAT: f64 = 0.03;
const HANDLE_SEGMENTS: usize = 24;

/// One member of the family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrillShape {
    pub body_length: f64,
    pub body_height: f64,
    pub handle_length: f64,
}

impl DrillShape {
    /// Shape at the centre of every parameter range.
    pub fn nominal() -> Self {
        let mid = |r: (f64, f64)| 0.5 * (r.0 + r.1);
        Self {
            body_length: mid(BODY_LENGTH_RANGE),
            body_height: mid(BODY_HEIGHT_RANGE),
            handle_length: mid(HANDLE_LENGTH_RANGE),
        }
    }

    /// `n` shapes drawn uniformly from the parameter box.
    pub fn sample_family(n: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: (f64, f64)| r.0 + (r.1 - r.0) * rng.random::<f64>();
        (0..n)
            .map(|_| Self {
                body_length: draw(BODY_LENGTH_RANGE),
                body_height: draw(BODY_HEIGHT_RANGE),
                handle_length: draw(HANDLE_LENGTH_RANGE),
            })
            .collect()
    }

    pub fn handle_x(&self) -> f64 {
        -0.25 * self.body_length
    }

    pub fn body_mesh<T: Real>(&self) -> Result<TriangleMesh<T>> {
        TriangleMesh::cuboid(
            v(-0.5 * self.body_length, -0.5 * BODY_WIDTH, 0.0),
            v(0.5 * self.body_length, 0.5 * BODY_WIDTH, self.body_height),
        )
    }

    pub fn handle_mesh<T: Real>(&self) -> Result<TriangleMesh<T>> {
        TriangleMesh::cylinder(
            v(self.handle_x(), 0.0, -self.handle_length),
            lit(HANDLE_RADIUS),
            lit(self.handle_length),
            HANDLE_SEGMENTS,
        )
    }

    pub fn mesh<T: Real>(&self) -> Result<TriangleMesh<T>> {
        TriangleMesh::merge(&[self.body_mesh()?, self.handle_mesh()?])
    }

    /// Ground-truth observed-space grasp: `pregrasp` then `grasp`, both
    /// with the tool z axis pointing at the handle (+y).
    pub fn grasp<T: Real>(&self) -> GraspDescriptor<T> {
        let rotation = nalgebra::UnitQuaternion::from_axis_angle(
            &Vector3::x_axis(),
            lit(-std::f64::consts::FRAC_PI_2),
        );
        let z = -0.5 * self.handle_length;
        let y = -(HANDLE_RADIUS + GRASP_STANDOFF);
        GraspDescriptor::new(
            vec![
                ControlPose::from_quaternion(
                    v(self.handle_x(), y - PREGRASP_RETREAT, z),
                    rotation,
                    "pregrasp",
                ),
                ControlPose::from_quaternion(v(self.handle_x(), y, z), rotation, "grasp"),
            ],
            SpaceTag::Observed,
        )
        .expect("two poses")
    }

    /// Scan from all [`tessellated_sphere`] views, voxel-filtered.
    pub fn full_view<T: Real>(&self, leaf: T) -> Result<PointCloud<T>> {
        let cameras = tessellated_sphere(1, lit(0.6))?;
        voxel_downsample(
            &virtual_scan(&self.mesh()?, &cameras, &ScanSettings::default())?,
            leaf,
        )
    }

    /// Scan from above the far +x end, where the body hides the handle.
    pub fn occluded_view<T: Real>(&self, leaf: T) -> Result<PointCloud<T>> {
        let camera = Camera::looking_at(v(0.45, 0.0, 0.45), v(0.0, 0.0, 0.03))?;
        voxel_downsample(
            &single_view_scan(&self.mesh()?, &camera, &ScanSettings::default())?,
            leaf,
        )
    }
}

fn v<T: Real>(x: f64, y: f64, z: f64) -> Vector3<T> {
    Vector3::new(lit(x), lit(y), lit(z))
}

/// Training set `inst00, inst01, …` of full views with ground-truth grasps.
pub fn training_set<T: Real>(shapes: &[DrillShape], leaf: T) -> Result<TrainingSet<T>> {
    let instances = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(TrainingInstance {
                id: format!("inst{i:02}"),
                cloud: s.full_view(leaf)?,
                descriptor: s.grasp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::new(instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_stays_in_range() {
        for s in DrillShape::sample_family(50, 3) {
            assert!((BODY_LENGTH_RANGE.0..=BODY_LENGTH_RANGE.1).contains(&s.body_length));
            assert!((BODY_HEIGHT_RANGE.0..=BODY_HEIGHT_RANGE.1).contains(&s.body_height));
            assert!((HANDLE_LENGTH_RANGE.0..=HANDLE_LENGTH_RANGE.1).contains(&s.handle_length));
        }
    }

    #[test]
    fn grasp_sits_beside_the_handle() {
        let s = DrillShape::nominal();
        let g = s.grasp::<f64>();
        let handle = s.handle_mesh::<f64>().unwrap();
        let d = handle.distance_to(&g.poses[1].position);
        assert!((d - GRASP_STANDOFF).abs() < 1e-3, "{d}");
        let approach = g.poses[1].orientation() * Vector3::z();
        assert!((approach - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn occluded_view_misses_the_handle() {
        let s = DrillShape::nominal();
        let cloud = s.occluded_view::<f64>(0.005).unwrap();
        assert!(cloud.iter().all(|p| p.z > -1e-3));
        let full = s.full_view::<f64>(0.005).unwrap();
        assert!(full.iter().any(|p| p.z < -0.05));
    }
}
