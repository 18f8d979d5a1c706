use std::collections::HashMap;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Default voxel edge length in meters.
pub const DEFAULT_LEAF: f64 = 0.005;

/// Replaces the points of every occupied `leaf`-sized voxel by their
/// centroid. Output voxels are ordered by first occurrence in the input.
pub fn voxel_downsample<T: Real>(cloud: &PointCloud<T>, leaf: T) -> Result<PointCloud<T>> {
    if !(leaf > T::zero()) || !leaf.is_finite() {
        return Err(Error::invalid("voxel leaf size must be positive"));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<T>, usize)> = Vec::new();
    for p in cloud {
        let key = [p.x, p.y, p.z].map(|c| {
            (c / leaf)
                .floor()
                .to_i64()
                .expect("voxel index overflows i64")
        });
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p;
        sums[slot].1 += 1;
    }
    let points = sums
        .into_iter()
        .map(|(sum, n)| {
            if n == 1 {
                sum
            } else {
                sum / lit::<T>(n as f64)
            }
        })
        .collect();
    Ok(PointCloud::new(points)?.with_frame(cloud.frame_id()))
}
