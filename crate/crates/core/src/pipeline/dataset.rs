//! On-disk training data: `instances/<id>.ply` (or `.pcd`) next to
//! `grasps/<id>.json`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{load_point_cloud, save_point_cloud, voxel_downsample};
use crate::scalar::Real;
use crate::transfer::GraspDescriptor;

use super::{TrainingInstance, TrainingSet};

/// Loads every instance under `dir`, sorted by id. When `leaf` is given
/// the clouds are voxel-filtered on load.
pub fn load_training_set<T: Real>(
    dir: impl AsRef<Path>,
    leaf: Option<T>,
) -> Result<TrainingSet<T>> {
    let dir = dir.as_ref();
    let instances_dir = dir.join("instances");
    let entries = fs::read_dir(&instances_dir).map_err(|e| Error::io(&instances_dir, e))?;
    let mut clouds = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&instances_dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("ply") | Some("pcd")) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        clouds.push((id.to_owned(), path));
    }
    clouds.sort();
    if let Some(w) = clouds.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!(
            "instance `{}` exists in more than one format",
            w[0].0
        )));
    }

    let mut instances = Vec::with_capacity(clouds.len());
    for (id, path) in clouds {
        let mut cloud = load_point_cloud::<T>(&path)?;
        if let Some(leaf) = leaf {
            cloud = voxel_downsample(&cloud, leaf)?;
        }
        let grasp = dir.join("grasps").join(format!("{id}.json"));
        let descriptor = GraspDescriptor::load(&grasp)?;
        instances.push(TrainingInstance {
            id,
            cloud: cloud.with_frame("object"),
            descriptor,
        });
    }
    TrainingSet::new(instances)
}

/// Writes `set` in the layout read by [`load_training_set`].
pub fn save_training_set<T: Real>(set: &TrainingSet<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["instances", "grasps"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for inst in set.instances() {
        save_point_cloud(
            &inst.cloud,
            dir.join("instances").join(format!("{}.ply", inst.id)),
            None,
        )?;
        inst.descriptor
            .save(dir.join("grasps").join(format!("{}.json", inst.id)))?;
    }
    Ok(())
}
