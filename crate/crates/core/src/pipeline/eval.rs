//! Leave-two-out cross validation.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::inference::InferenceParams;
use crate::scalar::{to_f64, Real};
use crate::transfer::GraspDescriptor;

use super::{train, TrainConfig, TrainingSet};

/// Held-out id groups: consecutive pairs of the sorted ids. An odd
/// leftover joins the last fold.
pub fn cross_validation_folds(ids: &[String]) -> Vec<Vec<String>> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut folds: Vec<Vec<String>> = sorted.chunks(2).map(<[String]>::to_vec).collect();
    if folds.len() > 1 && folds.last().is_some_and(|f| f.len() == 1) {
        let last = folds.pop().expect("non-empty");
        folds.last_mut().expect("non-empty").extend(last);
    }
    folds
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig<T: Real> {
    pub train: TrainConfig<T>,
    pub inference: InferenceParams<T>,
    /// Preferred template. When it is held out (or unset), the first
    /// remaining id in sorted order is used instead.
    pub canonical_id: Option<String>,
}

/// Errors for one held-out instance.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutResult {
    pub fold: usize,
    pub id: String,
    pub canonical_id: String,
    /// Symmetric mean nearest-neighbour distance between the completed
    /// shape and the observation (m).
    pub registration_error: f64,
    /// Largest control-pose position error (m).
    pub position_error: f64,
    /// Largest control-pose orientation error (rad).
    pub orientation_error: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub canonical_id: String,
    pub results: Vec<HeldOutResult>,
}

impl FoldResult {
    /// True when every held-out pose is within both tolerances.
    pub fn passes(&self, max_position: f64, max_angle: f64) -> bool {
        self.results
            .iter()
            .all(|r| r.position_error < max_position && r.orientation_error < max_angle)
    }
}

/// Mean distance from each point of `a` to its nearest point in `b`.
pub fn mean_nearest_distance<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> f64 {
    let total: f64 = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| to_f64((p - q).norm_squared()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Largest position and orientation errors over paired poses.
pub fn descriptor_errors<T: Real>(
    predicted: &GraspDescriptor<T>,
    truth: &GraspDescriptor<T>,
) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "descriptor lengths differ: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let mut worst = (0.0f64, 0.0f64);
    for (p, t) in predicted.poses.iter().zip(&truth.poses) {
        worst.0 = worst.0.max(to_f64((p.position - t.position).norm()));
        worst.1 = worst.1.max(to_f64(p.angle_to(t)));
    }
    Ok(worst)
}

/// Trains on each fold's complement and scores the held-out instances,
/// using their own clouds as observations.
pub fn cross_validate<T: Real>(
    set: &TrainingSet<T>,
    config: &EvalConfig<T>,
) -> Result<Vec<FoldResult>> {
    cross_validate_with(set, config, |inst| Ok(inst.cloud.clone()))
}

/// [`cross_validate`] with a caller-supplied observation per held-out
/// instance, e.g. a partial view.
pub fn cross_validate_with<T: Real>(
    set: &TrainingSet<T>,
    config: &EvalConfig<T>,
    mut observe: impl FnMut(&super::TrainingInstance<T>) -> Result<PointCloud<T>>,
) -> Result<Vec<FoldResult>> {
    let ids: Vec<String> = set.instances().iter().map(|i| i.id.clone()).collect();
    let mut out = Vec::new();
    for (fold, held_out) in cross_validation_folds(&ids).into_iter().enumerate() {
        let training = set.without(&held_out)?;
        let mut remaining: Vec<&str> = training.instances().iter().map(|i| i.id.as_str()).collect();
        remaining.sort_unstable();
        let canonical_id = match &config.canonical_id {
            Some(id) if remaining.contains(&id.as_str()) => id.clone(),
            _ => remaining[0].to_owned(),
        };
        let canonical = training
            .position(&canonical_id)
            .expect("id taken from the set");
        let model = train(&training, canonical, &config.train)?.model;
        let basis = model.shape_basis()?;

        let mut results = Vec::new();
        for id in &held_out {
            let inst = &set.instances()[set.position(id).expect("fold ids come from the set")];
            let observed = observe(inst)?;
            let inferred = super::infer_with_basis(&model, &basis, &observed, &config.inference)?;
            let (position_error, orientation_error) =
                descriptor_errors(&inferred.descriptor, &inst.descriptor)?;
            let registration_error = 0.5
                * (mean_nearest_distance(&observed, &inferred.completed)
                    + mean_nearest_distance(&inferred.completed, &observed));
            log::info!(
                "fold {fold} `{id}`: position {position_error:.4} m, orientation {:.2}°, registration {registration_error:.4} m",
                orientation_error.to_degrees()
            );
            results.push(HeldOutResult {
                fold,
                id: id.clone(),
                canonical_id: canonical_id.clone(),
                registration_error,
                position_error,
                orientation_error,
                energy: to_f64(inferred.fit.final_energy),
                iterations: inferred.fit.iterations,
                converged: inferred.fit.converged,
            });
        }
        out.push(FoldResult {
            fold,
            held_out,
            canonical_id,
            results,
        });
    }
    Ok(out)
}
