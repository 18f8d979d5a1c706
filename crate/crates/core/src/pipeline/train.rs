use crate::cpd::{register, CpdParams, DeformationField};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::inference::{complete_shape, infer_shape, InferenceParams, ShapeBasis, ShapeFit};
use crate::latent::{build_design_matrix, choose_q, pca_em, LatentSpace, PcaEmOptions};
use crate::scalar::{lit, to_f64, Real};
use crate::transfer::{
    descriptor_to_canonical, descriptor_to_observed, infer_descriptor, train_regressor,
    GraspDescriptor, SpaceTag, SUPPORT_SIZE,
};

use super::CategoryModel;

/// One training shape with its demonstrated grasp.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance<T: Real> {
    pub id: String,
    pub cloud: PointCloud<T>,
    /// Observed-space descriptor.
    pub descriptor: GraspDescriptor<T>,
}

/// Training shapes, all in the category's canonical pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T: Real> {
    instances: Vec<TrainingInstance<T>>,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(instances: Vec<TrainingInstance<T>>) -> Result<Self> {
        if instances.len() < 2 {
            return Err(Error::invalid("training needs at least two instances"));
        }
        let poses = instances[0].descriptor.len();
        for inst in &instances {
            if inst.descriptor.len() != poses {
                return Err(Error::invalid(format!(
                    "descriptor of `{}` has {} poses, expected {poses}",
                    inst.id,
                    inst.descriptor.len()
                )));
            }
            if inst.descriptor.space != SpaceTag::Observed {
                return Err(Error::invalid(format!(
                    "descriptor of `{}` must be in observed space",
                    inst.id
                )));
            }
        }
        let mut ids: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate instance id `{}`", w[0])));
        }
        Ok(Self { instances })
    }

    pub fn instances(&self) -> &[TrainingInstance<T>] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    /// Always false: a set holds at least two instances.
    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    /// Subset without the given instance ids, in the original order.
    pub fn without(&self, held_out: &[String]) -> Result<Self> {
        Self::new(
            self.instances
                .iter()
                .filter(|i| !held_out.contains(&i.id))
                .cloned()
                .collect(),
        )
    }
}

/// How the template instance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonicalSelection {
    Index(usize),
    /// Register every candidate to all others and keep the one with the
    /// smallest summed final objective.
    MinEnergy,
}

pub fn select_canonical<T: Real>(
    clouds: &[PointCloud<T>],
    mode: CanonicalSelection,
    params: &CpdParams<T>,
) -> Result<usize> {
    if clouds.len() < 2 {
        return Err(Error::invalid(
            "canonical selection needs at least two instances",
        ));
    }
    match mode {
        CanonicalSelection::Index(i) if i < clouds.len() => Ok(i),
        CanonicalSelection::Index(i) => Err(Error::invalid(format!(
            "canonical index {i} out of range for {} instances",
            clouds.len()
        ))),
        CanonicalSelection::MinEnergy => {
            let mut best = (0, T::max_value().unwrap());
            for (c, template) in clouds.iter().enumerate() {
                let mut total = T::zero();
                for (j, target) in clouds.iter().enumerate() {
                    if j != c {
                        total += register(template, target, params)?.final_energy();
                    }
                }
                log::debug!("candidate {c}: summed energy {}", to_f64(total));
                if total < best.1 {
                    best = (c, total);
                }
            }
            Ok(best.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T: Real> {
    pub category: String,
    pub cpd: CpdParams<T>,
    /// Fraction of design-matrix energy the latent space must keep.
    pub variance_fraction: T,
    pub pca: PcaEmOptions,
    pub ridge: T,
    /// Canonical points used to pull each pose back.
    pub support_size: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            category: "category".into(),
            cpd: CpdParams::default(),
            variance_fraction: lit(0.95),
            pca: PcaEmOptions::default(),
            ridge: T::zero(),
            support_size: SUPPORT_SIZE,
        }
    }
}

/// Per-instance registration summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub id: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_energy: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T: Real> {
    pub model: CategoryModel<T>,
    /// One entry per non-canonical instance, in training-set order.
    pub registrations: Vec<RegistrationReport>,
    /// Registered fields in training-set order; the canonical's is zero.
    pub fields: Vec<DeformationField<T>>,
}

/// Learns a category model with `set.instances()[canonical]` as template.
///
/// The canonical instance contributes the zero field. It is left out of the
/// design matrix unless only one other instance exists, but always takes
/// part in the descriptor regression.
pub fn train<T: Real>(
    set: &TrainingSet<T>,
    canonical: usize,
    config: &TrainConfig<T>,
) -> Result<TrainOutput<T>> {
    config.cpd.validate()?;
    let instances = set.instances();
    if canonical >= instances.len() {
        return Err(Error::invalid(format!(
            "canonical index {canonical} out of range for {} instances",
            instances.len()
        )));
    }
    let template = &instances[canonical].cloud;

    let mut fields = Vec::with_capacity(instances.len());
    let mut registrations = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if i == canonical {
            fields.push(DeformationField::identity(
                template.clone(),
                config.cpd.beta,
            ));
            continue;
        }
        let reg =
            register(template, &inst.cloud, &config.cpd).map_err(|e| Error::Registration {
                id: inst.id.clone(),
                source: Box::new(e),
            })?;
        log::info!(
            "registered `{}`: {} iterations, energy {:.6}, converged {}",
            inst.id,
            reg.iterations,
            to_f64(reg.final_energy()),
            reg.converged
        );
        registrations.push(RegistrationReport {
            id: inst.id.clone(),
            iterations: reg.iterations,
            converged: reg.converged,
            final_energy: to_f64(reg.final_energy()),
            sigma2: to_f64(reg.sigma2),
        });
        fields.push(reg.field);
    }

    let design: Vec<DeformationField<T>> = if instances.len() > 2 {
        fields
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != canonical)
            .map(|(_, f)| f.clone())
            .collect()
    } else {
        fields.clone()
    };
    let (y, normalization) = build_design_matrix(&design)?;
    let q = choose_q(&y, config.variance_fraction)?;
    let pca = pca_em(&y, q, &config.pca)?;
    log::info!(
        "latent space: q = {q}, PCA-EM iterations {}",
        pca.iterations
    );
    let latent = LatentSpace::from_pca(&pca, normalization)?;

    let latents: Vec<_> = fields.iter().map(|f| latent.encode_field(f)).collect();
    let descriptors = instances
        .iter()
        .zip(&fields)
        .map(|(inst, field)| descriptor_to_canonical(&inst.descriptor, field, config.support_size))
        .collect::<Result<Vec<_>>>()?;
    let regressor = train_regressor(&latents, &descriptors, config.ridge)?;

    let mut provenance: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
    provenance.sort();
    let model = CategoryModel {
        category: config.category.clone(),
        canonical_id: instances[canonical].id.clone(),
        canonical: template.clone(),
        cpd_params: config.cpd,
        latent,
        regressor,
        provenance,
    };
    model.validate()?;
    Ok(TrainOutput {
        model,
        registrations,
        fields,
    })
}

/// Everything inferred for one observation.
#[derive(Debug, Clone)]
pub struct Inference<T: Real> {
    pub fit: ShapeFit<T>,
    /// Full canonical cloud deformed and moved onto the observation.
    pub completed: PointCloud<T>,
    /// Observed-space grasp descriptor.
    pub descriptor: GraspDescriptor<T>,
}

pub fn infer<T: Real>(
    model: &CategoryModel<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
) -> Result<Inference<T>> {
    infer_with_basis(model, &model.shape_basis()?, observed, params)
}

/// [`infer`] with a precomputed basis, for repeated queries on one model.
pub fn infer_with_basis<T: Real>(
    model: &CategoryModel<T>,
    basis: &ShapeBasis<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
) -> Result<Inference<T>> {
    let fit = infer_shape(basis, observed, params)?;
    let completed = complete_shape(basis, &fit)?;
    let canonical = infer_descriptor(&model.regressor, &fit.x);
    let descriptor = descriptor_to_observed(&canonical, &model.decode(&fit.x)?, &fit.theta)?;
    Ok(Inference {
        fit,
        completed,
        descriptor,
    })
}
