#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shape_transfer::cpd::CpdParams;
use shape_transfer::geometry::{PointCloud, RigidParams};
use shape_transfer::inference::{EnergyOrientation, InferenceParams, ShapeBasis};
use shape_transfer::latent::{LatentSpace, Normalization};
use shape_transfer::pipeline::{train, TrainConfig, TrainOutput, TrainingSet};
use shape_transfer::synthetic::{training_set, DrillShape};

/// Registration settings that keep the drill-family fields smooth.
pub fn drill_cpd() -> CpdParams<f64> {
    CpdParams {
        beta: 0.2,
        lambda: 3000.0,
        sigma2: 1e-4,
        omega: 0.1,
        max_iters: 150,
        tol: 1e-5,
        update_sigma2: false,
    }
}

pub fn drill_inference() -> InferenceParams<f64> {
    InferenceParams {
        sigma2: 1e-4,
        orientation: EnergyOrientation::ObservedOuter,
        latent_prior: 10.0,
        ..Default::default()
    }
}

pub fn drill_set(n: usize, seed: u64, leaf: f64) -> (Vec<DrillShape>, TrainingSet<f64>) {
    let shapes = DrillShape::sample_family(n, seed);
    let set = training_set(&shapes, leaf).unwrap();
    (shapes, set)
}

pub fn drill_model(n: usize, leaf: f64) -> (Vec<DrillShape>, TrainingSet<f64>, TrainOutput<f64>) {
    let (shapes, set) = drill_set(n, 7, leaf);
    let config = TrainConfig {
        category: "drill".into(),
        cpd: drill_cpd(),
        ..Default::default()
    };
    let out = train(&set, 0, &config).unwrap();
    (shapes, set, out)
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> PointCloud<f64> {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// Latent space with random orthonormal components over `m` points.
pub fn random_latent(
    rng: &mut impl Rng,
    m: usize,
    q: usize,
    weight_scale: f64,
) -> LatentSpace<f64> {
    let p = 3 * m;
    let raw = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let l = raw.qr().q().transpose();
    let norm = Normalization {
        mean: DVector::from_fn(p, |_, _| rng.random_range(-weight_scale..weight_scale)),
        std: DVector::from_fn(p, |_, _| rng.random_range(0.5 * weight_scale..weight_scale)),
    };
    let variance = DVector::from_fn(q, |k, _| 1.0 / (k as f64 + 1.0));
    LatentSpace::new(l, norm, variance).unwrap()
}

pub struct RandomModel {
    pub canonical: PointCloud<f64>,
    pub beta: f64,
    pub latent: LatentSpace<f64>,
    pub basis: ShapeBasis<f64>,
}

pub fn random_model(seed: u64, m: usize, q: usize) -> RandomModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical = random_cloud(&mut rng, m, 0.1);
    let beta = 0.05;
    let latent = random_latent(&mut rng, m, q, 0.002);
    let basis = ShapeBasis::new(&canonical, beta, &latent).unwrap();
    RandomModel {
        canonical,
        beta,
        latent,
        basis,
    }
}

pub fn random_theta(rng: &mut impl Rng, max_angle: f64, max_shift: f64) -> RigidParams<f64> {
    let axis = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let shift = Vector3::from_fn(|_, _| rng.random_range(-max_shift..max_shift));
    RigidParams::from_axis_angle(axis, rng.random_range(-max_angle..max_angle), shift)
}
