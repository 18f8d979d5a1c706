//! Linear map from latent shape coordinates to canonical grasp descriptors.

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};

use super::{ControlPose, GraspDescriptor, SpaceTag};
use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::scalar::{lit, Real};

/// Values per pose in the flattened target: position then `(w, x, y, z)`.
const POSE_WIDTH: usize = 7;

/// Ridge-regularised affine regressor `x ↦ [1, x]·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRegressor<T: Real> {
    /// (q+1)×k; row 0 is the bias.
    weights: DMatrix<T>,
    ridge: T,
    training_residual: T,
    labels: Vec<String>,
}

impl<T: Real> DescriptorRegressor<T> {
    pub fn from_parts(
        weights: DMatrix<T>,
        ridge: T,
        training_residual: T,
        labels: Vec<String>,
    ) -> Result<Self> {
        if weights.nrows() < 1 || weights.ncols() != POSE_WIDTH * labels.len() || labels.is_empty()
        {
            return Err(Error::invalid(format!(
                "regressor weights {}×{} do not match {} poses",
                weights.nrows(),
                weights.ncols(),
                labels.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("regressor weights must be finite"));
        }
        Ok(Self {
            weights,
            ridge,
            training_residual,
            labels,
        })
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    /// Frobenius norm of the residual on the flattened training targets.
    pub fn training_residual(&self) -> T {
        self.training_residual
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Input latent width `q`.
    pub fn latent_dim(&self) -> usize {
        self.weights.nrows() - 1
    }

    pub fn pose_count(&self) -> usize {
        self.labels.len()
    }

    pub fn predict(&self, x: &LatentVector<T>) -> GraspDescriptor<T> {
        assert_eq!(x.len(), self.latent_dim(), "latent vector has wrong length");
        let mut features = DVector::zeros(x.len() + 1);
        features[0] = T::one();
        features.rows_mut(1, x.len()).copy_from(x);
        let flat = self.weights.tr_mul(&features);
        unflatten(&flat, &self.labels)
    }
}

/// Positions plus quaternions, each quaternion flipped into the hemisphere
/// of `reference` (when given).
fn flatten<T: Real>(
    descriptor: &GraspDescriptor<T>,
    reference: Option<&[UnitQuaternion<T>]>,
) -> DVector<T> {
    let mut out = DVector::zeros(POSE_WIDTH * descriptor.len());
    for (i, pose) in descriptor.poses.iter().enumerate() {
        let mut q = pose.quaternion().into_inner();
        if let Some(r) = reference {
            if q.coords.dot(&r[i].coords) < T::zero() {
                q = -q;
            }
        }
        let base = POSE_WIDTH * i;
        out.rows_mut(base, 3).copy_from(&pose.position);
        out[base + 3] = q.w;
        out[base + 4] = q.i;
        out[base + 5] = q.j;
        out[base + 6] = q.k;
    }
    out
}

fn unflatten<T: Real>(flat: &DVector<T>, labels: &[String]) -> GraspDescriptor<T> {
    let poses = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let b = POSE_WIDTH * i;
            let position = Vector3::new(flat[b], flat[b + 1], flat[b + 2]);
            let q = Quaternion::new(flat[b + 3], flat[b + 4], flat[b + 5], flat[b + 6]);
            let rotation = if q.norm() > lit(1e-12) {
                UnitQuaternion::new_normalize(q)
            } else {
                UnitQuaternion::identity()
            };
            ControlPose::from_quaternion(position, rotation, label.clone())
        })
        .collect();
    GraspDescriptor {
        poses,
        space: SpaceTag::Canonical,
    }
}

/// Fits `[1, xᵢ]·B ≈ flatten(ςᵢ)` by least squares with a ridge penalty on
/// the non-bias rows. Solved through a pseudo-inverse, so redundant or
/// constant features get zero weight instead of failing.
pub fn train_regressor<T: Real>(
    latents: &[LatentVector<T>],
    descriptors: &[GraspDescriptor<T>],
    ridge: T,
) -> Result<DescriptorRegressor<T>> {
    let n = latents.len();
    if n != descriptors.len() {
        return Err(Error::invalid(format!(
            "{n} latent vectors but {} descriptors",
            descriptors.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid("regression needs at least two samples"));
    }
    if !(ridge >= T::zero()) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    if descriptors.iter().any(|d| d.space != SpaceTag::Canonical) {
        return Err(Error::invalid(
            "regression targets must all be in canonical space",
        ));
    }
    let poses = descriptors[0].len();
    if let Some(i) = descriptors.iter().position(|d| d.len() != poses) {
        return Err(Error::invalid(format!(
            "descriptor {i} has {} poses, expected {poses}",
            descriptors[i].len()
        )));
    }
    let q = latents[0].len();
    if latents.iter().any(|x| x.len() != q) {
        return Err(Error::invalid("latent vectors differ in length"));
    }

    let reference: Vec<UnitQuaternion<T>> = descriptors[0]
        .poses
        .iter()
        .map(|p| p.quaternion())
        .collect();
    let k = POSE_WIDTH * poses;
    let mut targets = DMatrix::zeros(n, k);
    for (i, d) in descriptors.iter().enumerate() {
        targets
            .row_mut(i)
            .copy_from(&flatten(d, Some(&reference)).transpose());
    }
    let features = DMatrix::from_fn(
        n,
        q + 1,
        |i, j| if j == 0 { T::one() } else { latents[i][j - 1] },
    );

    let penalised = ridge > T::zero() && q > 0;
    let rows = if penalised { n + q } else { n };
    let mut a = DMatrix::zeros(rows, q + 1);
    let mut b = DMatrix::zeros(rows, k);
    a.rows_mut(0, n).copy_from(&features);
    b.rows_mut(0, n).copy_from(&targets);
    if penalised {
        let s = ridge.sqrt();
        for j in 0..q {
            a[(n + j, j + 1)] = s;
        }
    }
    let weights = least_squares(&a, &b)?;
    let residual = (&features * &weights - &targets).norm();
    DescriptorRegressor::from_parts(
        weights,
        ridge,
        residual,
        descriptors[0]
            .poses
            .iter()
            .map(|p| p.label.clone())
            .collect(),
    )
}

/// Minimum-norm solution of `min ‖A·X − B‖` through the eigen-decomposition
/// of `AᵀA`, discarding directions below a relative eigenvalue cutoff.
fn least_squares<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = a.tr_mul(a).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(T::zero(), |m, v| m.max(*v));
    if !max.is_finite() {
        return Err(Error::Numerical(
            "regression features are not finite".into(),
        ));
    }
    let cutoff = max * lit(1e-13);
    let v = &eig.eigenvectors;
    let vt_atb = v.tr_mul(&a.tr_mul(b));
    let mut scaled = vt_atb;
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let inv = if *lambda > cutoff {
            T::one() / *lambda
        } else {
            T::zero()
        };
        scaled.row_mut(k).scale_mut(inv);
    }
    Ok(v * scaled)
}

/// Canonical-space descriptor predicted for latent `x`.
pub fn infer_descriptor<T: Real>(
    regressor: &DescriptorRegressor<T>,
    x: &LatentVector<T>,
) -> GraspDescriptor<T> {
    regressor.predict(x)
}
