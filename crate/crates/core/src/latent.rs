//! Linear latent space over deformation weights.
//!
//! Each training field's M×3 weight matrix is flattened row-major into a
//! p = 3M vector; the stacked vectors are standardised column-wise and a
//! q-dimensional principal subspace is extracted by EM for PCA. Latent
//! coordinates map linearly back to weight matrices.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cpd::DeformationField;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Column statistics of the raw design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T: Real> {
    pub mean: DVector<T>,
    /// Strictly positive; zero-variance columns carry 1.
    pub std: DVector<T>,
}

impl<T: Real> Normalization<T> {
    pub fn normalize(&self, raw: &DVector<T>) -> DVector<T> {
        (raw - &self.mean).component_div(&self.std)
    }

    pub fn denormalize(&self, y: &DVector<T>) -> DVector<T> {
        y.component_mul(&self.std) + &self.mean
    }
}

/// Row-major flattening of an M×3 weight matrix.
pub fn flatten_weights<T: Real>(weights: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(weights.len(), weights.transpose().iter().copied())
}

pub fn unflatten_weights<T: Real>(y: &DVector<T>) -> DMatrix<T> {
    assert_eq!(y.len() % 3, 0, "flattened weights must have length 3M");
    DMatrix::from_row_slice(y.len() / 3, 3, y.as_slice())
}

pub fn flatten_field<T: Real>(field: &DeformationField<T>) -> DVector<T> {
    flatten_weights(field.weights())
}

/// Stacks flattened fields into a standardised n×p design matrix.
///
/// Standard deviations are population (divide by n) so every
/// non-degenerate column has unit variance under the same convention.
pub fn build_design_matrix<T: Real>(
    fields: &[DeformationField<T>],
) -> Result<(DMatrix<T>, Normalization<T>)> {
    if fields.len() < 2 {
        return Err(Error::invalid("design matrix needs at least two fields"));
    }
    let m = fields[0].canonical().len();
    if let Some(i) = fields.iter().position(|f| f.canonical().len() != m) {
        return Err(Error::invalid(format!(
            "field {i} has {} canonical points, expected {m}",
            fields[i].canonical().len()
        )));
    }
    let rows: Vec<DVector<T>> = fields.iter().map(flatten_field).collect();
    let raw = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
    Ok(standardise(&raw))
}

pub(crate) fn standardise<T: Real>(raw: &DMatrix<T>) -> (DMatrix<T>, Normalization<T>) {
    let n = lit::<T>(raw.nrows() as f64);
    let mean = raw.row_mean().transpose();
    let mut std = DVector::zeros(raw.ncols());
    let mut y = raw.clone();
    for (c, mut col) in y.column_iter_mut().enumerate() {
        let var = col
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - mean[c]) * (v - mean[c]))
            / n;
        let s = var.sqrt();
        // Constant columns (up to rounding in the mean) carry no shape
        // information; they get unit scale and are zeroed exactly.
        let degenerate = s == T::zero() || s <= lit::<T>(1e-10) * mean[c].abs();
        std[c] = if degenerate { T::one() } else { s };
        for v in col.iter_mut() {
            *v = if degenerate {
                T::zero()
            } else {
                (*v - mean[c]) / s
            };
        }
    }
    (y, Normalization { mean, std })
}

/// Smallest `q` whose leading singular values carry `fraction` of the
/// total energy `Σσ²`. Returns 1 for an all-zero matrix.
pub fn choose_q<T: Real>(y: &DMatrix<T>, fraction: T) -> Result<usize> {
    if !(fraction > T::zero() && fraction <= T::one()) {
        return Err(Error::invalid("variance fraction must lie in (0, 1]"));
    }
    // Squared singular values are the eigenvalues of the smaller Gram matrix.
    let gram = if y.nrows() <= y.ncols() {
        y * y.transpose()
    } else {
        y.transpose() * y
    };
    let mut sv: Vec<T> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|s| s.max(T::zero()))
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let total = sv.iter().fold(T::zero(), |a, &b| a + b);
    if total == T::zero() {
        return Ok(1);
    }
    let target = fraction * total * (T::one() - lit(1e-12));
    let mut acc = T::zero();
    for (k, s) in sv.iter().enumerate() {
        acc += *s;
        if acc >= target {
            return Ok(k + 1);
        }
    }
    Ok(sv.len().max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaEmOptions {
    pub max_iters: usize,
    /// Stop once the Frobenius distance between successive orthonormal
    /// subspace bases drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PcaEmOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-12,
            seed: 0,
        }
    }
}

/// Result of [`pca_em`]. Rows of `components` are orthonormal principal
/// directions sorted by decreasing variance; `latents = Y·componentsᵀ`.
#[derive(Debug, Clone)]
pub struct PcaEm<T: Real> {
    pub components: DMatrix<T>,
    pub latents: DMatrix<T>,
    pub explained_variance: DVector<T>,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_RESTARTS: usize = 3;

/// EM for PCA on a column-centred `Y` (n×p).
///
/// Alternates `X = Y·Lᵀ(LLᵀ)⁻¹` and `L = (XᵀX)⁻¹XᵀY` from a seeded
/// Gaussian start, then rotates the converged basis onto the principal
/// axes within the subspace.
pub fn pca_em<T: Real>(y: &DMatrix<T>, q: usize, options: &PcaEmOptions) -> Result<PcaEm<T>> {
    let (n, p) = y.shape();
    if q == 0 || q > p || (n > 1 && q > n - 1) || n < 2 {
        return Err(Error::invalid(format!(
            "latent dimension {q} must satisfy 1 ≤ q ≤ min(n−1, p) for a {n}×{p} design matrix"
        )));
    }
    if y.iter().all(|v| *v == T::zero()) {
        // Every direction is equally (un)informative; keep a fixed basis.
        let components = orthonormal_rows(&random_gaussian(q, p, options.seed));
        return Ok(PcaEm {
            latents: DMatrix::zeros(n, q),
            explained_variance: DVector::zeros(q),
            components,
            iterations: 0,
            converged: true,
        });
    }
    let tol = lit::<T>(options.tol);
    for restart in 0..=MAX_RESTARTS {
        let seed = options.seed.wrapping_add(restart as u64);
        let mut l = random_gaussian::<T>(q, p, seed);
        let mut basis = orthonormal_rows(&l);
        let mut outcome = None;
        for iter in 1..=options.max_iters {
            let Some(x) = e_step(y, &l) else { break };
            let Some(next) = m_step(y, &x) else { break };
            let next_basis = orthonormal_rows(&next);
            let change = subspace_change(&basis, &next_basis);
            l = next;
            basis = next_basis;
            if change < tol {
                outcome = Some((iter, true));
                break;
            }
            if iter == options.max_iters {
                outcome = Some((iter, false));
            }
        }
        match outcome {
            Some((iterations, converged)) => {
                if !converged {
                    log::warn!("PCA-EM hit {iterations} iterations before converging");
                }
                return Ok(principal_rotation(y, &basis, iterations, converged));
            }
            None => log::debug!("PCA-EM restart {restart}: singular normal equations"),
        }
    }
    Err(Error::Numerical(format!(
        "PCA-EM normal equations singular after {MAX_RESTARTS} restarts"
    )))
}

fn random_gaussian<T: Real>(rows: usize, cols: usize, seed: u64) -> DMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        lit(v)
    })
}

/// `X = Y·Lᵀ(LLᵀ)⁻¹`.
fn e_step<T: Real>(y: &DMatrix<T>, l: &DMatrix<T>) -> Option<DMatrix<T>> {
    let gram = l * l.transpose();
    let chol = gram.cholesky()?;
    let rhs = l * y.transpose();
    Some(chol.solve(&rhs).transpose())
}

/// `L = (XᵀX)⁻¹XᵀY`.
fn m_step<T: Real>(y: &DMatrix<T>, x: &DMatrix<T>) -> Option<DMatrix<T>> {
    let gram = x.transpose() * x;
    let chol = gram.cholesky()?;
    let next = chol.solve(&(x.transpose() * y));
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// Orthonormal basis (as rows) of the row space of `l`.
pub(crate) fn orthonormal_rows<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let q = l.nrows();
    let qr = l.transpose().qr();
    let basis = qr.q();
    basis.columns(0, q).transpose()
}

/// `‖B₂ − (B₂B₁ᵀ)B₁‖_F` for orthonormal row bases; bounds the sine of the
/// largest principal angle.
pub(crate) fn subspace_change<T: Real>(b1: &DMatrix<T>, b2: &DMatrix<T>) -> T {
    let proj = (b2 * b1.transpose()) * b1;
    (b2 - proj).norm()
}

fn principal_rotation<T: Real>(
    y: &DMatrix<T>,
    basis: &DMatrix<T>,
    iterations: usize,
    converged: bool,
) -> PcaEm<T> {
    let z = y * basis.transpose();
    let eig = (z.transpose() * &z).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let v = DMatrix::from_columns(
        &order
            .iter()
            .map(|&k| eig.eigenvectors.column(k).into_owned())
            .collect::<Vec<_>>(),
    );
    let components = v.transpose() * basis;
    let latents = y * components.transpose();
    let dof = lit::<T>((y.nrows() - 1).max(1) as f64);
    let explained_variance = DVector::from_iterator(
        order.len(),
        order
            .iter()
            .map(|&k| eig.eigenvalues[k].max(T::zero()) / dof),
    );
    PcaEm {
        components,
        latents,
        explained_variance,
        iterations,
        converged,
    }
}

/// Learned latent space of deformation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpace<T: Real> {
    components: DMatrix<T>,
    normalization: Normalization<T>,
    explained_variance: DVector<T>,
}

/// Latent coordinates.
pub type LatentVector<T> = DVector<T>;

impl<T: Real> LatentSpace<T> {
    pub fn new(
        components: DMatrix<T>,
        normalization: Normalization<T>,
        explained_variance: DVector<T>,
    ) -> Result<Self> {
        let (q, p) = components.shape();
        if q == 0 || p == 0 || p % 3 != 0 {
            return Err(Error::invalid(format!(
                "component matrix {q}×{p} is malformed"
            )));
        }
        if normalization.mean.len() != p || normalization.std.len() != p {
            return Err(Error::invalid(
                "normalization length differs from component width",
            ));
        }
        if explained_variance.len() != q {
            return Err(Error::invalid("explained variance length differs from q"));
        }
        if normalization.std.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::invalid("normalization std must be positive"));
        }
        Ok(Self {
            components,
            normalization,
            explained_variance,
        })
    }

    pub fn from_pca(pca: &PcaEm<T>, normalization: Normalization<T>) -> Result<Self> {
        Self::new(
            pca.components.clone(),
            normalization,
            pca.explained_variance.clone(),
        )
    }

    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    pub fn p(&self) -> usize {
        self.components.ncols()
    }

    /// Canonical point count `M = p / 3`.
    pub fn point_count(&self) -> usize {
        self.p() / 3
    }

    /// q×p matrix `L`.
    pub fn components(&self) -> &DMatrix<T> {
        &self.components
    }

    pub fn normalization(&self) -> &Normalization<T> {
        &self.normalization
    }

    pub fn explained_variance(&self) -> &DVector<T> {
        &self.explained_variance
    }

    /// `x = y·Lᵀ(LLᵀ)⁻¹` for a normalised p-vector `y`.
    pub fn encode_normalized(&self, y: &DVector<T>) -> LatentVector<T> {
        let l = &self.components;
        let gram = l * l.transpose();
        let rhs = l * y;
        match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .lu()
                .solve(&rhs)
                .expect("latent basis has full row rank"),
        }
    }

    /// Encodes raw (unnormalised) M×3 weights.
    pub fn encode_weights(&self, weights: &DMatrix<T>) -> LatentVector<T> {
        self.encode_normalized(&self.normalization.normalize(&flatten_weights(weights)))
    }

    pub fn encode_field(&self, field: &DeformationField<T>) -> LatentVector<T> {
        self.encode_weights(field.weights())
    }

    /// `x·L`, still in normalised coordinates.
    pub fn decode_normalized(&self, x: &LatentVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.q(), "latent vector has wrong length");
        self.components.tr_mul(x)
    }

    /// Denormalised M×3 weights for `x`; `x = 0` gives the mean training
    /// weights.
    pub fn decode_weights(&self, x: &LatentVector<T>) -> DMatrix<T> {
        unflatten_weights(&self.normalization.denormalize(&self.decode_normalized(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;

    fn field(weights: &[f64]) -> DeformationField<f64> {
        let m = weights.len() / 3;
        let pts: Vec<[f64; 3]> = (0..m).map(|i| [i as f64, 0.0, 0.0]).collect();
        DeformationField::new(
            PointCloud::from_arrays(&pts).unwrap(),
            DMatrix::from_row_slice(m, 3, weights),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn flattening_is_row_major() {
        let f = field(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(
            flatten_field(&f).as_slice(),
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
        assert_eq!(unflatten_weights(&flatten_field(&f)), *f.weights());
        assert!(flatten_field(&field(&[0.0; 6])).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_fields_give_zero_design() {
        let f = field(&[0.3, -0.1, 0.7, 1.0, 2.0, 3.0]);
        let (y, norm) = build_design_matrix(&[f.clone(), f]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert!(norm.std.iter().all(|s| *s == 1.0));
        assert_eq!(choose_q(&y, 0.95).unwrap(), 1);
    }

    #[test]
    fn mismatched_fields_rejected() {
        let err = build_design_matrix(&[field(&[0.0; 6]), field(&[0.0; 3])]).unwrap_err();
        assert!(err.to_string().contains("field 1"));
    }

    #[test]
    fn choose_q_isotropic() {
        for k in [4usize, 7, 10, 20] {
            let y = DMatrix::<f64>::identity(k, k);
            let expected = (0.95 * k as f64).ceil() as usize;
            assert_eq!(choose_q(&y, 0.95).unwrap(), expected, "k = {k}");
        }
        let rank1 = DMatrix::from_fn(5, 8, |i, j| (i as f64 - 2.0) * (j as f64 + 1.0));
        assert_eq!(choose_q(&rank1, 0.95).unwrap(), 1);
        assert!(choose_q(&rank1, 0.0).is_err());
    }

    #[test]
    fn rank_one_exactly_reconstructed() {
        let y = DMatrix::from_fn(6, 9, |i, j| (i as f64 - 2.5) * ((j as f64) * 0.3).sin());
        let pca = pca_em(&y, 1, &PcaEmOptions::default()).unwrap();
        let recon = &pca.latents * &pca.components;
        assert!((recon - &y).norm() < 1e-8);
    }

    #[test]
    fn rejects_oversized_q() {
        let y = DMatrix::<f64>::from_fn(4, 10, |i, j| (i * j) as f64);
        assert!(pca_em(&y, 4, &PcaEmOptions::default()).is_err());
        assert!(pca_em(&y, 0, &PcaEmOptions::default()).is_err());
    }

    #[test]
    fn zero_latent_decodes_to_mean() {
        let fields = [
            field(&[1.0, 0.0, 0.0, 2.0, 1.0, 0.0]),
            field(&[3.0, 0.0, 2.0, 0.0, 1.0, 4.0]),
            field(&[2.0, 1.0, 1.0, 1.0, 1.0, 2.0]),
        ];
        let (y, norm) = build_design_matrix(&fields).unwrap();
        let pca = pca_em(&y, 1, &PcaEmOptions::default()).unwrap();
        let space = LatentSpace::from_pca(&pca, norm).unwrap();
        let w = space.decode_weights(&DVector::zeros(1));
        assert!((w[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((w[(1, 2)] - 2.0).abs() < 1e-12);
        let zero = space.encode_normalized(&DVector::zeros(6));
        assert!(zero.iter().all(|v| *v == 0.0));
    }
}
