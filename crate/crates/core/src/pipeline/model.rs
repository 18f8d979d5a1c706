use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cpd::{CpdParams, DeformationField};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::inference::ShapeBasis;
use crate::latent::{LatentSpace, LatentVector, Normalization};
use crate::scalar::{lit, to_f64, Real};
use crate::transfer::DescriptorRegressor;

/// Version written into every model file.
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to infer shapes and grasps for one object category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModel<T: Real> {
    pub category: String,
    /// Identifier of the training instance used as the template.
    pub canonical_id: String,
    pub canonical: PointCloud<T>,
    pub cpd_params: CpdParams<T>,
    pub latent: LatentSpace<T>,
    pub regressor: DescriptorRegressor<T>,
    /// Training-instance identifiers, sorted.
    pub provenance: Vec<String>,
}

impl<T: Real> CategoryModel<T> {
    /// Checks the cross-component shape invariants.
    pub fn validate(&self) -> Result<()> {
        if self.latent.p() != 3 * self.canonical.len() {
            return Err(Error::Model(format!(
                "latent width {} does not match {} canonical points",
                self.latent.p(),
                self.canonical.len()
            )));
        }
        if self.regressor.weights().nrows() != self.latent.q() + 1 {
            return Err(Error::Model(format!(
                "regressor expects {} inputs but the latent space has q = {}",
                self.regressor.weights().nrows(),
                self.latent.q()
            )));
        }
        self.cpd_params.validate()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.q()
    }

    /// Deformation field for latent coordinates `x`.
    pub fn decode(&self, x: &LatentVector<T>) -> Result<DeformationField<T>> {
        if x.len() != self.latent.q() {
            return Err(Error::invalid(format!(
                "latent vector has length {}, expected {}",
                x.len(),
                self.latent.q()
            )));
        }
        DeformationField::new(
            self.canonical.clone(),
            self.latent.decode_weights(x),
            self.cpd_params.beta,
        )
    }

    /// Precomputed linear shape model used by inference.
    pub fn shape_basis(&self) -> Result<ShapeBasis<T>> {
        ShapeBasis::new(&self.canonical, self.cpd_params.beta, &self.latent)
    }

    pub fn to_json(&self) -> String {
        let p = &self.cpd_params;
        let norm = self.latent.normalization();
        let canonical = DMatrix::from_fn(self.canonical.len(), 3, |i, j| {
            self.canonical.points()[i][j]
        });
        let doc = ModelDoc {
            format_version: FORMAT_VERSION,
            category: self.category.clone(),
            canonical_id: self.canonical_id.clone(),
            provenance: self.provenance.clone(),
            cpd: CpdDoc {
                beta: to_f64(p.beta),
                lambda: to_f64(p.lambda),
                sigma2: to_f64(p.sigma2),
                omega: to_f64(p.omega),
                max_iters: p.max_iters,
                tol: to_f64(p.tol),
                update_sigma2: p.update_sigma2,
            },
            canonical: ArrayDoc::from_matrix(&canonical),
            latent: LatentDoc {
                components: ArrayDoc::from_matrix(self.latent.components()),
                mean: ArrayDoc::from_vector(&norm.mean),
                std: ArrayDoc::from_vector(&norm.std),
                explained_variance: ArrayDoc::from_vector(self.latent.explained_variance()),
            },
            regressor: RegressorDoc {
                weights: ArrayDoc::from_matrix(self.regressor.weights()),
                ridge: to_f64(self.regressor.ridge()),
                training_residual: to_f64(self.regressor.training_residual()),
                labels: self.regressor.labels().to_vec(),
            },
        };
        serde_json::to_string_pretty(&doc).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let canonical = doc.canonical.to_matrix::<T>("canonical")?;
        if canonical.ncols() != 3 {
            return Err(Error::Model("canonical points must have 3 columns".into()));
        }
        let canonical = PointCloud::new(
            canonical
                .row_iter()
                .map(|r| Vector3::new(r[0], r[1], r[2]))
                .collect(),
        )
        .map_err(|e| Error::Model(format!("canonical: {e}")))?;
        let latent = LatentSpace::new(
            doc.latent.components.to_matrix("latent.components")?,
            Normalization {
                mean: doc.latent.mean.to_vector("latent.mean")?,
                std: doc.latent.std.to_vector("latent.std")?,
            },
            doc.latent
                .explained_variance
                .to_vector("latent.explained_variance")?,
        )
        .map_err(|e| Error::Model(e.to_string()))?;
        let regressor = DescriptorRegressor::from_parts(
            doc.regressor.weights.to_matrix("regressor.weights")?,
            lit(doc.regressor.ridge),
            lit(doc.regressor.training_residual),
            doc.regressor.labels,
        )
        .map_err(|e| Error::Model(e.to_string()))?;
        let c = &doc.cpd;
        let model = Self {
            category: doc.category,
            canonical_id: doc.canonical_id,
            canonical,
            cpd_params: CpdParams {
                beta: lit(c.beta),
                lambda: lit(c.lambda),
                sigma2: lit(c.sigma2),
                omega: lit(c.omega),
                max_iters: c.max_iters,
                tol: lit(c.tol),
                update_sigma2: c.update_sigma2,
            },
            latent,
            regressor,
            provenance: doc.provenance,
        };
        model.validate().map_err(|e| match e {
            Error::Model(_) => e,
            other => Error::Model(other.to_string()),
        })?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    category: String,
    canonical_id: String,
    provenance: Vec<String>,
    cpd: CpdDoc,
    canonical: ArrayDoc,
    latent: LatentDoc,
    regressor: RegressorDoc,
}

#[derive(Serialize, Deserialize)]
struct CpdDoc {
    beta: f64,
    lambda: f64,
    sigma2: f64,
    omega: f64,
    max_iters: usize,
    tol: f64,
    update_sigma2: bool,
}

#[derive(Serialize, Deserialize)]
struct LatentDoc {
    components: ArrayDoc,
    mean: ArrayDoc,
    std: ArrayDoc,
    explained_variance: ArrayDoc,
}

#[derive(Serialize, Deserialize)]
struct RegressorDoc {
    weights: ArrayDoc,
    ridge: f64,
    training_residual: f64,
    labels: Vec<String>,
}

/// Row-major little-endian `f64` payload.
#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    rows: usize,
    cols: usize,
    data: String,
}

impl ArrayDoc {
    fn from_matrix<T: Real>(m: &DMatrix<T>) -> Self {
        let mut bytes = Vec::with_capacity(m.len() * 8);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                bytes.extend_from_slice(&to_f64(m[(r, c)]).to_le_bytes());
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: STANDARD.encode(bytes),
        }
    }

    fn from_vector<T: Real>(v: &DVector<T>) -> Self {
        Self::from_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    fn to_matrix<T: Real>(&self, name: &str) -> Result<DMatrix<T>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Model(format!("{name}: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Model(format!(
                "{name}: {} bytes for a {}×{} array",
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        let values: Vec<T> = bytes
            .chunks_exact(8)
            .map(|c| lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("{name}: non-finite entry")));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &values))
    }

    fn to_vector<T: Real>(&self, name: &str) -> Result<DVector<T>> {
        if self.cols != 1 {
            return Err(Error::Model(format!("{name}: expected a column vector")));
        }
        let m = self.to_matrix::<T>(name)?;
        Ok(DVector::from_column_slice(m.as_slice()))
    }
}
