//! Category-level shape spaces for grasp transfer.
//!
//! A category is modelled by a canonical point cloud plus a low-dimensional
//! latent space of Coherent Point Drift deformation fields learned from
//! training instances. Novel (possibly partially observed) instances are
//! fitted in that latent space together with a rigid alignment, and grasp
//! control poses aggregated in the canonical frame are warped onto them.
//!
//! Modules, bottom-up:
//!
//! * [`geometry`]: point clouds, meshes, rigid transforms, PLY/PCD IO,
//!   voxel filtering and virtual scanning.
//! * [`cpd`]: Gaussian-kernel deformation fields and the EM registration.
//! * [`latent`]: design matrix, PCA-EM and latent encode/decode.
//! * [`inference`]: joint latent + rigid fitting to an observation.
//! * [`transfer`]: control poses, descriptor warping, motion sampling and
//!   the latent-to-descriptor regressor.
//! * [`pipeline`]: training, inference and cross-validation orchestration,
//!   and the persisted [`pipeline::CategoryModel`].
//!
//! All numeric code is generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64`, which is what the CLI and model files use.

// Negated comparisons such as `!(x > 0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cpd;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod latent;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type PointCloudF64 = geometry::PointCloud<f64>;
pub type TriangleMeshF64 = geometry::TriangleMesh<f64>;
pub type RigidParamsF64 = geometry::RigidParams<f64>;
pub type CameraF64 = geometry::Camera<f64>;
pub type CpdParamsF64 = cpd::CpdParams<f64>;
pub type DeformationFieldF64 = cpd::DeformationField<f64>;
pub type LatentSpaceF64 = latent::LatentSpace<f64>;
pub type ShapeFitF64 = inference::ShapeFit<f64>;
pub type InferenceParamsF64 = inference::InferenceParams<f64>;
pub type ControlPoseF64 = transfer::ControlPose<f64>;
pub type GraspDescriptorF64 = transfer::GraspDescriptor<f64>;
pub type DescriptorRegressorF64 = transfer::DescriptorRegressor<f64>;
pub type CategoryModelF64 = pipeline::CategoryModel<f64>;
pub type TrainConfigF64 = pipeline::TrainConfig<f64>;

pub type PointCloudF32 = geometry::PointCloud<f32>;
pub type DeformationFieldF32 = cpd::DeformationField<f32>;
pub type RigidParamsF32 = geometry::RigidParams<f32>;
