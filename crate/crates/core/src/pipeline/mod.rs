//! Training and inference orchestration and the persisted category model.

mod dataset;
mod eval;
mod model;
mod train;

pub use dataset::{load_training_set, save_training_set};
pub use eval::{
    cross_validate, cross_validate_with, cross_validation_folds, descriptor_errors,
    mean_nearest_distance, EvalConfig, FoldResult, HeldOutResult,
};
pub use model::{CategoryModel, FORMAT_VERSION};
pub use train::{
    infer, infer_with_basis, select_canonical, train, CanonicalSelection, Inference,
    RegistrationReport, TrainConfig, TrainOutput, TrainingInstance, TrainingSet,
};
