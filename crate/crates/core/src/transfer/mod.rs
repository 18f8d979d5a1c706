//! Grasp descriptors and their transfer between canonical and observed
//! object space.

mod pose;
mod regression;
mod sampling;
mod warp;

pub use pose::{ControlPose, GraspDescriptor, SpaceTag};
pub use regression::{infer_descriptor, train_regressor, DescriptorRegressor};
pub use sampling::{
    filter_constraints, random_quaternion, sample_grasp_motion, sample_grasp_motions, ApproachCone,
    PosePredicate, SamplingParams,
};
pub use warp::{
    canonical_support, descriptor_to_canonical, descriptor_to_observed, inverse_deform,
    pose_to_canonical, to_robot_frame, warp_pose, InverseDeformer, BASIS_EPSILON, SUPPORT_SIZE,
};
