//! Robust single-pose refinement over multiple keyframe observations.

mod lm;
mod loss;

pub(crate) use lm::refine_reprojection;
pub use lm::{
    refine_pose, refine_pose_traced, write_trace, IterationTrace, OptimizeOptions, OptimizeResult,
};
pub use loss::{
    cauchy, cauchy_derivative, cauchy_weight, jacobian_2d, jacobian_3d, loss_2d, loss_3d,
    residual_2d, residual_3d, retract, total_loss, Observation, RobustLossParams, MIN_LOSS_DEPTH,
};
