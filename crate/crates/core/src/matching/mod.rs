//! Target ↔ reference matching, lifting to 2D–3D correspondences and robust
//! pose-candidate estimation.

mod dense;
mod epnp;
mod frame;
mod lift;
mod ransac;

use serde::{Deserialize, Serialize};

pub use dense::{match_dense, DensePair};
pub use epnp::{dlt, epnp, reprojection_error};
pub use frame::{estimate_frame, FrameEstimate, FrameParams, FrameTarget};
pub use lift::lift_matches;
pub use ransac::{solve_pnp_ransac, RansacParams};

use crate::{Point2, Point3, Pose};

/// Target-image pixel ↔ model-frame point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match2D3D {
    pub u: Point2,
    #[serde(rename = "X")]
    pub x: Point3,
    pub similarity: f32,
}

/// Pose hypothesis from one reference view with its inlier matches.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseCandidate {
    /// Model → camera.
    pub pose: Pose,
    pub inliers: Vec<Match2D3D>,
    pub reproj_rmse: f64,
    pub reference_index: usize,
}
