//! Training-free end-effector 6D pose estimation.
//!
//! A CAD-derived model point set is rendered from a sphere of viewpoints into
//! templates. Each target frame is matched against its most similar templates
//! (bag-of-words retrieval, dense mutual-nearest-neighbor descriptor matching),
//! lifted to 2D–3D correspondences and solved with EPnP inside RANSAC. A memory
//! pool of past frames, forward-kinematics priors, symmetry disambiguation and a
//! Cauchy-robust joint refinement over keyframes then sharpen the per-frame
//! estimate.
//!
//! Geometry, robust losses and metrics are generic over [`Real`] (`f32`/`f64`);
//! the aliases below fix the pipeline scalar to `f64`.

// `!(x > 0)` comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod features;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod scalar;
pub mod spatial;
pub mod synth;
pub mod templates;
pub mod temporal;
pub mod view_sampling;

mod codec;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type Point3 = geometry::Point3<f64>;
pub type Point2 = geometry::Point2<f64>;
pub type Rotation = geometry::Rotation<f64>;
pub type Pose = geometry::Pose<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
