//! Synthetic scenes: built-in models, screw trajectories and sequences of
//! depth, mask and descriptor frames with ground truth.

pub mod models;
mod scene;

pub use scene::{
    default_intrinsics, generate_sequence, generate_with_appearance, save_sequence,
    screw_trajectory, side_camera, FrameRecord, SceneConfig, SceneFile, SequenceManifest,
    SynthFrame, TrajectoryParams, SEQUENCE_MANIFEST,
};
