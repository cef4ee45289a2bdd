//! Memory pool, forward-kinematics prediction, keyframe selection and
//! symmetry-mode disambiguation.

mod modes;
mod pool;

pub use modes::{cluster_modes, disambiguate, Disambiguation, SymmetryModes};
pub use pool::{predict_pose, select_keyframes, MemoryPool, PoolEntry};
