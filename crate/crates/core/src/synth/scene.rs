use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::models;
use crate::error::{Error, Result};
use crate::features::{
    AppearanceParams, FeatureMap, Mask, SymmetrySpec, SyntheticAppearance, SyntheticFeatureParams,
};
use crate::view_sampling::{render, DepthMap, RenderParams};
use crate::{CameraIntrinsics, Point3, Pose, Rotation, Vec3};

/// Everything needed to synthesize a sequence.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub model: Vec<Point3>,
    /// Robot base → camera (static camera).
    pub camera_to_base: Pose,
    pub intrinsics: CameraIntrinsics,
    /// End-effector poses in the robot base frame.
    pub trajectory: Vec<Pose>,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Descriptor field, including the optional appearance symmetry.
    pub appearance: AppearanceParams,
    pub feature_stride: usize,
    pub render: RenderParams,
    /// Seed for per-frame noise and outliers.
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::EmptyModel);
        }
        if self.trajectory.is_empty() {
            return Err(Error::Config(
                "trajectory must contain at least one pose".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config(format!(
                "outlier_fraction must lie in [0, 1], got {}",
                self.outlier_fraction
            )));
        }
        if self.feature_stride == 0 {
            return Err(Error::Config("feature_stride must be >= 1".into()));
        }
        if self.trajectory.iter().any(|p| !p.is_finite()) || !self.camera_to_base.is_finite() {
            return Err(Error::Config("non-finite pose in scene".into()));
        }
        self.intrinsics.validate()
    }

    pub fn symmetry(&self) -> Option<SymmetrySpec> {
        self.appearance.symmetry
    }
}

/// One synthesized observation with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub id: u64,
    pub depth: DepthMap,
    pub mask: Mask,
    pub features: FeatureMap,
    pub fk_pose: Pose,
    /// `camera_to_base ∘ fk_pose`.
    pub gt_camera_pose: Pose,
}

fn frame_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)
}

/// Renders every trajectory step and synthesizes its features.
pub fn generate_sequence(cfg: &SceneConfig) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let appearance = SyntheticAppearance::new(&cfg.model, &cfg.appearance)?;
    generate_with_appearance(cfg, &appearance)
}

/// [`generate_sequence`] with a prebuilt appearance (must come from
/// `cfg.model` and `cfg.appearance`).
pub fn generate_with_appearance(
    cfg: &SceneConfig,
    appearance: &SyntheticAppearance,
) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    cfg.trajectory
        .par_iter()
        .enumerate()
        .map(|(i, fk)| {
            let id = i as u64;
            let gt = cfg.camera_to_base.compose(fk);
            let view = render(&cfg.model, &gt, &cfg.intrinsics, &cfg.render)?;
            let params = SyntheticFeatureParams {
                stride: cfg.feature_stride,
                noise_sigma: cfg.noise_sigma,
                outlier_fraction: cfg.outlier_fraction,
                seed: frame_seed(cfg.seed, id),
            };
            let features = appearance.features(&view, &params);
            let mask = Mask::from_depth(&view.depth);
            Ok(SynthFrame {
                id,
                depth: view.depth,
                mask,
                features,
                fk_pose: *fk,
                gt_camera_pose: gt,
            })
        })
        .collect()
}

/// Smooth screw motion of the end effector in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryParams {
    pub n_frames: usize,
    /// Base-frame position at mid-sequence, meters.
    pub center: [f64; 3],
    /// Initial orientation as a rotation vector, radians.
    pub start_rotation: [f64; 3],
    /// Base-frame rotation axis.
    pub axis: [f64; 3],
    /// Total rotation over the sequence, degrees.
    pub total_angle_deg: f64,
    /// Total translation over the sequence, meters.
    pub translation: [f64; 3],
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            n_frames: 300,
            center: [0.5, 0.0, 0.3],
            start_rotation: [2.0, 0.0, 0.0],
            axis: [1.0, 0.35, 0.6],
            total_angle_deg: 160.0,
            translation: [0.04, 0.0, 0.03],
        }
    }
}

pub fn screw_trajectory(p: &TrajectoryParams) -> Vec<Pose> {
    let start = Rotation::from_rotation_vector(Vec3::from_array(p.start_rotation));
    let axis = Vec3::from_array(p.axis);
    let span = (p.n_frames.max(2) - 1) as f64;
    (0..p.n_frames)
        .map(|i| {
            let s = i as f64 / span;
            let r = Rotation::from_axis_angle(axis, (p.total_angle_deg * s).to_radians())
                .compose(&start);
            let t = Vec3::from_array(p.center) + Vec3::from_array(p.translation) * (s - 0.5);
            Pose::new(r, t)
        })
        .collect()
}

/// Camera looking along the base +y axis at `target`, `distance` away
/// (base z up maps to image up).
pub fn side_camera(target: [f64; 3], distance: f64) -> Pose {
    let r = Rotation::from_matrix(&[[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]);
    let c = r.rotate(Vec3::from_array(target));
    Pose::new(r, Vec3::new(0.0, 0.0, distance) - c)
}

/// Default benchmark camera: 160×120 pixels, focal length 220 px.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 220.0,
        fy: 220.0,
        cx: 79.5,
        cy: 59.5,
        width: 160,
        height: 120,
    }
}

/// Scene description as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneFile {
    /// Built-in model name (`gripper`, `cube`, `l_shape`) or a model file path
    /// relative to the scene file.
    pub model: String,
    pub seed: u64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Half-turn appearance symmetry about this model axis.
    pub symmetry_axis: Option<[f64; 3]>,
    pub feature_dim: usize,
    pub feature_stride: usize,
    pub appearance_seed: u64,
    pub smooth_weight: f64,
    pub length_scale: f64,
    pub camera_distance: f64,
    pub intrinsics: CameraIntrinsics,
    pub camera_to_base: Option<Pose>,
    pub trajectory: TrajectoryParams,
    pub render: RenderParams,
}

impl Default for SceneFile {
    fn default() -> Self {
        let appearance = AppearanceParams::default();
        Self {
            model: "gripper".into(),
            seed: 0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            symmetry_axis: None,
            feature_dim: appearance.dim,
            feature_stride: 1,
            appearance_seed: appearance.seed,
            smooth_weight: appearance.smooth_weight,
            length_scale: appearance.length_scale,
            camera_distance: 0.55,
            intrinsics: default_intrinsics(),
            camera_to_base: None,
            trajectory: TrajectoryParams::default(),
            render: RenderParams::default(),
        }
    }
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves the model and assembles a [`SceneConfig`]; relative model
    /// paths resolve against `base_dir`.
    pub fn to_config(&self, base_dir: &Path) -> Result<SceneConfig> {
        if self.trajectory.n_frames == 0 {
            return Err(Error::Config("trajectory.n_frames must be >= 1".into()));
        }
        let model = match models::builtin(&self.model) {
            Some(m) => m,
            None => models::load_model(&base_dir.join(&self.model))?,
        };
        let symmetry = self
            .symmetry_axis
            .map(|a| SymmetrySpec::half_turn(Vec3::from_array(a)));
        let cfg = SceneConfig {
            model,
            camera_to_base: self
                .camera_to_base
                .unwrap_or_else(|| side_camera(self.trajectory.center, self.camera_distance)),
            intrinsics: self.intrinsics,
            trajectory: screw_trajectory(&self.trajectory),
            noise_sigma: self.noise_sigma,
            outlier_fraction: self.outlier_fraction,
            appearance: AppearanceParams {
                dim: self.feature_dim,
                seed: self.appearance_seed,
                smooth_weight: self.smooth_weight,
                length_scale: self.length_scale,
                symmetry,
            },
            feature_stride: self.feature_stride,
            render: self.render,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-frame record of a sequence manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: u64,
    pub depth_path: String,
    pub mask_path: String,
    pub feature_path: String,
    pub fk_pose: Pose,
    pub gt_pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub intrinsics: CameraIntrinsics,
    /// Ground truth, for evaluation only.
    pub camera_to_base: Option<Pose>,
    pub frames: Vec<FrameRecord>,
}

impl SequenceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.intrinsics.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads the data files of one frame; paths resolve against `base_dir`.
    pub fn load_frame(&self, base_dir: &Path, index: usize) -> Result<SynthFrame> {
        let r = &self.frames[index];
        let resolve = |p: &str| -> PathBuf { base_dir.join(p) };
        let depth = DepthMap::load(&resolve(&r.depth_path))?;
        let mask = Mask::load(&resolve(&r.mask_path))?;
        let features = FeatureMap::load(&resolve(&r.feature_path))?;
        let gt_camera_pose = r
            .gt_pose
            .or_else(|| self.camera_to_base.map(|c| c.compose(&r.fk_pose)))
            .unwrap_or_default();
        Ok(SynthFrame {
            id: r.id,
            depth,
            mask,
            features,
            fk_pose: r.fk_pose,
            gt_camera_pose,
        })
    }
}

pub const SEQUENCE_MANIFEST: &str = "manifest.json";

/// Writes frame files and `manifest.json` into `dir`.
pub fn save_sequence(
    dir: &Path,
    cfg: &SceneConfig,
    frames: &[SynthFrame],
) -> Result<SequenceManifest> {
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let depth_path = format!("depth/{:05}.dmap", f.id);
        let mask_path = format!("mask/{:05}.mask", f.id);
        let feature_path = format!("features/{:05}.fmap", f.id);
        f.depth.save(&dir.join(&depth_path))?;
        f.mask.save(&dir.join(&mask_path))?;
        f.features.save(&dir.join(&feature_path))?;
        records.push(FrameRecord {
            id: f.id,
            depth_path,
            mask_path,
            feature_path,
            fk_pose: f.fk_pose,
            gt_pose: Some(f.gt_camera_pose),
        });
    }
    let manifest = SequenceManifest {
        intrinsics: cfg.intrinsics,
        camera_to_base: Some(cfg.camera_to_base),
        frames: records,
    };
    manifest.save(&dir.join(SEQUENCE_MANIFEST))?;
    Ok(manifest)
}
