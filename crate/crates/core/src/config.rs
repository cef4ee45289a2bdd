//! Pipeline configuration, read from a sectioned TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AppearanceParams, SymmetrySpec};
use crate::matching::{FrameParams, RansacParams};
use crate::optimizer::{OptimizeOptions, RobustLossParams};
use crate::pipeline::{TrackerConfig, Variant};
use crate::templates::TemplateParams;
use crate::view_sampling::RenderParams;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CauchyConfig {
    pub c_2d: f64,
    pub c_3d: f64,
}

impl Default for CauchyConfig {
    fn default() -> Self {
        Self {
            c_2d: 2.0,
            c_3d: 0.01,
        }
    }
}

/// Template rendering and feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub resolution: u32,
    pub distance_factor: f64,
    pub fill: f64,
    pub feature_stride: usize,
    pub splat_radius: f64,
    pub depth_tolerance: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        let t = TemplateParams::default();
        Self {
            resolution: t.resolution,
            distance_factor: t.distance_factor,
            fill: t.fill,
            feature_stride: t.feature_stride,
            splat_radius: t.render.splat_radius,
            depth_tolerance: t.render.depth_tolerance,
        }
    }
}

/// Synthetic descriptor field used when building templates without external
/// feature files. Must match the field used to synthesize the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    pub dim: usize,
    pub seed: u64,
    pub smooth_weight: f64,
    pub length_scale: f64,
    pub symmetry_axis: Option<[f64; 3]>,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        let a = AppearanceParams::default();
        Self {
            dim: a.dim,
            seed: a.seed,
            smooth_weight: a.smooth_weight,
            length_scale: a.length_scale,
            symmetry_axis: None,
        }
    }
}

impl AppearanceConfig {
    pub fn params(&self) -> AppearanceParams {
        AppearanceParams {
            dim: self.dim,
            seed: self.seed,
            smooth_weight: self.smooth_weight,
            length_scale: self.length_scale,
            symmetry: self
                .symmetry_axis
                .map(|a| SymmetrySpec::half_turn(Vec3::from_array(a))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Meters.
    pub max_threshold: f64,
    pub steps: usize,
    /// Cap on model points used for ADD / ADD-S.
    pub max_model_points: usize,
    /// Score frames flagged `predicted_only`.
    pub include_predicted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_threshold: 0.01,
            steps: 1000,
            max_model_points: 2000,
            include_predicted: true,
        }
    }
}

/// All tunables of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_sphere: usize,
    pub n_inplane: usize,
    pub k_r: usize,
    pub k_f: usize,
    pub theta_deg: f64,
    pub lambda: f64,
    pub bow_k: usize,
    pub min_sim: f32,
    pub cluster_deg: f64,
    pub pool_cap: usize,
    pub seed: u64,
    pub variant: Variant,
    pub ransac: RansacParams,
    pub cauchy: CauchyConfig,
    pub optimizer: OptimizeOptions,
    pub templates: TemplateConfig,
    pub appearance: AppearanceConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_sphere: 80,
            n_inplane: 12,
            k_r: 5,
            k_f: 8,
            theta_deg: 10.0,
            lambda: 1.0,
            bow_k: 1024,
            min_sim: 0.5,
            cluster_deg: 15.0,
            pool_cap: 64,
            seed: 0,
            variant: Variant::D,
            ransac: RansacParams::default(),
            cauchy: CauchyConfig::default(),
            optimizer: OptimizeOptions::default(),
            templates: TemplateConfig::default(),
            appearance: AppearanceConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 1")))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_sphere", self.n_sphere),
            ("n_inplane", self.n_inplane),
            ("k_r", self.k_r),
            ("k_f", self.k_f),
            ("bow_k", self.bow_k),
            ("pool_cap", self.pool_cap),
            ("ransac.max_iters", self.ransac.max_iters),
            ("optimizer.max_iters", self.optimizer.max_iters),
            ("templates.resolution", self.templates.resolution as usize),
            ("templates.feature_stride", self.templates.feature_stride),
            ("appearance.dim", self.appearance.dim),
            ("eval.max_model_points", self.eval.max_model_points),
        ] {
            at_least_one(name, v)?;
        }
        for (name, v) in [
            ("theta_deg", self.theta_deg),
            ("lambda", self.lambda),
            ("min_sim", self.min_sim as f64),
            ("cluster_deg", self.cluster_deg),
            ("cauchy.c_2d", self.cauchy.c_2d),
            ("cauchy.c_3d", self.cauchy.c_3d),
            ("templates.distance_factor", self.templates.distance_factor),
            ("templates.fill", self.templates.fill),
            ("templates.splat_radius", self.templates.splat_radius),
            ("templates.depth_tolerance", self.templates.depth_tolerance),
            ("eval.max_threshold", self.eval.max_threshold),
        ] {
            positive(name, v)?;
        }
        if self.eval.steps < 2 {
            return Err(Error::Config("eval.steps must be >= 2".into()));
        }
        self.ransac.validate()
    }

    pub fn template_params(&self) -> TemplateParams {
        TemplateParams {
            n_sphere: self.n_sphere,
            n_inplane: self.n_inplane,
            resolution: self.templates.resolution,
            distance_factor: self.templates.distance_factor,
            fill: self.templates.fill,
            render: RenderParams {
                splat_radius: self.templates.splat_radius,
                depth_tolerance: self.templates.depth_tolerance,
                ..RenderParams::default()
            },
            feature_stride: self.templates.feature_stride,
            bow_k: self.bow_k,
            seed: self.seed,
        }
    }

    pub fn frame_params(&self) -> FrameParams {
        FrameParams {
            k_r: self.k_r,
            min_sim: self.min_sim,
            ransac: self.ransac,
            seed: self.seed,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            frame: self.frame_params(),
            k_f: self.k_f,
            theta_deg: self.theta_deg,
            pool_cap: self.pool_cap,
            cluster_deg: self.cluster_deg,
            loss: RobustLossParams {
                cauchy_c_2d: self.cauchy.c_2d,
                cauchy_c_3d: self.cauchy.c_3d,
                lambda: self.lambda,
            },
            optimize: self.optimizer,
            variant: self.variant,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_sphere * cfg.n_inplane, 960);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = PipelineConfig::from_toml(
            "k_f = 2\nvariant = \"B\"\n[ransac]\ninlier_px = 4.0\n[cauchy]\nc_2d = 1.5\n",
        )
        .unwrap();
        assert_eq!(cfg.k_f, 2);
        assert_eq!(cfg.variant, Variant::B);
        assert_eq!(cfg.ransac.inlier_px, 4.0);
        assert_eq!(cfg.ransac.max_iters, 500);
        assert_eq!(cfg.cauchy.c_2d, 1.5);
        assert_eq!(cfg.cauchy.c_3d, 0.01);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml("k_r = 0\n").is_err());
        assert!(PipelineConfig::from_toml("theta_deg = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("unknown_key = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[cauchy]\nc_3d = 0.0\n").is_err());
    }
}
