use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{
    Diagnostics, EstimateRecord, FLAG_DISAMBIGUATED, FLAG_MODE_REJECTED, FLAG_PREDICTED_ONLY,
};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Mask};
use crate::geometry::angular_distance;
use crate::matching::{estimate_frame, FrameEstimate, FrameParams, FrameTarget, Match2D3D};
use crate::optimizer::{refine_pose, total_loss, Observation, OptimizeOptions, RobustLossParams};
use crate::synth::SynthFrame;
use crate::templates::TemplateSet;
use crate::temporal::{
    cluster_modes, disambiguate, predict_pose, select_keyframes, Disambiguation, MemoryPool,
    PoolEntry, SymmetryModes,
};
use crate::view_sampling::DepthMap;
use crate::{CameraIntrinsics, Pose};

/// Ablation variants, cumulative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// PnP working pose only.
    A,
    /// Single-frame robust refinement.
    B,
    /// Refinement over keyframes from the memory pool.
    C,
    /// Keyframes restricted to disambiguated symmetry modes.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            "D" => Ok(Variant::D),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected A, B, C or D)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub frame: FrameParams,
    pub k_f: usize,
    pub theta_deg: f64,
    pub pool_cap: usize,
    pub cluster_deg: f64,
    pub loss: RobustLossParams,
    pub optimize: OptimizeOptions,
    pub variant: Variant,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            frame: FrameParams::default(),
            k_f: 8,
            theta_deg: 10.0,
            pool_cap: 64,
            cluster_deg: 15.0,
            loss: RobustLossParams::default(),
            optimize: OptimizeOptions::default(),
            variant: Variant::D,
        }
    }
}

/// One observed frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame_id: u64,
    pub intrinsics: &'a CameraIntrinsics,
    pub features: &'a FeatureMap,
    pub mask: &'a Mask,
    pub depth: &'a DepthMap,
    pub fk_pose: Pose,
}

impl<'a> FrameInput<'a> {
    pub fn from_synth(frame: &'a SynthFrame, intrinsics: &'a CameraIntrinsics) -> Self {
        Self {
            frame_id: frame.id,
            intrinsics,
            features: &frame.features,
            mask: &frame.mask,
            depth: &frame.depth,
            fk_pose: frame.fk_pose,
        }
    }
}

/// Per-frame result of [`Tracker::process`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub record: EstimateRecord,
    /// Pair selected against the base frame, when one ran.
    pub disambiguation: Option<Disambiguation>,
    pub wall_seconds: f64,
}

/// Candidate search for one frame (retrieval, matching, PnP). It does not
/// depend on tracker state.
pub fn estimate_input(
    frame: &FrameInput<'_>,
    templates: &TemplateSet,
    params: &FrameParams,
) -> Result<FrameEstimate> {
    let cells = frame.mask.cells(frame.features);
    let target = FrameTarget {
        intrinsics: frame.intrinsics,
        features: frame.features,
        cell_mask: &cells,
        depth: Some(frame.depth),
    };
    estimate_frame(target, templates, params)
}

/// [`estimate_input`] over a whole sequence in parallel.
pub fn estimate_all(
    frames: &[FrameInput<'_>],
    templates: &TemplateSet,
    params: &FrameParams,
) -> Vec<Result<FrameEstimate>> {
    frames
        .par_iter()
        .map(|f| estimate_input(f, templates, params))
        .collect()
}

pub(crate) fn is_fatal(e: &Error) -> bool {
    matches!(
        e,
        Error::Io { .. } | Error::Json { .. } | Error::Format { .. } | Error::DimensionMismatch(_)
    )
}

fn depth_at(depth: &DepthMap, m: &Match2D3D) -> Option<f64> {
    depth
        .at_point(m.u)
        .map(f64::from)
        .filter(|d| d.is_finite() && *d > 0.0)
}

fn observation(delta: Pose, matches: Vec<Match2D3D>, depth: Option<&DepthMap>) -> Observation {
    let target_depths = match depth {
        Some(d) => matches.iter().map(|m| depth_at(d, m)).collect(),
        None => vec![None; matches.len()],
    };
    Observation {
        delta_pose: delta,
        matches,
        target_depths,
    }
}

fn inliers_of(estimate: &FrameEstimate, members: &[usize]) -> Vec<Match2D3D> {
    members
        .iter()
        .flat_map(|&i| estimate.candidates[i].inliers.iter().copied())
        .collect()
}

/// Inliers of the candidates whose rotation lies within `thr` of `pose`.
fn inliers_near(estimate: &FrameEstimate, pose: &Pose, thr: f64) -> Vec<Match2D3D> {
    estimate
        .candidates
        .iter()
        .filter(|c| angular_distance(&c.pose, pose) <= thr)
        .flat_map(|c| c.inliers.iter().copied())
        .collect()
}

fn single_mode(modes: &SymmetryModes, m: usize) -> SymmetryModes {
    SymmetryModes {
        mode_poses: vec![modes.mode_poses[m]],
        members: vec![modes.members[m].clone()],
        inlier_counts: vec![modes.inlier_counts[m]],
    }
}

/// Base frame and its selected mode.
#[derive(Debug, Clone, Copy)]
struct BaseMode {
    frame_id: u64,
    mode: usize,
    fixed: bool,
}

/// Sequential estimator holding the memory pool and the previous output.
pub struct Tracker<'t> {
    templates: &'t TemplateSet,
    cfg: TrackerConfig,
    pool: MemoryPool,
    prev: Option<(Pose, Pose)>,
    base: Option<BaseMode>,
}

impl<'t> Tracker<'t> {
    pub fn new(templates: &'t TemplateSet, cfg: TrackerConfig) -> Result<Self> {
        cfg.loss.validate()?;
        cfg.frame.ransac.validate()?;
        if cfg.k_f == 0 || cfg.frame.k_r == 0 {
            return Err(Error::Config("k_f and k_r must be >= 1".into()));
        }
        let pool = MemoryPool::new(cfg.theta_deg.to_radians(), cfg.pool_cap);
        Ok(Self {
            templates,
            cfg,
            pool,
            prev: None,
            base: None,
        })
    }

    pub fn pool(&self) -> &MemoryPool {
        &self.pool
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Runs candidate search and the temporal stages on one frame.
    pub fn process(&mut self, frame: &FrameInput<'_>) -> Result<FrameOutput> {
        let start = Instant::now();
        let estimate = estimate_input(frame, self.templates, &self.cfg.frame);
        if let Err(e) = estimate {
            if is_fatal(&e) {
                return Err(e);
            }
            let mut out = self.process_estimate(frame, Err(&e))?;
            out.wall_seconds = start.elapsed().as_secs_f64();
            return Ok(out);
        }
        let mut out = self.process_estimate(frame, estimate.as_ref())?;
        out.wall_seconds = start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Temporal stages on a precomputed candidate search result. A failed
    /// search yields the prediction flagged `predicted_only`.
    pub fn process_estimate(
        &mut self,
        frame: &FrameInput<'_>,
        estimate: std::result::Result<&FrameEstimate, &Error>,
    ) -> Result<FrameOutput> {
        let start = Instant::now();
        let prediction = self
            .prev
            .map(|(p, fk)| predict_pose(&p, &fk, &frame.fk_pose));
        let estimate = match estimate {
            Ok(e) => e.clone(),
            Err(e) => {
                let pose = prediction.unwrap_or_default();
                self.prev = Some((pose, frame.fk_pose));
                let diagnostics = Diagnostics {
                    pool_size: self.pool.len(),
                    error: Some(e.to_string()),
                    ..Diagnostics::default()
                };
                let record = EstimateRecord {
                    frame_id: frame.frame_id,
                    pose,
                    flags: vec![FLAG_PREDICTED_ONLY.to_string()],
                    diagnostics,
                };
                return Ok(FrameOutput {
                    record,
                    disambiguation: None,
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
            }
        };

        let mut diagnostics = Diagnostics {
            candidates: estimate.candidates.len(),
            inliers: estimate.working_candidate().inliers.len(),
            ..Diagnostics::default()
        };
        let mut flags = Vec::new();
        let working = estimate.working_candidate().pose;
        let thr = self.cfg.cluster_deg.to_radians();
        let mut disambiguation = None;

        let pose = match self.cfg.variant {
            Variant::A => working,
            Variant::B => {
                let obs = [observation(
                    Pose::identity(),
                    inliers_near(&estimate, &working, thr),
                    Some(frame.depth),
                )];
                self.refine(frame.intrinsics, &working, &[], &obs, &mut diagnostics)
            }
            Variant::C => {
                let start_pose = prediction.unwrap_or(working);
                let mut obs = vec![observation(
                    Pose::identity(),
                    inliers_near(&estimate, &working, thr),
                    Some(frame.depth),
                )];
                obs.extend(self.keyframe_observations(
                    frame,
                    &start_pose,
                    |kf| Some(inliers_near(&kf.estimate, &kf.working_pose, thr)),
                    &mut diagnostics,
                ));
                self.refine(frame.intrinsics, &working, &[], &obs, &mut diagnostics)
            }
            Variant::D => {
                let (p, d, rejected) =
                    self.disambiguated_pose(frame, &estimate, prediction, &mut diagnostics)?;
                disambiguation = d;
                if d.is_some() {
                    flags.push(FLAG_DISAMBIGUATED.to_string());
                    diagnostics.mode_residual_deg = d.map(|d| d.residual.to_degrees());
                }
                if rejected {
                    flags.push(FLAG_MODE_REJECTED.to_string());
                }
                p
            }
        };

        let entry = PoolEntry::new(
            frame.frame_id,
            Arc::new(estimate),
            frame.fk_pose,
            pose,
            self.cfg.cluster_deg,
        )?
        .with_depth(Arc::new(frame.depth.clone()));
        self.pool.try_insert(entry);
        diagnostics.pool_size = self.pool.len();
        self.prev = Some((pose, frame.fk_pose));
        let record = EstimateRecord {
            frame_id: frame.frame_id,
            pose,
            flags,
            diagnostics,
        };
        Ok(FrameOutput {
            record,
            disambiguation,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn keyframe_observations<F>(
        &self,
        frame: &FrameInput<'_>,
        start: &Pose,
        mut select: F,
        diagnostics: &mut Diagnostics,
    ) -> Vec<Observation>
    where
        F: FnMut(&PoolEntry) -> Option<Vec<Match2D3D>>,
    {
        let mut obs = Vec::new();
        let keyframes = select_keyframes(&self.pool, start, self.cfg.k_f);
        for kf in keyframes {
            if let Some(matches) = select(kf) {
                let delta = frame.fk_pose.inverse().compose(&kf.fk_pose);
                obs.push(observation(delta, matches, kf.depth.as_deref()));
            }
        }
        diagnostics.keyframes = obs.len();
        obs
    }

    /// Variant D: pairs the current modes with the base frame's selected mode
    /// and keeps only mode-consistent matches.
    fn disambiguated_pose(
        &mut self,
        frame: &FrameInput<'_>,
        estimate: &FrameEstimate,
        prediction: Option<Pose>,
        diagnostics: &mut Diagnostics,
    ) -> Result<(Pose, Option<Disambiguation>, bool)> {
        let k = frame.intrinsics;
        let working = estimate.working_candidate().pose;
        let thr = self.cfg.cluster_deg.to_radians();
        let current = cluster_modes(&estimate.candidates, self.cfg.cluster_deg)?;
        let Some(base) = self.pool.base_entry(2).cloned() else {
            let start = prediction.unwrap_or(working);
            let mut obs = vec![observation(
                Pose::identity(),
                inliers_near(estimate, &working, thr),
                Some(frame.depth),
            )];
            obs.extend(self.keyframe_observations(
                frame,
                &start,
                |kf| Some(inliers_near(&kf.estimate, &kf.working_pose, thr)),
                diagnostics,
            ));
            return Ok((
                self.refine(k, &working, &[], &obs, diagnostics),
                None,
                false,
            ));
        };

        let fk_rel = base.fk_pose.inverse().compose(&frame.fk_pose);
        let bm = match self.base {
            Some(b) if b.frame_id == base.frame_id && b.fixed => b.mode,
            _ => {
                let r: Vec<f64> = (0..base.modes.len())
                    .map(|m| disambiguate(&single_mode(&base.modes, m), &current, &fk_rel).residual)
                    .collect();
                let mode = if r[1] < r[0] { 1 } else { 0 };
                let fixed = (r[0] - r[1]).abs() > thr;
                self.base = Some(BaseMode {
                    frame_id: base.frame_id,
                    mode,
                    fixed,
                });
                mode
            }
        };
        let base_one = single_mode(&base.modes, bm);
        let d = Disambiguation {
            base_mode: bm,
            ..disambiguate(&base_one, &current, &fk_rel)
        };
        let current_ok = d.residual <= thr;
        let implied = d.base_pose.compose(&fk_rel);

        let mut obs = Vec::new();
        if current_ok {
            let members = &current.members[d.current_mode];
            obs.push(observation(
                Pose::identity(),
                inliers_of(estimate, members),
                Some(frame.depth),
            ));
        }
        let start = prediction.unwrap_or(if current_ok { d.current_pose } else { implied });
        let kf_obs = self.keyframe_observations(
            frame,
            &start,
            |kf| {
                if kf.frame_id == base.frame_id {
                    return Some(inliers_of(&kf.estimate, &base.modes.members[bm]));
                }
                let rel = base.fk_pose.inverse().compose(&kf.fk_pose);
                let dk = disambiguate(&base_one, &kf.modes, &rel);
                (dk.residual <= thr)
                    .then(|| inliers_of(&kf.estimate, &kf.modes.members[dk.current_mode]))
            },
            diagnostics,
        );
        obs.extend(kf_obs);

        let mut starts = vec![implied];
        if current_ok {
            starts.extend(
                current.members[d.current_mode]
                    .iter()
                    .map(|&i| estimate.candidates[i].pose),
            );
        }
        let anchor = if current_ok { d.current_pose } else { implied };
        if let Some(p) = prediction.filter(|p| angular_distance(p, &anchor) <= thr) {
            starts.push(p);
        }
        Ok((
            self.refine(k, &anchor, &starts, &obs, diagnostics),
            Some(d),
            !current_ok,
        ))
    }

    /// Refines from the lowest-loss start among `init` and `extra`.
    fn refine(
        &self,
        k: &CameraIntrinsics,
        init: &Pose,
        extra: &[Pose],
        obs: &[Observation],
        diagnostics: &mut Diagnostics,
    ) -> Pose {
        let mut start = *init;
        if !extra.is_empty() {
            let mut best = total_loss(init, obs, k, &self.cfg.loss);
            for p in extra {
                let l = total_loss(p, obs, k, &self.cfg.loss);
                if l < best {
                    best = l;
                    start = *p;
                }
            }
        }
        match refine_pose(&start, obs, k, &self.cfg.loss, &self.cfg.optimize) {
            Ok(r) => {
                diagnostics.iterations = r.iterations;
                diagnostics.final_cost = Some(r.final_cost);
                r.pose
            }
            Err(_) => start,
        }
    }
}
