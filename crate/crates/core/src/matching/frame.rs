use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{lift_matches, match_dense, solve_pnp_ransac, PoseCandidate, RansacParams};
use crate::error::{Error, Result};
use crate::features::{bow_histogram, retrieve_references, FeatureMap};
use crate::templates::TemplateSet;
use crate::view_sampling::DepthMap;
use crate::CameraIntrinsics;

/// Per-frame inputs: camera intrinsics, feature grid, foreground cells of that
/// grid and, when available, the frame's depth map.
#[derive(Debug, Clone, Copy)]
pub struct FrameTarget<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub features: &'a FeatureMap,
    pub cell_mask: &'a [bool],
    pub depth: Option<&'a DepthMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub k_r: usize,
    pub min_sim: f32,
    pub ransac: RansacParams,
    pub seed: u64,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            k_r: 5,
            min_sim: 0.5,
            ransac: RansacParams::default(),
            seed: 0,
        }
    }
}

/// Pose candidates over the retrieved reference views of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    /// Retrieved `(template index, score)`, best first.
    pub references: Vec<(usize, f32)>,
    /// Successful candidates ordered by reference rank.
    pub candidates: Vec<PoseCandidate>,
    /// Index into `candidates` of the working pose.
    pub working: usize,
    /// Dense matches per reference before lifting.
    pub raw_matches: Vec<usize>,
}

impl FrameEstimate {
    pub fn working_candidate(&self) -> &PoseCandidate {
        &self.candidates[self.working]
    }

    pub fn total_inliers(&self) -> usize {
        self.candidates.iter().map(|c| c.inliers.len()).sum()
    }

    /// Debug dump; inlier matches are included on request.
    pub fn to_json(&self, include_inliers: bool) -> serde_json::Value {
        let candidates: Vec<_> = self
            .candidates
            .iter()
            .map(|c| {
                let mut v = json!({
                    "reference_index": c.reference_index,
                    "pose": c.pose,
                    "inliers": c.inliers.len(),
                    "reproj_rmse": c.reproj_rmse,
                });
                if include_inliers {
                    v["matches"] = json!(c
                        .inliers
                        .iter()
                        .map(|m| json!({"u": [m.u.u, m.u.v], "X": [m.x.x, m.x.y, m.x.z], "sim": m.similarity}))
                        .collect::<Vec<_>>());
                }
                v
            })
            .collect();
        json!({
            "references": self.references.iter().map(|(i, s)| json!({"index": i, "score": s})).collect::<Vec<_>>(),
            "working": self.candidates[self.working].reference_index,
            "candidates": candidates,
        })
    }
}

/// Working-pose order: most inliers, then lowest RMSE, then lowest reference.
fn better(a: &PoseCandidate, b: &PoseCandidate) -> bool {
    a.inliers
        .len()
        .cmp(&b.inliers.len())
        .reverse()
        .then(a.reproj_rmse.total_cmp(&b.reproj_rmse))
        .then(a.reference_index.cmp(&b.reference_index))
        .is_lt()
}

/// Retrieval, dense matching, lifting and PnP-RANSAC against the top `k_r`
/// templates.
pub fn estimate_frame(
    target: FrameTarget<'_>,
    templates: &TemplateSet,
    params: &FrameParams,
) -> Result<FrameEstimate> {
    if target.cell_mask.len() != target.features.cells() {
        return Err(Error::DimensionMismatch(
            "target mask differs from feature grid".into(),
        ));
    }
    if !target.cell_mask.iter().any(|&m| m) {
        return Err(Error::NoCandidate);
    }
    let hist = bow_histogram(target.features, target.cell_mask, &templates.vocabulary)?;
    let references = retrieve_references(
        &hist,
        &templates.histograms(),
        params.k_r.min(templates.len()),
    )?;
    let k_ref = &templates.intrinsics;

    let results: Vec<Result<(usize, Option<PoseCandidate>)>> = references
        .par_iter()
        .map(|&(ti, _)| {
            let t = &templates.templates[ti];
            let fm = templates.features.features(ti)?;
            let pairs = match_dense(
                target.features,
                target.cell_mask,
                &fm,
                &t.cell_mask,
                params.min_sim,
            )?;
            let (matches, _) = lift_matches(&pairs, &t.depth, &t.viewpoint.camera_pose, k_ref);
            let seed = params.seed ^ (ti as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let cand = solve_pnp_ransac(&matches, target.intrinsics, &params.ransac, seed)
                .ok()
                .map(|mut c| {
                    c.reference_index = ti;
                    c
                });
            Ok((pairs.len(), cand))
        })
        .collect();

    let mut candidates = Vec::new();
    let mut raw_matches = Vec::with_capacity(results.len());
    for r in results {
        let (n, c) = r?;
        raw_matches.push(n);
        candidates.extend(c);
    }
    if candidates.is_empty() {
        return Err(Error::NoCandidate);
    }
    let mut working = 0;
    for i in 1..candidates.len() {
        if better(&candidates[i], &candidates[working]) {
            working = i;
        }
    }
    Ok(FrameEstimate {
        references,
        candidates,
        working,
        raw_matches,
    })
}
