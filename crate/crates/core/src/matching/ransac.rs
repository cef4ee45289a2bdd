use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::epnp::{dlt, epnp, reprojection_error};
use super::{Match2D3D, PoseCandidate};
use crate::error::{Error, Result};
use crate::optimizer::refine_reprojection;
use crate::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Pixels.
    pub inlier_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_px: 3.0,
            max_iters: 500,
            confidence: 0.999,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_px > 0.0)
            || self.max_iters == 0
            || !(self.confidence > 0.0 && self.confidence < 1.0)
        {
            return Err(Error::Config(format!("invalid RANSAC parameters {self:?}")));
        }
        Ok(())
    }
}

fn inlier_mask(
    pose: &Pose,
    matches: &[Match2D3D],
    k: &CameraIntrinsics,
    thr: f64,
) -> (Vec<bool>, usize, f64) {
    let mut count = 0;
    let mut err = 0.0;
    let mask = matches
        .iter()
        .map(|m| {
            let e = reprojection_error(pose, m, k);
            let ok = e <= thr;
            if ok {
                count += 1;
                err += e * e;
            }
            ok
        })
        .collect();
    (mask, count, err)
}

fn select(matches: &[Match2D3D], mask: &[bool]) -> Vec<Match2D3D> {
    matches
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(m, _)| *m)
        .collect()
}

/// Solver for a consensus set: EPnP, falling back to DLT when EPnP fails.
fn fit(matches: &[Match2D3D], k: &CameraIntrinsics) -> Option<Pose> {
    epnp(matches, k).ok().or_else(|| dlt(matches, k).ok())
}

/// EPnP-in-RANSAC over minimal 4-point samples with adaptive termination,
/// followed by a least-squares refit on the consensus set. Deterministic for a
/// fixed `seed`.
pub fn solve_pnp_ransac(
    matches: &[Match2D3D],
    k: &CameraIntrinsics,
    params: &RansacParams,
    seed: u64,
) -> Result<PoseCandidate> {
    params.validate()?;
    let n = matches.len();
    if n < 4 {
        return Err(Error::TooFewMatches { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Pose)> = None;
    let mut limit = params.max_iters;
    let mut iter = 0;
    let mut sample_buf = Vec::with_capacity(4);
    while iter < limit {
        iter += 1;
        sample_buf.clear();
        sample_buf.extend(sample(&mut rng, n, 4).iter().map(|i| matches[i]));
        let Ok(pose) = epnp(&sample_buf, k) else {
            continue;
        };
        let (_, count, err) = inlier_mask(&pose, matches, k, params.inlier_px);
        let better = best
            .as_ref()
            .is_none_or(|(c, e, _)| count > *c || (count == *c && err < *e));
        if better && count >= 4 {
            best = Some((count, err, pose));
            let w = count as f64 / n as f64;
            let p_good = w.powi(4);
            let needed = if p_good >= 1.0 - f64::EPSILON {
                0.0
            } else {
                (1.0 - params.confidence).ln() / (1.0 - p_good).ln()
            };
            if needed.is_finite() {
                limit = limit.min(needed.ceil().max(1.0) as usize);
            }
        }
    }
    let (_, _, mut pose) = best.ok_or(Error::NoConsensus)?;

    let (mut mask, mut count, _) = inlier_mask(&pose, matches, k, params.inlier_px);
    for _ in 0..2 {
        let inliers = select(matches, &mask);
        let seed_pose = fit(&inliers, k)
            .filter(|p| inlier_mask(p, matches, k, params.inlier_px).1 >= count)
            .unwrap_or(pose);
        let Ok(refined) = refine_reprojection(&seed_pose, &inliers, k) else {
            break;
        };
        let (m2, c2, _) = inlier_mask(&refined.pose, matches, k, params.inlier_px);
        if c2 < count {
            break;
        }
        let changed = m2 != mask;
        pose = refined.pose;
        mask = m2;
        count = c2;
        if !changed {
            break;
        }
    }
    if count < 4 {
        return Err(Error::NoConsensus);
    }
    let inliers = select(matches, &mask);
    let reproj_rmse = (inliers
        .iter()
        .map(|m| reprojection_error(&pose, m, k).powi(2))
        .sum::<f64>()
        / inliers.len() as f64)
        .sqrt();
    Ok(PoseCandidate {
        pose,
        inliers,
        reproj_rmse,
        reference_index: 0,
    })
}
