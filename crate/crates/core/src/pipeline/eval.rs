use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{EstimateRecord, FLAG_PREDICTED_ONLY};
use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::geometry::angular_distance;
use crate::metrics::{add_error, auc, subsample_model, AccuracyCurve, AddsIndex, EvalRecord};
use crate::{Point3, Pose, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub add_auc: f64,
    pub adds_auc: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub add: AccuracyCurve,
    pub adds: AccuracyCurve,
    pub add_errors: Vec<f64>,
    pub adds_errors: Vec<f64>,
}

/// Pairs estimates with ground truth by frame id. Every id must be present
/// on both sides; otherwise the unmatched ids are reported.
pub fn align_records(
    estimates: &[EstimateRecord],
    ground_truth: &[(u64, Pose)],
    include_predicted: bool,
) -> Result<Vec<EvalRecord>> {
    let est: BTreeMap<u64, &EstimateRecord> = estimates.iter().map(|r| (r.frame_id, r)).collect();
    let gt: BTreeMap<u64, Pose> = ground_truth.iter().copied().collect();
    let missing: BTreeSet<u64> = gt
        .keys()
        .filter(|id| !est.contains_key(id))
        .chain(est.keys().filter(|id| !gt.contains_key(id)))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFrames(missing.into_iter().collect()));
    }
    Ok(gt
        .iter()
        .filter_map(|(&id, &g)| {
            let r = est[&id];
            (include_predicted || !r.has_flag(FLAG_PREDICTED_ONLY)).then_some(EvalRecord {
                frame_id: id,
                estimated: r.pose,
                ground_truth: g,
            })
        })
        .collect())
}

/// ADD and ADD-S AUC over aligned records.
pub fn evaluate(records: &[EvalRecord], model: &[Point3], cfg: &EvalConfig) -> Result<Evaluation> {
    let model = subsample_model(model, cfg.max_model_points);
    let index = AddsIndex::new(&model)?;
    let add_errors: Vec<f64> = records
        .par_iter()
        .map(|r| add_error(&r.estimated, &r.ground_truth, &model))
        .collect::<Result<_>>()?;
    let adds_errors: Vec<f64> = records
        .par_iter()
        .map(|r| index.adds_error(&r.estimated, &r.ground_truth))
        .collect();
    let add = auc(&add_errors, cfg.max_threshold, cfg.steps)?;
    let adds = auc(&adds_errors, cfg.max_threshold, cfg.steps)?;
    let summary = EvalSummary {
        add_auc: add.auc,
        adds_auc: adds.auc,
        n_frames: records.len(),
    };
    Ok(Evaluation {
        summary,
        add,
        adds,
        add_errors,
        adds_errors,
    })
}

pub fn write_summary(path: &Path, summary: &EvalSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `threshold,add_acc,adds_acc` rows.
pub fn write_curve_csv(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut text = String::from("threshold,add_acc,adds_acc\n");
    for ((t, a), s) in eval
        .add
        .thresholds
        .iter()
        .zip(&eval.add.accuracy)
        .zip(&eval.adds.accuracy)
    {
        let _ = writeln!(text, "{t},{a},{s}");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// True when `est` is closer in rotation to `gt ∘ S` than to `gt`.
pub fn is_mode_flipped(est: &Pose, gt: &Pose, symmetry: &Rotation) -> bool {
    let flipped = gt.compose(&Pose::from_rotation(*symmetry));
    angular_distance(est, &flipped) < angular_distance(est, gt)
}

/// Mode changes along a sequence of per-frame flip labels, starting from the
/// correct mode.
pub fn count_mode_flips(flipped: &[bool]) -> usize {
    let mut prev = false;
    let mut n = 0;
    for &f in flipped {
        if f != prev {
            n += 1;
        }
        prev = f;
    }
    n
}

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: super::Variant,
    pub add_auc: f64,
    pub adds_auc: f64,
    pub n_frames: usize,
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant  add_auc  adds_auc  n_frames\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<7}  {:>7.2}  {:>8.2}  {:>8}",
            r.variant, r.add_auc, r.adds_auc, r.n_frames
        );
    }
    s
}
