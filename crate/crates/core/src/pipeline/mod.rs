//! Sequential tracking over a frame stream, estimate records, evaluation and
//! the ablation harness.

mod eval;
mod records;
mod tracker;

pub use eval::{
    align_records, count_mode_flips, evaluate, format_ablation_table, is_mode_flipped,
    write_curve_csv, write_summary, AblationRow, EvalSummary, Evaluation,
};
pub use records::{
    read_estimates, timing_path, write_estimates, write_timing, Diagnostics, EstimateRecord,
    FrameTiming, FLAG_DISAMBIGUATED, FLAG_MODE_REJECTED, FLAG_PREDICTED_ONLY,
};
pub use tracker::{
    estimate_all, estimate_input, FrameInput, FrameOutput, Tracker, TrackerConfig, Variant,
};

use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::matching::FrameEstimate;
use crate::templates::TemplateSet;
use crate::{Point3, Pose};

/// Processes frames in order with a fresh tracker.
pub fn run_sequence(
    templates: &TemplateSet,
    cfg: TrackerConfig,
    frames: &[FrameInput<'_>],
) -> Result<Vec<FrameOutput>> {
    let mut tracker = Tracker::new(templates, cfg)?;
    frames.iter().map(|f| tracker.process(f)).collect()
}

/// [`run_sequence`] on candidate searches computed beforehand (for example
/// by [`estimate_all`]), so several configurations can share them.
pub fn run_with_estimates(
    templates: &TemplateSet,
    cfg: TrackerConfig,
    frames: &[FrameInput<'_>],
    estimates: &[Result<FrameEstimate>],
) -> Result<Vec<FrameOutput>> {
    if frames.len() != estimates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} estimates",
            frames.len(),
            estimates.len()
        )));
    }
    let mut tracker = Tracker::new(templates, cfg)?;
    frames
        .iter()
        .zip(estimates)
        .map(|(f, e)| match e {
            Err(err) if tracker::is_fatal(err) => Err(Error::InsufficientData(format!(
                "frame {}: {err}",
                f.frame_id
            ))),
            _ => tracker.process_estimate(f, e.as_ref()),
        })
        .collect()
}

/// Runs variants A to D on shared candidate searches and scores each against
/// `ground_truth` (aligned with `frames`).
pub fn run_ablation(
    templates: &TemplateSet,
    cfg: TrackerConfig,
    frames: &[FrameInput<'_>],
    ground_truth: &[Pose],
    model: &[Point3],
    eval_cfg: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    let estimates = estimate_all(frames, templates, &cfg.frame);
    let gt: Vec<(u64, Pose)> = frames
        .iter()
        .zip(ground_truth)
        .map(|(f, g)| (f.frame_id, *g))
        .collect();
    Variant::ALL
        .iter()
        .map(|&variant| {
            let outputs = run_with_estimates(
                templates,
                TrackerConfig { variant, ..cfg },
                frames,
                &estimates,
            )?;
            let records: Vec<EstimateRecord> = outputs.into_iter().map(|o| o.record).collect();
            let aligned = align_records(&records, &gt, eval_cfg.include_predicted)?;
            let e = evaluate(&aligned, model, eval_cfg)?;
            Ok(AblationRow {
                variant,
                add_auc: e.summary.add_auc,
                adds_auc: e.summary.adds_auc,
                n_frames: e.summary.n_frames,
            })
        })
        .collect()
}
