//! ADD / ADD-S pose errors and accuracy-threshold AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};
use crate::scalar::Real;
use crate::spatial::PointGrid;

/// Mean distance between corresponding model points under both poses.
pub fn add_error<T: Real>(est: &Pose<T>, gt: &Pose<T>, model: &[Point3<T>]) -> Result<T> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let sum = model.iter().fold(T::zero(), |acc, &x| {
        acc + (est.transform_point(x) - gt.transform_point(x)).norm()
    });
    Ok(sum / T::lit(model.len() as f64))
}

/// Mean closest-point distance from the estimated to the true model surface
/// (brute force).
pub fn adds_error<T: Real>(est: &Pose<T>, gt: &Pose<T>, model: &[Point3<T>]) -> Result<T> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let target: Vec<Point3<T>> = model.iter().map(|&y| gt.transform_point(y)).collect();
    let sum = model.iter().fold(T::zero(), |acc, &x| {
        let p = est.transform_point(x);
        acc + target
            .iter()
            .map(|&q| (p - q).norm())
            .fold(T::infinity(), T::min)
    });
    Ok(sum / T::lit(model.len() as f64))
}

/// Every `⌈n / max_points⌉`-th point, so at most `max_points` remain.
pub fn subsample_model(model: &[crate::Point3], max_points: usize) -> Vec<crate::Point3> {
    let step = model.len().div_ceil(max_points.max(1)).max(1);
    model.iter().step_by(step).copied().collect()
}

/// ADD-S with a voxel-grid nearest-neighbor index over the model, for repeated
/// evaluation against one model.
pub struct AddsIndex<'a> {
    model: &'a [crate::Point3],
    grid: PointGrid<'a>,
}

impl<'a> AddsIndex<'a> {
    pub fn new(model: &'a [crate::Point3]) -> Result<Self> {
        if model.is_empty() {
            return Err(Error::EmptyModel);
        }
        Ok(Self {
            model,
            grid: PointGrid::new(model),
        })
    }

    pub fn adds_error(&self, est: &crate::Pose, gt: &crate::Pose) -> f64 {
        // ‖est(X) − gt(Y)‖ = ‖gt⁻¹·est(X) − Y‖
        let rel = gt.inverse().compose(est);
        let sum: f64 = self
            .model
            .iter()
            .map(|&x| self.grid.nearest(rel.transform_point(x)).1)
            .sum();
        sum / self.model.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    /// Meters, ascending.
    pub thresholds: Vec<f64>,
    /// Fraction of errors at or below each threshold.
    pub accuracy: Vec<f64>,
    /// Percentage in `[0, 100]`.
    pub auc: f64,
}

/// Accuracy at `steps` uniform thresholds in `(0, max_threshold]`; the AUC is
/// 100 × their mean.
pub fn auc<T: Real>(errors: &[T], max_threshold: T, steps: usize) -> Result<AccuracyCurve> {
    if errors.is_empty() {
        return Err(Error::EmptyErrors);
    }
    if steps < 2 || !(max_threshold > T::zero()) {
        return Err(Error::Config(format!(
            "auc needs steps >= 2 and a positive threshold (steps={steps})"
        )));
    }
    let mut sorted: Vec<f64> = errors.iter().map(|e| e.as_f64()).collect();
    sorted.sort_by(f64::total_cmp);
    let max = max_threshold.as_f64();
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (1..=steps).map(|i| max * i as f64 / steps as f64).collect();
    let accuracy: Vec<f64> = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    let auc = 100.0 * accuracy.iter().sum::<f64>() / steps as f64;
    Ok(AccuracyCurve {
        thresholds,
        accuracy,
        auc,
    })
}

/// One evaluated frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_id: u64,
    pub estimated: crate::Pose,
    pub ground_truth: crate::Pose,
}
