//! Evaluation: rotation geodesic error, average distance of projected model
//! points (ADD), its box-normalized form and test-set aggregation.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{BoundingBox2D, CameraError, ProjectionMatrix, RotationMatrix};

/// Rotation accuracy threshold, `pi/6`.
pub const ROTATION_THRESHOLD_RAD: f64 = PI / 6.0;

/// Normalized ADD accuracy threshold.
pub const ADD_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no points to average over")]
    NoPoints,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("bounding box has zero diameter")]
    DegenerateBox,
    #[error("no records to summarize")]
    EmptyInput,
    #[error("thresholds must be strictly increasing")]
    UnsortedThresholds,
}

/// Geodesic distance `arccos((tr(R^T R_gt) - 1) / 2)` in `[0, pi]`.
///
/// Below pi/2 the same angle is taken from the chord,
/// `||R - R_gt||_F = 2 sqrt(2) sin(angle / 2)`, since arccos near 1 loses
/// about half the digits.
pub fn rotation_error(rotation: &RotationMatrix, rotation_gt: &RotationMatrix) -> f64 {
    let relative = rotation.matrix().transpose() * rotation_gt.matrix();
    let c = 0.5 * (relative.trace() - 1.0);
    if c > 0.0 {
        let chord = (rotation.matrix() - rotation_gt.matrix()).norm();
        return 2.0 * (chord / (2.0 * core::f64::consts::SQRT_2)).min(1.0).asin();
    }
    c.clamp(-1.0, 1.0).acos()
}

/// Mean pixel distance between the projections of `points` under `p` and
/// `p_gt`.
pub fn add_error(
    p: &ProjectionMatrix,
    p_gt: &ProjectionMatrix,
    points: &[Vector3<f64>],
) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::NoPoints);
    }
    let mut sum = 0.0;
    for x in points {
        let a = p.project(x)?;
        let b = p_gt.project(x)?;
        sum += (a - b).norm();
    }
    Ok(sum / points.len() as f64)
}

/// `e_ADD` divided by the diagonal of the ground-truth box.
pub fn normalized_add(add_px: f64, gt_bbox: &BoundingBox2D) -> Result<f64, MetricsError> {
    let diameter = gt_bbox.diameter();
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(MetricsError::DegenerateBox);
    }
    Ok(add_px / diameter)
}

/// Per-sample errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub rotation_error_rad: f64,
    pub add_px: f64,
    pub add_normalized: f64,
    pub bbox_diameter_px: f64,
}

impl EvalRecord {
    pub fn new(
        sample_id: impl Into<String>,
        rotation_error_rad: f64,
        add_px: f64,
        gt_bbox: &BoundingBox2D,
    ) -> Result<Self, MetricsError> {
        Ok(EvalRecord {
            sample_id: sample_id.into(),
            rotation_error_rad,
            add_px,
            add_normalized: normalized_add(add_px, gt_bbox)?,
            bbox_diameter_px: gt_bbox.diameter(),
        })
    }
}

/// Test-set aggregate. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub median_rotation_error_rad: f64,
    pub mean_rotation_error_rad: f64,
    pub acc_pi_over_6: f64,
    pub median_add_normalized: f64,
    pub mean_add_normalized: f64,
    pub acc_add_0_1: f64,
    pub count: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn percent_below(values: &[f64], threshold: f64) -> f64 {
    let hits = values.iter().filter(|v| **v < threshold).count();
    100.0 * hits as f64 / values.len() as f64
}

/// Medians (midpoint for even counts), means and strict-threshold accuracies.
pub fn summarize(records: &[EvalRecord]) -> Result<EvalSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = records.len() as f64;
    let mut rot: Vec<f64> = records.iter().map(|r| r.rotation_error_rad).collect();
    let mut add: Vec<f64> = records.iter().map(|r| r.add_normalized).collect();
    let mean_rot = rot.iter().sum::<f64>() / n;
    let mean_add = add.iter().sum::<f64>() / n;
    let acc_rot = percent_below(&rot, ROTATION_THRESHOLD_RAD);
    let acc_add = percent_below(&add, ADD_THRESHOLD);
    Ok(EvalSummary {
        median_rotation_error_rad: median(&mut rot),
        mean_rotation_error_rad: mean_rot,
        acc_pi_over_6: acc_rot,
        median_add_normalized: median(&mut add),
        mean_add_normalized: mean_add,
        acc_add_0_1: acc_add,
        count: records.len(),
    })
}

/// One point of an accuracy-vs-threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub percent: f64,
}

/// Percentage of records with normalized ADD strictly below each threshold.
pub fn accuracy_curve(records: &[EvalRecord], thresholds: &[f64]) -> Result<Vec<CurvePoint>, MetricsError> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::UnsortedThresholds);
    }
    if records.is_empty() {
        return Ok(thresholds.iter().map(|&threshold| CurvePoint { threshold, percent: 0.0 }).collect());
    }
    let mut values: Vec<f64> = records.iter().map(|r| r.add_normalized).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let below = values.partition_point(|v| *v < threshold);
            CurvePoint { threshold, percent: 100.0 * below as f64 / n }
        })
        .collect())
}

/// Thresholds `0, step, 2 step, ..., max` used for curve exports.
pub fn default_curve_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.01).collect()
}
