//! Joins predictions with ground truth and writes evaluation reports.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use finepose_core::metrics::{accuracy_curve, default_curve_thresholds, CurvePoint, MetricsError};
use finepose_core::mesh::TriangleMesh;
use finepose_core::{add_error, build_projection, project_bbox, rotation_error, sample_points, summarize};
use finepose_core::{EvalRecord, EvalSummary};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{Prediction, TruthLine};

/// Model points used for ADD.
pub const ADD_POINTS: usize = 5000;
pub const ADD_POINT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("sample {sample_id}: unknown model {model_id}")]
    UnknownModel { sample_id: String, model_id: String },
    #[error("sample {sample_id}: {source}")]
    Metric { sample_id: String, source: MetricsError },
    #[error(transparent)]
    Summary(MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Samples that could not be scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Issues {
    /// Predictions without a ground-truth line.
    pub unmatched: Vec<String>,
    /// Ground-truth samples without a prediction.
    pub missing: Vec<String>,
    /// Predictions that carry an error instead of a pose.
    pub failed: Vec<String>,
}

impl Issues {
    pub fn warning_count(&self) -> usize {
        self.unmatched.len() + self.missing.len() + self.failed.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
    pub curve: Vec<CurvePoint>,
    pub issues: Issues,
}

/// Scores predictions against ground truth in ground-truth order.
///
/// ADD averages over [`ADD_POINTS`] surface samples of each model; the
/// normalizing box is the ground-truth `roi` or, if absent, the projected
/// model box.
pub fn evaluate(
    predictions: &[Prediction],
    truth: &[TruthLine],
    meshes: &BTreeMap<String, TriangleMesh>,
) -> Result<Report, EvaluateError> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let truth_ids: HashMap<&str, ()> = truth.iter().map(|t| (t.sample_id.as_str(), ())).collect();
    let mut issues = Issues {
        unmatched: predictions
            .iter()
            .filter(|p| !truth_ids.contains_key(p.sample_id.as_str()))
            .map(|p| p.sample_id.clone())
            .collect(),
        ..Default::default()
    };
    let mut points: HashMap<&str, Vec<Vector3<f64>>> = HashMap::new();
    let mut records = Vec::new();
    for t in truth {
        let Some(pred) = by_id.get(t.sample_id.as_str()) else {
            issues.missing.push(t.sample_id.clone());
            continue;
        };
        let Some(pose) = pred.pose else {
            issues.failed.push(t.sample_id.clone());
            continue;
        };
        let mesh = meshes.get(&t.model_id).ok_or_else(|| EvaluateError::UnknownModel {
            sample_id: t.sample_id.clone(),
            model_id: t.model_id.clone(),
        })?;
        let pts = points.entry(t.model_id.as_str()).or_insert_with(|| sample_points(mesh, ADD_POINTS, ADD_POINT_SEED));
        let metric = |source| EvaluateError::Metric { sample_id: t.sample_id.clone(), source };
        let bbox = match t.roi {
            Some(b) => b,
            None => project_bbox(&t.pose, mesh).map_err(|e| metric(e.into()))?,
        };
        let e_r = rotation_error(&pose.rotation(), &t.pose.rotation());
        let add = add_error(&build_projection(&pose), &build_projection(&t.pose), pts).map_err(metric)?;
        records.push(EvalRecord::new(t.sample_id.clone(), e_r, add, &bbox).map_err(metric)?);
    }
    let summary = summarize(&records).map_err(EvaluateError::Summary)?;
    let curve = accuracy_curve(&records, &default_curve_thresholds()).map_err(EvaluateError::Summary)?;
    Ok(Report { records, summary, curve, issues })
}

/// Writes `summary.json`, `records.csv`, `curve.csv` and `issues.json`.
pub fn write_report(report: &Report, dir: &Path) -> Result<(), EvaluateError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
    fs::write(dir.join("issues.json"), serde_json::to_string_pretty(&report.issues)?)?;
    let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
    for r in &report.records {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
    for p in &report.curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
