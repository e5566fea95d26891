//! Dataset bookkeeping: split rules, annotation workflow states, pose
//! histograms and record validation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project_with, PoseParams, DEFAULT_NEAR_PLANE};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("entry {index} has no split tag")]
    MissingSplitTag { index: usize },
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("no records")]
    EmptyInput,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("cannot move from {from:?} to {to:?}")]
    InvalidTransition { from: AnnotationStatus, to: AnnotationStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// A train/test partition, each side in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions by a predefined per-entry tag.
pub fn split_standard<T: Clone>(
    items: &[T],
    tag: impl Fn(&T) -> Option<SplitTag>,
) -> Result<DataSplit<T>, DatasetError> {
    let mut split = DataSplit { train: Vec::new(), test: Vec::new() };
    for (index, item) in items.iter().enumerate() {
        match tag(item) {
            Some(SplitTag::Train) => split.train.push(item.clone()),
            Some(SplitTag::Test) => split.test.push(item.clone()),
            None => return Err(DatasetError::MissingSplitTag { index }),
        }
    }
    Ok(split)
}

/// Number of training items for a random split: `ceil(fraction * n)`.
///
/// A relative slack of 1e-9 keeps fractions such as 2/3 of a multiple of
/// three from rounding up past the exact product.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let count = (exact - 1e-9 * exact.max(1.0)).ceil().max(0.0) as usize;
    count.min(n)
}

/// Seeded random partition with `ceil(fraction * n)` training items.
pub fn split_random<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<DataSplit<T>, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::BadFraction(fraction));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = train_count(items.len(), fraction);
    let mut in_train = vec![false; items.len()];
    for &i in &order[..k] {
        in_train[i] = true;
    }
    let mut split = DataSplit { train: Vec::with_capacity(k), test: Vec::with_capacity(items.len() - k) };
    for (item, train) in items.iter().zip(in_train) {
        if train {
            split.train.push(item.clone());
        } else {
            split.test.push(item.clone());
        }
    }
    Ok(split)
}

/// Review state of an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Unannotated,
    Annotated,
    Flagged,
    Approved,
}

impl AnnotationStatus {
    /// Allowed moves: unannotated to annotated, annotated to flagged or
    /// approved, flagged back to annotated.
    pub fn can_transition_to(self, to: AnnotationStatus) -> bool {
        use AnnotationStatus::*;
        matches!(
            (self, to),
            (Unannotated, Annotated) | (Annotated, Flagged) | (Annotated, Approved) | (Flagged, Annotated)
        )
    }

    pub fn transition(self, to: AnnotationStatus) -> Result<AnnotationStatus, DatasetError> {
        if self.can_transition_to(to) {
            Ok(to)
        } else {
            Err(DatasetError::InvalidTransition { from: self, to })
        }
    }
}

/// Counts over equal-width bins with `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl AngleHistogram {
    fn new(lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        AngleHistogram { edges: (0..=bins).map(|i| lo + width * i as f64).collect(), counts: vec![0; bins] }
    }

    fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let lo = self.edges[0];
        let hi = self.edges[bins];
        let i = (((value - lo) / (hi - lo)) * bins as f64).floor();
        let i = if i.is_finite() { (i.max(0.0) as usize).min(bins - 1) } else { 0 };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histograms of azimuth over `[0, 2pi)` and of elevation and in-plane
/// rotation over `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHistograms {
    pub azimuth: AngleHistogram,
    pub elevation: AngleHistogram,
    pub theta: AngleHistogram,
}

pub fn pose_histograms(poses: &[PoseParams], bins: usize) -> Result<PoseHistograms, DatasetError> {
    if poses.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    if bins == 0 {
        return Err(DatasetError::NoBins);
    }
    let mut h = PoseHistograms {
        azimuth: AngleHistogram::new(0.0, TAU, bins),
        elevation: AngleHistogram::new(-PI, PI, bins),
        theta: AngleHistogram::new(-PI, PI, bins),
    };
    for p in poses {
        let p = p.canonical();
        h.azimuth.add(p.azimuth_rad);
        h.elevation.add(p.elevation_rad);
        h.theta.add(p.theta_rad);
    }
    Ok(h)
}

/// Thresholds for [`validate_pose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Minimum fraction of the projected box area that must lie inside the
    /// image.
    pub min_inside_fraction: f64,
    pub depth_prior: (f64, f64),
    pub focal_prior_px: (f64, f64),
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { min_inside_fraction: 0.5, depth_prior: (3.0, 30.0), focal_prior_px: (500.0, 3000.0) }
    }
}

/// A quality-check finding for an annotated pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    InvalidPose { reason: alloc::string::String },
    BehindCamera { vertices: usize },
    OutOfFrame { fraction_inside: f64 },
    DepthOutsidePrior { depth: f64 },
    FocalOutsidePrior { focal_px: f64 },
}

/// Checks a pose against its mesh and image. Returns findings, never fails.
pub fn validate_pose(
    pose: &PoseParams,
    mesh: &TriangleMesh,
    image_width: usize,
    image_height: usize,
    config: &ValidationConfig,
) -> Vec<Finding> {
    use alloc::string::ToString;
    let mut findings = Vec::new();
    if let Err(e) = pose.validate() {
        findings.push(Finding::InvalidPose { reason: e.to_string() });
        return findings;
    }
    let rotation = pose.rotation();
    let mut behind = 0;
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in mesh.vertices() {
        match project_with(&rotation, pose, v, DEFAULT_NEAR_PLANE) {
            Ok(p) => {
                min_x = min_x.min(p.x);
                min_y = min_y.min(p.y);
                max_x = max_x.max(p.x);
                max_y = max_y.max(p.y);
            }
            Err(_) => behind += 1,
        }
    }
    if behind > 0 {
        findings.push(Finding::BehindCamera { vertices: behind });
    }
    let bbox = crate::camera::BoundingBox2D { min_x, min_y, max_x, max_y };
    let fraction_inside = if bbox.validate().is_ok() {
        bbox.fraction_inside(image_width as f64, image_height as f64)
    } else {
        // a single projected point or nothing in front of the camera
        let inside = min_x >= 0.0 && min_y >= 0.0 && max_x < image_width as f64 && max_y < image_height as f64;
        if inside && behind == 0 {
            1.0
        } else {
            0.0
        }
    };
    if fraction_inside < config.min_inside_fraction {
        findings.push(Finding::OutOfFrame { fraction_inside });
    }
    let (d_lo, d_hi) = config.depth_prior;
    if !(d_lo..=d_hi).contains(&pose.depth) {
        findings.push(Finding::DepthOutsidePrior { depth: pose.depth });
    }
    let (f_lo, f_hi) = config.focal_prior_px;
    if !(f_lo..=f_hi).contains(&pose.focal_px) {
        findings.push(Finding::FocalOutsidePrior { focal_px: pose.focal_px });
    }
    findings
}
