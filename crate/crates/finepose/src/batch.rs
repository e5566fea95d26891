//! Batch pose solving over a directory of field files.

use std::fs;
use std::path::{Path, PathBuf};

use finepose_core::solver::{solve_pose, SolveOptions, SolverError};
use finepose_core::{CropFrame, PixelFrame};
use rayon::prelude::*;

use crate::format::load_field;
use crate::manifest::{read_jsonl, ManifestError, Prediction, SampleEntry, MANIFEST_FILE};

pub fn solver_error_tag(e: &SolverError) -> &'static str {
    match e {
        SolverError::TooFewForeground { .. } => "TooFewForeground",
        SolverError::DegenerateConfiguration => "DegenerateConfiguration",
        SolverError::NumericalFailure => "NumericalFailure",
        SolverError::InvalidPose(_) => "InvalidPose",
    }
}

/// A field to solve and how its pixels map to the image.
#[derive(Debug, Clone)]
pub struct Job {
    pub sample_id: String,
    pub model_id: Option<String>,
    pub path: PathBuf,
    pub frame: PixelFrame,
}

/// Jobs for `dir`: from `manifest.jsonl` when present (crop frames taken
/// from each entry), otherwise every `*.lf3d` file solved in its own pixel
/// frame, sorted by name.
pub fn discover_jobs(dir: &Path) -> Result<Vec<Job>, ManifestError> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        let entries: Vec<SampleEntry> = read_jsonl(&manifest)?;
        return Ok(entries
            .into_iter()
            .map(|e| Job {
                frame: PixelFrame::Crop(CropFrame::new(e.roi, e.field_size, e.image_width, e.image_height)),
                path: dir.join(&e.field_file),
                model_id: Some(e.model_id),
                sample_id: e.sample_id,
            })
            .collect());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| ManifestError::Io { path: dir.into(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "lf3d"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|path| Job {
            sample_id: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            model_id: None,
            path,
            frame: PixelFrame::Image,
        })
        .collect())
}

pub fn solve_job(job: &Job, opts: &SolveOptions) -> Prediction {
    let field = match load_field(&job.path) {
        Ok(f) => f,
        Err(e) => return Prediction::failed(job.sample_id.clone(), job.model_id.clone(), e.tag(), e.to_string()),
    };
    if let PixelFrame::Crop(c) = &job.frame {
        if field.width() != c.out_size || field.height() != c.out_size {
            return Prediction::failed(
                job.sample_id.clone(),
                job.model_id.clone(),
                "SizeMismatch",
                format!("field is {}x{}, manifest says {}", field.width(), field.height(), c.out_size),
            );
        }
    }
    match solve_pose(&field, &job.frame, opts) {
        Ok(r) => Prediction::solved(job.sample_id.clone(), job.model_id.clone(), &r),
        Err(e) => Prediction::failed(job.sample_id.clone(), job.model_id.clone(), solver_error_tag(&e), e.to_string()),
    }
}

/// Solves every job in parallel; output keeps job order.
pub fn solve_jobs(jobs: &[Job], opts: &SolveOptions) -> Vec<Prediction> {
    jobs.par_iter().map(|j| solve_job(j, opts)).collect()
}

pub fn solve_directory(dir: &Path, opts: &SolveOptions) -> Result<Vec<Prediction>, ManifestError> {
    Ok(solve_jobs(&discover_jobs(dir)?, opts))
}
