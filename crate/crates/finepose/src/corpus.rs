//! Synthetic location-field corpora.

use std::fs;
use std::path::{Path, PathBuf};

use finepose_core::field::DEFAULT_FIELD_SIZE;
use finepose_core::mesh::TriangleMesh;
use finepose_core::{crop_resize_field, project_bbox, rasterize_field, sample_pose, LocationField, PoseSamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::{save_field, FormatError};
use crate::manifest::{write_jsonl, ManifestError, SampleEntry, MANIFEST_FILE};

/// Pose draws per sample before giving up on finding a visible one.
pub const MAX_ATTEMPTS: usize = 100;

/// Fewest foreground pixels a generated crop may have.
pub const MIN_FOREGROUND: usize = 6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no meshes given")]
    NoMeshes,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample {index}: no visible pose in {MAX_ATTEMPTS} draws")]
    NoVisiblePose { index: usize },
    #[error("sample {index}: {source}")]
    Write { index: usize, source: FormatError },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub sampler: PoseSamplerConfig,
    pub field_size: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { sampler: PoseSamplerConfig::default(), field_size: DEFAULT_FIELD_SIZE, seed: 0, workers: None }
    }
}

/// Destination for generated samples. Called concurrently.
pub trait SampleSink: Sync {
    fn put(&self, entry: &SampleEntry, field: &LocationField) -> Result<(), FormatError>;
}

/// Writes `<sample_id>.lf3d` files and `manifest.jsonl` into a directory.
pub struct DirectorySink {
    dir: PathBuf,
}

impl DirectorySink {
    pub fn create(dir: &Path) -> Result<Self, FormatError> {
        fs::create_dir_all(dir)?;
        Ok(DirectorySink { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_manifest(&self, entries: &[SampleEntry]) -> Result<(), ManifestError> {
        write_jsonl(&self.dir.join(MANIFEST_FILE), entries)
    }
}

impl SampleSink for DirectorySink {
    fn put(&self, entry: &SampleEntry, field: &LocationField) -> Result<(), FormatError> {
        save_field(&self.dir.join(&entry.field_file), field)
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:07}")
}

/// Draws, renders and crops sample `index`. The result depends only on the
/// seed, the index and the mesh list.
///
/// Poses whose crop would hold fewer than [`MIN_FOREGROUND`] pixels (model
/// outside the frame) are redrawn from the same per-sample stream.
pub fn make_sample(
    meshes: &[TriangleMesh],
    index: usize,
    config: &CorpusConfig,
) -> Result<(SampleEntry, LocationField), CorpusError> {
    let mesh = &meshes[index % meshes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let (w, h) = (config.sampler.image_width, config.sampler.image_height);
    for _ in 0..MAX_ATTEMPTS {
        let pose = sample_pose(&mut rng, &config.sampler).map_err(|e| CorpusError::Config(e.to_string()))?;
        let Ok(roi) = project_bbox(&pose, mesh) else { continue };
        let full = rasterize_field(mesh, &pose, w, h);
        let Ok(field) = crop_resize_field(&full, &roi, config.field_size) else { continue };
        if field.foreground_count() < MIN_FOREGROUND {
            continue;
        }
        let id = sample_id(index);
        let entry = SampleEntry {
            field_file: format!("{id}.lf3d"),
            sample_id: id,
            model_id: mesh.model_id().to_string(),
            pose,
            roi,
            image_width: w,
            image_height: h,
            field_size: config.field_size,
        };
        return Ok((entry, field));
    }
    Err(CorpusError::NoVisiblePose { index })
}

/// Generates `count` samples round-robin over `meshes` and hands each to
/// `sink`. Returns manifest entries in index order, independent of worker
/// count and scheduling.
pub fn generate_corpus(
    meshes: &[TriangleMesh],
    count: usize,
    config: &CorpusConfig,
    sink: &dyn SampleSink,
) -> Result<Vec<SampleEntry>, CorpusError> {
    if meshes.is_empty() {
        return Err(CorpusError::NoMeshes);
    }
    config.sampler.validate().map_err(|e| CorpusError::Config(e.to_string()))?;
    if config.field_size == 0 {
        return Err(CorpusError::Config("field size must be positive".into()));
    }
    let run = || {
        (0..count)
            .into_par_iter()
            .map(|index| {
                let (entry, field) = make_sample(meshes, index, config)?;
                sink.put(&entry, &field).map_err(|source| CorpusError::Write { index, source })?;
                Ok(entry)
            })
            .collect::<Result<Vec<_>, CorpusError>>()
    };
    match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CorpusError::Pool(e.to_string()))?
            .install(run),
        None => run(),
    }
}
