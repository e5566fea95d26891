//! JSON-lines manifests, prediction files and model directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use finepose_core::mesh::{load_mesh, normalize_mesh, MeshError, TriangleMesh};
use finepose_core::solver::{InitSource, SolveResult};
use finepose_core::{BoundingBox2D, PoseParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: MeshError },
    #[error("no meshes found in {0}")]
    NoMeshes(PathBuf),
}

/// One synthetic sample: its ground-truth pose and where its field lives.
///
/// `roi` is the projected model box in the full image; the field is the
/// RoI crop resized to `field_size x field_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub model_id: String,
    pub pose: PoseParams,
    pub roi: BoundingBox2D,
    pub image_width: usize,
    pub image_height: usize,
    pub field_size: usize,
    pub field_file: String,
}

/// Ground-truth line for evaluation. Accepts manifest lines as well as bare
/// `{sample_id, model_id, pose}` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLine {
    pub sample_id: String,
    pub model_id: String,
    pub pose: PoseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<BoundingBox2D>,
}

/// One line of a prediction file. Failed samples carry `error` and no pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_source: Option<InitSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Prediction {
    pub fn solved(sample_id: String, model_id: Option<String>, result: &SolveResult) -> Self {
        Prediction {
            sample_id,
            model_id,
            pose: Some(result.pose),
            rms_residual: Some(result.rms_residual),
            iterations: Some(result.iterations),
            init_source: Some(result.init_source),
            error: None,
            message: None,
        }
    }

    pub fn failed(sample_id: String, model_id: Option<String>, tag: &str, message: String) -> Self {
        Prediction {
            sample_id,
            model_id,
            pose: None,
            rms_residual: None,
            iterations: None,
            init_source: None,
            error: Some(tag.to_string()),
            message: Some(message),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let file = fs::File::open(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ManifestError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|source| ManifestError::Parse { path: path.into(), line: i + 1, source })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ManifestError> {
    let io_err = |source| ManifestError::Io { path: path.into(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads every `*.obj` in `dir` (model id = file stem), normalized so the
/// longest bounding-box edge is 1 and the box is centered at the origin.
pub fn load_mesh_dir(dir: &Path) -> Result<BTreeMap<String, TriangleMesh>, ManifestError> {
    let io_err = |source| ManifestError::Io { path: dir.into(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.insert(id.clone(), load_normalized(&path, &id)?);
    }
    if out.is_empty() {
        return Err(ManifestError::NoMeshes(dir.into()));
    }
    Ok(out)
}

pub fn load_normalized(path: &Path, model_id: &str) -> Result<TriangleMesh, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    let mesh_err = |source| ManifestError::Mesh { path: path.into(), source };
    normalize_mesh(&load_mesh(&text, model_id).map_err(mesh_err)?).map_err(mesh_err)
}
