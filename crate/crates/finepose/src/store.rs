//! Image manifests and the annotation record store.
//!
//! The store materializes an append-only JSON-lines log: every accepted
//! write appends the full record, and on load the highest revision per image
//! wins. Readers run concurrently; writers are serialized and rejected when
//! they carry a stale revision.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use finepose_core::dataset::{AnnotationStatus, DatasetError, PoseHistograms, SplitTag};
use finepose_core::PoseParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub image_path: String,
    pub category: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub images: Vec<ImageEntry>,
    /// Model id to mesh path, relative to the data root.
    pub models: BTreeMap<String, String>,
    /// Per category: whether the models are exact matches or only visually
    /// similar stand-ins.
    #[serde(default)]
    pub exact_match: BTreeMap<String, bool>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown image {0}")]
    NotFound(String),
    #[error("stale revision {given}, current is {current}")]
    Conflict { given: u64, current: u64 },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error(transparent)]
    Transition(#[from] DatasetError),
    #[error("image {0} has no pose to review")]
    NoPose(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.into(), source })?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|source| StoreError::Parse { path: path.into(), line: source.line(), source })?;
        m.validate()?;
        Ok(m)
    }

    /// Image ids are unique and every image's model has a mesh entry.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(StoreError::Manifest(format!("duplicate image id {}", img.image_id)));
            }
            if !self.models.contains_key(&img.model_id) {
                return Err(StoreError::Manifest(format!(
                    "image {} (category {}) refers to unknown model {}",
                    img.image_id, img.category, img.model_id
                )));
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub image_path: String,
    pub category: String,
    pub model_id: String,
    pub pose: Option<PoseParams>,
    pub status: AnnotationStatus,
    pub annotator: String,
    pub updated_at: DateTime<Utc>,
    pub revision: u64,
}

impl AnnotationRecord {
    fn fresh(img: &ImageEntry) -> Self {
        AnnotationRecord {
            image_id: img.image_id.clone(),
            image_path: img.image_path.clone(),
            category: img.category.clone(),
            model_id: img.model_id.clone(),
            pose: None,
            status: AnnotationStatus::Unannotated,
            annotator: String::new(),
            updated_at: DateTime::<Utc>::UNIX_EPOCH,
            revision: 0,
        }
    }
}

struct Inner {
    records: BTreeMap<String, AnnotationRecord>,
    log: Option<(PathBuf, File)>,
}

pub struct AnnotationStore {
    inner: RwLock<Inner>,
}

impl AnnotationStore {
    /// Store without persistence.
    pub fn in_memory(manifest: &DatasetManifest) -> Self {
        let records = manifest.images.iter().map(|i| (i.image_id.clone(), AnnotationRecord::fresh(i))).collect();
        AnnotationStore { inner: RwLock::new(Inner { records, log: None }) }
    }

    /// Replays `log` (if it exists) over the manifest's images and appends
    /// future writes to it. Log lines for images not in the manifest are
    /// ignored.
    pub fn open(manifest: &DatasetManifest, log: &Path) -> Result<Self, StoreError> {
        let store = Self::in_memory(manifest);
        let io_err = |source| StoreError::Io { path: log.into(), source };
        {
            let mut inner = store.inner.write().unwrap();
            if log.exists() {
                let reader = BufReader::new(File::open(log).map_err(io_err)?);
                for (i, line) in reader.lines().enumerate() {
                    let line = line.map_err(io_err)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: AnnotationRecord = serde_json::from_str(&line)
                        .map_err(|source| StoreError::Parse { path: log.into(), line: i + 1, source })?;
                    if let Some(cur) = inner.records.get_mut(&rec.image_id) {
                        if rec.revision > cur.revision {
                            *cur = rec;
                        }
                    }
                }
            }
            let file = OpenOptions::new().create(true).append(true).open(log).map_err(io_err)?;
            inner.log = Some((log.to_path_buf(), file));
        }
        Ok(store)
    }

    pub fn get(&self, image_id: &str) -> Option<AnnotationRecord> {
        self.inner.read().unwrap().records.get(image_id).cloned()
    }

    pub fn list(&self, status: Option<AnnotationStatus>) -> Vec<AnnotationRecord> {
        let inner = self.inner.read().unwrap();
        inner.records.values().filter(|r| status.is_none_or(|s| r.status == s)).cloned().collect()
    }

    fn commit(inner: &mut Inner, mut rec: AnnotationRecord, annotator: &str) -> Result<AnnotationRecord, StoreError> {
        rec.revision += 1;
        rec.updated_at = Utc::now();
        rec.annotator = annotator.to_string();
        if let Some((path, file)) = inner.log.as_mut() {
            let io_err = |source| StoreError::Io { path: path.clone(), source };
            let mut line = serde_json::to_vec(&rec).map_err(|e| io_err(e.into()))?;
            line.push(b'\n');
            file.write_all(&line).map_err(io_err)?;
            file.flush().map_err(io_err)?;
        }
        inner.records.insert(rec.image_id.clone(), rec.clone());
        Ok(rec)
    }

    fn check_revision(rec: &AnnotationRecord, given: u64) -> Result<(), StoreError> {
        if given != rec.revision {
            return Err(StoreError::Conflict { given, current: rec.revision });
        }
        Ok(())
    }

    /// Saves a pose. `revision` must equal the stored revision. Saving moves
    /// unannotated and flagged records to annotated; approved records must
    /// be flagged before they can change.
    pub fn put_pose(
        &self,
        image_id: &str,
        pose: PoseParams,
        revision: u64,
        annotator: &str,
    ) -> Result<AnnotationRecord, StoreError> {
        pose.validate().map_err(|e| StoreError::InvalidPose(e.to_string()))?;
        let mut inner = self.inner.write().unwrap();
        let mut rec = inner.records.get(image_id).cloned().ok_or_else(|| StoreError::NotFound(image_id.into()))?;
        Self::check_revision(&rec, revision)?;
        rec.status = match rec.status {
            AnnotationStatus::Annotated => AnnotationStatus::Annotated,
            s => s.transition(AnnotationStatus::Annotated)?,
        };
        rec.pose = Some(pose.canonical());
        Self::commit(&mut inner, rec, annotator)
    }

    /// Moves a record along the review workflow. With `revision`, stale
    /// writes are rejected as in [`AnnotationStore::put_pose`].
    pub fn set_status(
        &self,
        image_id: &str,
        status: AnnotationStatus,
        revision: Option<u64>,
        annotator: &str,
    ) -> Result<AnnotationRecord, StoreError> {
        let mut inner = self.inner.write().unwrap();
        let mut rec = inner.records.get(image_id).cloned().ok_or_else(|| StoreError::NotFound(image_id.into()))?;
        if let Some(r) = revision {
            Self::check_revision(&rec, r)?;
        }
        if rec.pose.is_none() {
            return Err(StoreError::NoPose(image_id.into()));
        }
        rec.status = rec.status.transition(status)?;
        Self::commit(&mut inner, rec, annotator)
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.inner.read().unwrap().log.as_ref().map(|(p, _)| p.clone())
    }
}

/// CSV with columns `parameter,bin,lo_rad,hi_rad,count`.
pub fn histogram_csv(h: &PoseHistograms) -> String {
    let mut out = String::from("parameter,bin,lo_rad,hi_rad,count\n");
    for (name, hist) in [("azimuth", &h.azimuth), ("elevation", &h.elevation), ("theta", &h.theta)] {
        for (i, c) in hist.counts.iter().enumerate() {
            out.push_str(&format!("{name},{i},{:?},{:?},{c}\n", hist.edges[i], hist.edges[i + 1]));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::sync::Arc;

    pub(crate) fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            name: "test".into(),
            images: (0..n)
                .map(|i| ImageEntry {
                    image_id: format!("img{i}"),
                    image_path: format!("images/img{i}.png"),
                    category: "sedan".into(),
                    model_id: "cube".into(),
                    split: Some(if i % 2 == 0 { SplitTag::Train } else { SplitTag::Test }),
                    width: Some(64),
                    height: Some(48),
                })
                .collect(),
            models: BTreeMap::from([("cube".into(), "models/cube.obj".into())]),
            exact_match: BTreeMap::from([("sedan".into(), false)]),
        }
    }

    fn pose() -> PoseParams {
        PoseParams::new(0.4, 0.2, 0.0, 5.0, 100.0, 32.0, 24.0).unwrap()
    }

    #[test]
    fn manifest_validation() {
        let mut m = manifest(2);
        assert!(m.validate().is_ok());
        m.images[1].model_id = "nope".into();
        assert!(matches!(m.validate(), Err(StoreError::Manifest(_))));
        let mut m = manifest(2);
        m.images[1].image_id = "img0".into();
        assert!(matches!(m.validate(), Err(StoreError::Manifest(_))));
    }

    #[test]
    fn put_increments_revision_and_rejects_stale() {
        let store = AnnotationStore::in_memory(&manifest(1));
        let r = store.put_pose("img0", pose(), 0, "ann").unwrap();
        assert_eq!((r.revision, r.status), (1, AnnotationStatus::Annotated));
        assert!(matches!(store.put_pose("img0", pose(), 0, "ann"), Err(StoreError::Conflict { given: 0, current: 1 })));
        assert!(matches!(store.put_pose("nope", pose(), 0, "ann"), Err(StoreError::NotFound(_))));
        let bad = PoseParams { depth: -1.0, ..pose() };
        assert!(matches!(store.put_pose("img0", bad, 1, "ann"), Err(StoreError::InvalidPose(_))));
        assert_eq!(store.get("img0").unwrap().revision, 1);
    }

    #[test]
    fn workflow_through_store() {
        let store = AnnotationStore::in_memory(&manifest(1));
        assert!(matches!(store.set_status("img0", AnnotationStatus::Approved, None, "r"), Err(StoreError::NoPose(_))));
        store.put_pose("img0", pose(), 0, "a").unwrap();
        let r = store.set_status("img0", AnnotationStatus::Flagged, Some(1), "r").unwrap();
        assert_eq!(r.status, AnnotationStatus::Flagged);
        assert!(matches!(store.set_status("img0", AnnotationStatus::Approved, None, "r"), Err(StoreError::Transition(_))));
        let r = store.put_pose("img0", pose(), 2, "a").unwrap();
        assert_eq!(r.status, AnnotationStatus::Annotated);
        let r = store.set_status("img0", AnnotationStatus::Approved, Some(3), "r").unwrap();
        assert_eq!((r.status, r.revision), (AnnotationStatus::Approved, 4));
        assert!(matches!(store.put_pose("img0", pose(), 4, "a"), Err(StoreError::Transition(_))));
        assert_eq!(store.list(Some(AnnotationStatus::Approved)).len(), 1);
        assert!(store.list(Some(AnnotationStatus::Flagged)).is_empty());
    }

    #[test]
    fn log_replay_keeps_last_revision() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("annotations.jsonl");
        let m = manifest(2);
        {
            let store = AnnotationStore::open(&m, &log).unwrap();
            store.put_pose("img0", pose(), 0, "a").unwrap();
            store.put_pose("img0", PoseParams { depth: 7.0, ..pose() }, 1, "b").unwrap();
            store.set_status("img0", AnnotationStatus::Flagged, None, "r").unwrap();
        }
        assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
        let store = AnnotationStore::open(&m, &log).unwrap();
        let r = store.get("img0").unwrap();
        assert_eq!((r.revision, r.status, r.annotator.as_str()), (3, AnnotationStatus::Flagged, "r"));
        assert_eq!(r.pose.unwrap().depth, 7.0);
        assert_eq!(store.get("img1").unwrap().revision, 0);
    }

    #[test]
    fn record_serialization_is_lossless() {
        let store = AnnotationStore::in_memory(&manifest(1));
        let p = PoseParams::new(0.1 + 0.2, 1e-17, -0.333333333333333, 3.000000000000001, 512.5, 0.1, 1e300).unwrap();
        let r = store.put_pose("img0", p, 0, "ann").unwrap();
        let back: AnnotationRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn concurrent_puts_have_one_winner() {
        let store = Arc::new(AnnotationStore::in_memory(&manifest(1)));
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let s = store.clone();
                std::thread::spawn(move || s.put_pose("img0", PoseParams { depth: 3.0 + i as f64, ..pose() }, 0, "t").is_ok())
            })
            .collect();
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|w| *w).count();
        assert_eq!(wins, 1);
        assert_eq!(store.get("img0").unwrap().revision, 1);
    }

    #[test]
    fn histogram_csv_rows() {
        let h = finepose_core::pose_histograms(&[pose(), pose()], 4).unwrap();
        let csv = histogram_csv(&h);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.lines().nth(1).unwrap().starts_with("azimuth,0,0.0,"));
    }
}
