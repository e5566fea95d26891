//! HTTP API backing the annotation client.

use std::collections::{HashMap, VecDeque};
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use finepose_core::dataset::{pose_histograms, AnnotationStatus, PoseHistograms};
use finepose_core::mesh::{decimate, TriangleMesh};
use finepose_core::{build_projection, project_point, rasterize_field, sample_pose, PoseParams, PoseSamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::load_normalized;
use crate::store::{AnnotationRecord, AnnotationStore, DatasetManifest, StoreError};

/// Triangle budget of meshes sent to clients.
pub const CLIENT_TRIANGLES: usize = 5000;

/// Number of poses in `/api/testvectors`.
pub const TEST_VECTOR_POSES: usize = 100;

/// Overlay color of rendered silhouettes (RGBA).
pub const SILHOUETTE_RGBA: [u8; 4] = [0, 255, 0, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_root: PathBuf,
    pub manifest: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub render_cache: usize,
    /// Annotation log; defaults to `annotations.jsonl` under the data root.
    pub annotation_log: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} does not exist")]
    MissingPath(PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        for p in [Some(&self.data_root), Some(&self.manifest), self.static_dir.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(ServiceError::MissingPath(p.clone()));
            }
        }
        Ok(())
    }
}

struct ModelCache {
    full: Arc<TriangleMesh>,
    client: Arc<TriangleMesh>,
}

type RenderKey = (String, [i64; 7]);

struct RenderCache {
    capacity: usize,
    order: VecDeque<RenderKey>,
    items: HashMap<RenderKey, Bytes>,
}

impl RenderCache {
    fn get(&self, key: &RenderKey) -> Option<Bytes> {
        self.items.get(key).cloned()
    }

    fn insert(&mut self, key: RenderKey, png: Bytes) {
        if self.capacity == 0 || self.items.contains_key(&key) {
            return;
        }
        while self.items.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.items.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key.clone());
        self.items.insert(key, png);
    }
}

pub struct AppState {
    pub manifest: DatasetManifest,
    pub data_root: PathBuf,
    pub store: AnnotationStore,
    models: RwLock<HashMap<String, Arc<ModelCache>>>,
    renders: Mutex<RenderCache>,
}

impl AppState {
    pub fn new(manifest: DatasetManifest, data_root: PathBuf, store: AnnotationStore, render_cache: usize) -> Self {
        AppState {
            manifest,
            data_root,
            store,
            models: RwLock::new(HashMap::new()),
            renders: Mutex::new(RenderCache { capacity: render_cache, order: VecDeque::new(), items: HashMap::new() }),
        }
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let manifest = DatasetManifest::load(&config.manifest)?;
        let log = config.annotation_log.clone().unwrap_or_else(|| config.data_root.join("annotations.jsonl"));
        let store = AnnotationStore::open(&manifest, &log)?;
        Ok(AppState::new(manifest, config.data_root.clone(), store, config.render_cache))
    }

    fn model(&self, model_id: &str) -> Result<Arc<ModelCache>, ApiError> {
        if let Some(m) = self.models.read().unwrap().get(model_id) {
            return Ok(m.clone());
        }
        let rel = self.manifest.models.get(model_id).ok_or_else(|| ApiError::not_found(format!("unknown model {model_id}")))?;
        let full = load_normalized(&self.data_root.join(rel), model_id).map_err(|e| ApiError::internal(e.to_string()))?;
        let client = decimate(&full, CLIENT_TRIANGLES);
        let entry = Arc::new(ModelCache { full: Arc::new(full), client: Arc::new(client) });
        self.models.write().unwrap().insert(model_id.to_string(), entry.clone());
        Ok(entry)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict { .. } | StoreError::Transition(_) | StoreError::NoPose(_) => StatusCode::CONFLICT,
            StoreError::InvalidPose(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_status(s: &str) -> ApiResult<AnnotationStatus> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| ApiError::bad_request(format!("unknown status {s}")))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub category: String,
    pub model_id: String,
    pub status: AnnotationStatus,
    pub revision: u64,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list_images(State(s): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> ApiResult<Json<Vec<ImageSummary>>> {
    let status = q.status.as_deref().map(parse_status).transpose()?;
    Ok(Json(
        s.store
            .list(status)
            .into_iter()
            .map(|r| ImageSummary {
                image_id: r.image_id,
                category: r.category,
                model_id: r.model_id,
                status: r.status,
                revision: r.revision,
            })
            .collect(),
    ))
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image_file(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let img = s.manifest.image(&id).ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))?;
    let path = s.data_root.join(&img.image_path);
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found(format!("image file for {id} missing")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshPayload {
    pub model_id: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

async fn mesh_json(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<MeshPayload>> {
    let m = s.model(&id)?;
    Ok(Json(MeshPayload {
        model_id: id,
        vertices: m.client.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
        triangles: m.client.triangles().to_vec(),
    }))
}

async fn get_annotation(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AnnotationRecord>> {
    s.store.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PutAnnotation {
    pub pose: PoseParams,
    pub revision: u64,
    #[serde(default)]
    pub annotator: Option<String>,
}

async fn put_annotation(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AnnotationRecord>> {
    if s.store.get(&id).is_none() {
        return Err(ApiError::not_found(format!("unknown image {id}")));
    }
    let req: PutAnnotation = parse_body(&body)?;
    let annotator = req.annotator.unwrap_or_default();
    Ok(Json(s.store.put_pose(&id, req.pose, req.revision, &annotator)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: String,
    #[serde(default)]
    pub revision: Option<u64>,
    #[serde(default)]
    pub annotator: Option<String>,
}

async fn post_status(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AnnotationRecord>> {
    if s.store.get(&id).is_none() {
        return Err(ApiError::not_found(format!("unknown image {id}")));
    }
    let req: StatusChange = parse_body(&body)?;
    let status = parse_status(&req.status)?;
    let annotator = req.annotator.unwrap_or_default();
    Ok(Json(s.store.set_status(&id, status, req.revision, &annotator)?))
}

#[derive(Debug, Deserialize)]
pub struct RenderQuery {
    pub image_id: String,
    pub a: Option<f64>,
    pub e: Option<f64>,
    pub t: Option<f64>,
    pub d: Option<f64>,
    pub f: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
}

impl RenderQuery {
    fn pose(&self) -> ApiResult<Option<PoseParams>> {
        let all = [self.a, self.e, self.t, self.d, self.f, self.u, self.v];
        if all.iter().all(Option::is_none) {
            return Ok(None);
        }
        let [Some(a), Some(e), Some(t), Some(d), Some(f), Some(u), Some(v)] = all else {
            return Err(ApiError::bad_request("give all of a, e, t, d, f, u, v or none"));
        };
        PoseParams::new(a, e, t, d, f, u, v).map(Some).map_err(|e| ApiError::bad_request(e.to_string()))
    }
}

fn quantize(p: &PoseParams) -> [i64; 7] {
    let q = |v: f64, s: f64| (v * s).round() as i64;
    [
        q(p.azimuth_rad, 1e9),
        q(p.elevation_rad, 1e9),
        q(p.theta_rad, 1e9),
        q(p.depth, 1e9),
        q(p.focal_px, 1e6),
        q(p.principal_u_px, 1e6),
        q(p.principal_v_px, 1e6),
    ]
}

/// PNG of the silhouette: [`SILHOUETTE_RGBA`] where the model covers a
/// pixel center, fully transparent elsewhere.
pub fn render_silhouette(mesh: &TriangleMesh, pose: &PoseParams, width: usize, height: usize) -> Vec<u8> {
    let field = rasterize_field(mesh, pose, width, height);
    let mut rgba = vec![0u8; width * height * 4];
    for (px, &m) in rgba.chunks_exact_mut(4).zip(field.mask()) {
        if m {
            px.copy_from_slice(&SILHOUETTE_RGBA);
        }
    }
    let img = image::RgbaImage::from_raw(width as u32, height as u32, rgba).expect("buffer size matches");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}

async fn render(State(s): State<Arc<AppState>>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let img = s.manifest.image(&q.image_id).ok_or_else(|| ApiError::not_found(format!("unknown image {}", q.image_id)))?.clone();
    let pose = match q.pose()? {
        Some(p) => p,
        None => s
            .store
            .get(&q.image_id)
            .and_then(|r| r.pose)
            .ok_or_else(|| ApiError::not_found(format!("image {} has no saved pose", q.image_id)))?,
    };
    let (width, height) = match (img.width, img.height) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            let path = s.data_root.join(&img.image_path);
            let (w, h) = image::image_dimensions(&path).map_err(|e| ApiError::internal(e.to_string()))?;
            (w as usize, h as usize)
        }
    };
    let key = (q.image_id.clone(), quantize(&pose));
    let cached = s.renders.lock().unwrap().get(&key);
    let png = match cached {
        Some(png) => png,
        None => {
            let model = s.model(&img.model_id)?;
            let png = tokio::task::spawn_blocking(move || render_silhouette(&model.full, &pose, width, height))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?;
            let png = Bytes::from(png);
            s.renders.lock().unwrap().insert(key, png.clone());
            png
        }
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    bins: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub by_status: HashMap<String, usize>,
    pub histograms: Option<PoseHistograms>,
}

async fn stats(State(s): State<Arc<AppState>>, Query(q): Query<StatsQuery>) -> ApiResult<Json<Stats>> {
    let bins = q.bins.unwrap_or(36);
    if bins == 0 {
        return Err(ApiError::bad_request("bins must be positive"));
    }
    let records = s.store.list(None);
    let mut by_status = HashMap::new();
    for r in &records {
        let name = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        *by_status.entry(name).or_insert(0) += 1;
    }
    let poses: Vec<PoseParams> =
        records.iter().filter(|r| r.status != AnnotationStatus::Unannotated).filter_map(|r| r.pose).collect();
    let histograms = pose_histograms(&poses, bins).ok();
    Ok(Json(Stats { count: poses.len(), by_status, histograms }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub pose: PoseParams,
    /// Rows of `P = K[R|T]`.
    pub projection: [[f64; 4]; 3],
    pub points: Vec<[f64; 3]>,
    pub pixels: Vec<[f64; 2]>,
}

/// Canonical pose-to-pixel vectors for client conformance checks.
pub fn test_vectors() -> Vec<TestVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = PoseSamplerConfig::default();
    let mut points = vec![[0.0, 0.0, 0.0]];
    for x in [-0.5, 0.5] {
        for y in [-0.25, 0.25] {
            for z in [-0.2, 0.2] {
                points.push([x, y, z]);
            }
        }
    }
    (0..TEST_VECTOR_POSES)
        .map(|_| {
            let pose = sample_pose(&mut rng, &config).expect("default sampler config is valid");
            let p = build_projection(&pose);
            let m = p.matrix();
            let projection = [0, 1, 2].map(|r| [0, 1, 2, 3].map(|c| m[(r, c)]));
            let pixels = points
                .iter()
                .map(|q| {
                    let x = project_point(&pose, &nalgebra::Vector3::new(q[0], q[1], q[2])).expect("points lie in front");
                    [x.x, x.y]
                })
                .collect();
            TestVector { pose, projection, points: points.clone(), pixels }
        })
        .collect()
}

async fn testvectors() -> Json<Vec<TestVector>> {
    Json(test_vectors())
}

pub fn router(state: Arc<AppState>, static_dir: Option<&FsPath>) -> Router {
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/file", get(image_file))
        .route("/api/models/{id}/mesh.json", get(mesh_json))
        .route("/api/annotations/{id}", get(get_annotation).put(put_annotation))
        .route("/api/annotations/{id}/status", post(post_status))
        .route("/api/render", get(render))
        .route("/api/stats", get(stats))
        .route("/api/testvectors", get(testvectors))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = Arc::new(AppState::from_config(&config)?);
    let app = router(state, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
