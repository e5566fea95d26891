#![cfg(feature = "annotation")]

use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use finepose::service::{router, AppState, ServiceConfig, TestVector};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn data_root(dir: &Path) -> ServiceConfig {
    fs::create_dir_all(dir.join("models")).unwrap();
    fs::create_dir_all(dir.join("images")).unwrap();
    let meshes = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/meshes");
    fs::copy(meshes.join("car.obj"), dir.join("models/car.obj")).unwrap();
    let images: Vec<Value> = (0..3)
        .map(|i| json!({ "image_id": format!("c{i}"), "image_path": format!("images/c{i}.png"), "category": "sedan", "model_id": "car" }))
        .collect();
    for i in 0..3 {
        image::RgbImage::new(80, 60).save(dir.join(format!("images/c{i}.png"))).unwrap();
    }
    let manifest = json!({ "name": "cars", "images": images, "models": { "car": "models/car.obj" }, "exact_match": { "sedan": false } });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        data_root: dir.to_path_buf(),
        manifest: dir.join("manifest.json"),
        static_dir: None,
        render_cache: 8,
        annotation_log: None,
    }
}

fn app(config: &ServiceConfig) -> Router {
    router(Arc::new(AppState::from_config(config).unwrap()), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn pose(depth: f64) -> Value {
    json!({
        "azimuth_rad": 0.8, "elevation_rad": 0.25, "theta_rad": 0.02, "depth": depth,
        "focal_px": 90.0, "principal_u_px": 40.0, "principal_v_px": 30.0
    })
}

#[tokio::test]
async fn annotation_session() {
    let dir = tempfile::tempdir().unwrap();
    let config = data_root(dir.path());
    let app = app(&config);

    let (s, rec) = call(&app, "GET", "/api/annotations/c0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((rec["revision"].as_u64(), rec["status"].as_str()), (Some(0), Some("unannotated")));

    let (s, rec) = call(&app, "PUT", "/api/annotations/c0", Some(json!({ "pose": pose(5.0), "revision": 0, "annotator": "ann1" }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rec["revision"], 1);
    assert_eq!(rec["status"], "annotated");

    // A second client still holding revision 0.
    let (s, err) = call(&app, "PUT", "/api/annotations/c0", Some(json!({ "pose": pose(6.0), "revision": 0, "annotator": "ann2" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("stale"));

    let (s, _) = call(&app, "POST", "/api/annotations/c0/status", Some(json!({ "status": "flagged", "revision": 1 }))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "POST", "/api/annotations/c0/status", Some(json!({ "status": "approved" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, rec) = call(&app, "PUT", "/api/annotations/c0", Some(json!({ "pose": pose(5.5), "revision": 2, "annotator": "ann1" }))).await;
    assert_eq!((s, rec["status"].as_str()), (StatusCode::OK, Some("annotated")));
    let (s, rec) = call(&app, "POST", "/api/annotations/c0/status", Some(json!({ "status": "approved", "revision": 3, "annotator": "rev" }))).await;
    assert_eq!((s, rec["revision"].as_u64()), (StatusCode::OK, Some(4)));
    let (s, _) = call(&app, "PUT", "/api/annotations/c0", Some(json!({ "pose": pose(5.0), "revision": 4 }))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, list) = call(&app, "GET", "/api/images?status=unannotated", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);

    // Restart from the log.
    let app = self::app(&config);
    let (_, rec) = call(&app, "GET", "/api/annotations/c0", None).await;
    assert_eq!((rec["revision"].as_u64(), rec["status"].as_str()), (Some(4), Some("approved")));
    assert_eq!(rec["pose"]["depth"], 5.5);
    assert_eq!(rec["annotator"], "rev");
}

#[tokio::test]
async fn concurrent_conflicting_puts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&data_root(dir.path()));
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, "PUT", "/api/annotations/c1", Some(json!({ "pose": pose(4.0 + i as f64), "revision": 0 }))).await.0
            })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::OK).count(), 1);
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::CONFLICT).count(), 7);
}

/// Projection as a client would implement it from the declared angle
/// convention, independent of the server's camera code.
fn client_project(p: &Value, x: [f64; 3]) -> [f64; 2] {
    let g = |k: &str| p[k].as_f64().unwrap();
    let (a, e, t) = (g("azimuth_rad"), g("elevation_rad"), g("theta_rad"));
    let ry = [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, e.cos(), -e.sin()], [0.0, e.sin(), e.cos()]];
    let rz = [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]];
    let apply = |m: [[f64; 3]; 3], v: [f64; 3]| [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2]);
    let c = apply(rz, apply(rx, apply(ry, x)));
    let z = c[2] + g("depth");
    [g("focal_px") * c[0] / z + g("principal_u_px"), g("focal_px") * c[1] / z + g("principal_v_px")]
}

#[tokio::test]
async fn client_conformance_with_test_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&data_root(dir.path()));
    let (s, body) = call(&app, "GET", "/api/testvectors", None).await;
    assert_eq!(s, StatusCode::OK);
    let vectors: Vec<TestVector> = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(vectors.len(), 100);
    let mut worst = 0.0f64;
    for (tv, raw) in vectors.iter().zip(body.as_array().unwrap()) {
        for (x, px) in tv.points.iter().zip(&tv.pixels) {
            let c = client_project(&raw["pose"], *x);
            worst = worst.max((c[0] - px[0]).hypot(c[1] - px[1]));
        }
    }
    assert!(worst < 0.5, "worst client deviation {worst} px");
}

#[tokio::test]
async fn render_follows_saved_pose() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&data_root(dir.path()));
    call(&app, "PUT", "/api/annotations/c2", Some(json!({ "pose": pose(5.0), "revision": 0 }))).await;
    let req = Request::builder().uri("/api/render?image_id=c2").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let png = resp.into_body().collect().await.unwrap().to_bytes();
    let img = image::load_from_memory(&png).unwrap().to_rgba8();
    assert_eq!(img.dimensions(), (80, 60));
    assert!(img.pixels().any(|p| p.0[3] > 0));
    let (s, stats) = call(&app, "GET", "/api/stats?bins=12", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stats["histograms"]["theta"]["counts"].as_array().unwrap().len(), 12);
}
