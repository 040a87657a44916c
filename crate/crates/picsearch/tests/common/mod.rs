#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use image::{Rgb, RgbImage as PngImage};
use picsearch::model::{ModelDescriptor, Registry};
use picsearch_core::stub::{ScriptedBox, ScriptedDetector, ScriptedRegion};
use picsearch_core::RgbImage;

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn dataset() -> PathBuf {
    workspace().join("data")
}

/// Writes a solid-color PNG (with a darker top-left quadrant so quadrant
/// features differ from a plain color).
pub fn write_png(root: &Path, rel: &str, w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
    let img = PngImage::from_fn(w, h, |x, y| {
        if x < w / 2 && y < h / 2 {
            Rgb([rgb[0] / 2, rgb[1] / 2, rgb[2] / 2])
        } else {
            Rgb(rgb)
        }
    });
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    img.save(&p).unwrap();
    picsearch::decode::load_path(&p).unwrap()
}

pub fn stub_extractor_descriptor(id: &str) -> ModelDescriptor {
    ModelDescriptor::parse(
        &format!("model_id = {id}\nrole = extractor\nbackend = quadrant-stub\n"),
        Path::new("stub.model"),
    )
    .unwrap()
}

pub fn stub_registry() -> Registry {
    Registry::from_descriptors(vec![stub_extractor_descriptor("quadrant")]).unwrap()
}

/// A scripted detector firing full-frame on the given images.
pub fn full_frame_detector(prompt: &str, images: &[(&RgbImage, f32)]) -> ScriptedDetector {
    let mut det = ScriptedDetector::new("scripted");
    for (img, score) in images {
        det.script(img, prompt, [ScriptedBox { region: ScriptedRegion::Full, score: *score }]);
    }
    det
}

/// Directory holding the exported ONNX models, exported on first use.
/// `None` (with the reason) when the export cannot run here.
pub fn onnx_models(models: &[&str], detector: bool) -> Result<PathBuf, String> {
    static LOCK: OnceLock<std::sync::Mutex<()>> = OnceLock::new();
    let _guard = LOCK.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    let dir = std::env::var_os("PICSEARCH_TEST_MODELS")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("target").join("picsearch-models"));
    let missing: Vec<&str> =
        models.iter().copied().filter(|m| !dir.join(format!("{m}.model")).exists()).collect();
    let need_detector = detector && !dir.join("owlvit-tiny.model").exists();
    if missing.is_empty() && !need_detector {
        return Ok(dir);
    }
    let mut cmd = Command::new("python3");
    cmd.arg(workspace().join("scripts/export_models.py")).arg("--out").arg(&dir).arg("--models").args(&missing);
    if need_detector {
        cmd.args(["--detector", "owlvit-tiny"]);
    }
    let out = cmd.output().map_err(|e| format!("cannot run python3: {e}"))?;
    if !out.status.success() {
        return Err(format!("model export failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(dir)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_picsearch")
}

/// A service over a private copy of the bundled gallery, with the stub
/// extractor and the scripted detector as defaults.
pub struct ServiceFixture {
    pub catalog: tempfile::TempDir,
    pub cache: tempfile::TempDir,
    pub state: std::sync::Arc<picsearch::service::AppState>,
}

pub fn service_fixture() -> ServiceFixture {
    let catalog = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let gallery = dataset().join("gallery");
    for entry in walkdir::WalkDir::new(&gallery) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(&gallery).unwrap();
        let target = catalog.path().join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
    let data = dataset();
    let detector = ModelDescriptor::parse(
        &format!(
            "model_id = scripted\nrole = detector\nbackend = scripted-stub\nfixtures = {}\nfixtures_root = {}\n",
            data.join("detections.tsv").display(),
            data.display()
        ),
        Path::new("scripted.model"),
    )
    .unwrap();
    let registry = Registry::from_descriptors(vec![stub_extractor_descriptor("quadrant"), detector]).unwrap();
    let config = picsearch::config::AppConfig {
        catalog_root: catalog.path().to_path_buf(),
        index_cache_dir: cache.path().to_path_buf(),
        default_model: "quadrant".into(),
        default_detector: "scripted".into(),
        ..Default::default()
    };
    let state = picsearch::service::AppState::new(config, registry).unwrap();
    ServiceFixture { catalog, cache, state: std::sync::Arc::new(state) }
}

pub async fn call(
    state: &std::sync::Arc<picsearch::service::AppState>,
    request: axum::http::Request<axum::body::Body>,
) -> (axum::http::StatusCode, Vec<u8>) {
    use tower::ServiceExt;
    let resp = picsearch::service::router(state.clone()).oneshot(request).await.unwrap();
    let status = resp.status();
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

pub fn get(uri: &str) -> axum::http::Request<axum::body::Body> {
    axum::http::Request::get(uri).body(axum::body::Body::empty()).unwrap()
}

pub fn post_json(uri: &str, body: serde_json::Value) -> axum::http::Request<axum::body::Body> {
    axum::http::Request::post(uri)
        .header("content-type", "application/json")
        .body(axum::body::Body::from(body.to_string()))
        .unwrap()
}

/// Starts an index job and waits for it to finish.
pub async fn index_and_wait(state: &std::sync::Arc<picsearch::service::AppState>, model: &str, force: bool) {
    let (status, body) = call(state, post_json("/api/index", serde_json::json!({"model": model, "force": force}))).await;
    assert_eq!(status, 202, "{}", String::from_utf8_lossy(&body));
    for _ in 0..2000 {
        let (_, body) = call(state, get(&format!("/api/index/status?model={model}"))).await;
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        match v["state"].as_str().unwrap() {
            "done" => return,
            "failed" => panic!("index job failed: {v}"),
            _ => tokio::time::sleep(std::time::Duration::from_millis(10)).await,
        }
    }
    panic!("index job did not finish");
}
