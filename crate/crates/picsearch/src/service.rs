//! Local HTTP/JSON service.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use picsearch_core::catalog::is_valid_relative_path;
use picsearch_core::{FeatureIndex, QueryError, QuerySpec};
use serde::{Deserialize, Serialize};

use crate::api::{ErrorBody, SearchRequest, SearchResponse};
use crate::config::AppConfig;
use crate::decode;
use crate::indexer::refresh_index;
use crate::model::{ModelError, Registry, Role};
use crate::pipeline::{search, SearchContext, SearchError};
use crate::scan::{canonical_root, default_extensions, hash_file, scan_directory_reusing};
use crate::store::{index_dir, load_index, StoreError};

pub const MAX_THUMBNAIL: u32 = 2048;

/// An error response: HTTP status plus a machine-readable code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody::new(code, message) }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message.to_string())
    }

    fn bad_path(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_PATH", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownModel(_) | ModelError::ModelFileMissing(_) | ModelError::WrongRole { .. } => {
                Self::new(StatusCode::NOT_FOUND, "MODEL_MISSING", e.to_string())
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "MODEL_ERROR", other.to_string()),
        }
    }
}

/// Maps a search failure onto the same codes the CLI reports.
pub fn search_error(e: &SearchError) -> ApiError {
    let code = error_code(e);
    let status = match code {
        "EMPTY_PROMPT" | "BAD_REQUEST" => StatusCode::BAD_REQUEST,
        "PROMPT_NOT_FOUND" => StatusCode::UNPROCESSABLE_ENTITY,
        "STALE_INDEX" | "MODEL_MISMATCH" => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError::new(status, code, e.to_string())
}

pub fn error_code(e: &SearchError) -> &'static str {
    match e {
        SearchError::Query(QueryError::EmptyPrompt) => "EMPTY_PROMPT",
        SearchError::Query(QueryError::PromptNotFound { .. }) => "PROMPT_NOT_FOUND",
        SearchError::Query(QueryError::EmptyCatalog) => "PROMPT_NOT_FOUND",
        SearchError::Query(
            QueryError::BadThreshold(_) | QueryError::BadK | QueryError::BadMaxAttempts | QueryError::BadPad(_),
        ) => "BAD_REQUEST",
        SearchError::StaleIndex { .. } => "STALE_INDEX",
        SearchError::ModelMismatch(_) => "MODEL_MISMATCH",
        _ => "INTERNAL",
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub model: String,
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    pub message: String,
}

/// Shared service state. Indexes are immutable and replaced whole, so a
/// search keeps using the index it started with while a job swaps in a new
/// one.
pub struct AppState {
    pub config: AppConfig,
    pub registry: Registry,
    root: PathBuf,
    indexes: RwLock<HashMap<String, Arc<FeatureIndex>>>,
    jobs: Mutex<HashMap<String, JobStatus>>,
}

impl AppState {
    pub fn new(config: AppConfig, registry: Registry) -> Result<Self, crate::scan::ScanError> {
        let root = canonical_root(&config.catalog_root)?;
        Ok(Self { config, registry, root, indexes: RwLock::new(HashMap::new()), jobs: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn root_str(&self) -> &str {
        self.root.to_str().expect("catalog roots are UTF-8")
    }

    /// The current index for a model, read from disk on first use.
    pub fn index(&self, model: &str) -> Result<Option<Arc<FeatureIndex>>, StoreError> {
        if let Some(ix) = self.indexes.read().unwrap_or_else(|e| e.into_inner()).get(model) {
            return Ok(Some(ix.clone()));
        }
        match load_index(&index_dir(&self.config.index_cache_dir, self.root_str(), model)) {
            Ok(ix) => {
                let ix = Arc::new(ix);
                let mut map = self.indexes.write().unwrap_or_else(|e| e.into_inner());
                Ok(Some(map.entry(model.to_string()).or_insert(ix).clone()))
            }
            Err(StoreError::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Replaces a model's index for all later requests.
    pub fn install_index(&self, model: &str, index: FeatureIndex) {
        self.indexes.write().unwrap_or_else(|e| e.into_inner()).insert(model.to_string(), Arc::new(index));
    }

    fn set_job(&self, status: JobStatus) {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(status.model.clone(), status);
    }

    pub fn job(&self, model: &str) -> JobStatus {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(model).cloned().unwrap_or(JobStatus {
            model: model.into(),
            state: JobState::Idle,
            done: 0,
            total: 0,
            message: String::new(),
        })
    }

    /// Marks a job as running unless one already is.
    fn claim_job(&self, model: &str) -> bool {
        let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        if jobs.get(model).is_some_and(|j| j.state == JobState::Running) {
            return false;
        }
        jobs.insert(
            model.into(),
            JobStatus { model: model.into(), state: JobState::Running, done: 0, total: 0, message: "scanning".into() },
        );
        true
    }

    /// Scans the catalog and builds or updates the model's index, then swaps
    /// it in. Runs on the calling thread.
    pub fn run_index_job(&self, model: &str, force: bool) {
        let result = (|| -> Result<String, String> {
            let extractor = self.registry.extractor(model).map_err(|e| e.to_string())?;
            let previous = self.index(model).ok().flatten().map(|ix| ix.covered_snapshot(self.root_str()));
            let scan = scan_directory_reusing(&self.root, &default_extensions(), previous.as_ref())
                .map_err(|e| e.to_string())?;
            let dir = index_dir(&self.config.index_cache_dir, self.root_str(), model);
            let mut progress = |done, total| {
                self.set_job(JobStatus {
                    model: model.into(),
                    state: JobState::Running,
                    done,
                    total,
                    message: "extracting features".into(),
                })
            };
            let outcome = refresh_index(&self.root, &dir, &scan.snapshot, extractor.as_ref(), force, &mut progress)
                .map_err(|e| e.to_string())?;
            let rows = outcome.index.len();
            let skipped = outcome.index.skipped().len();
            self.install_index(model, outcome.index);
            Ok(format!("{rows} images indexed, {skipped} skipped"))
        })();
        let (state, message) = match result {
            Ok(m) => (JobState::Done, m),
            Err(m) => (JobState::Failed, m),
        };
        let last = self.job(model);
        self.set_job(JobStatus { model: model.into(), state, done: last.done, total: last.total, message });
    }

    /// One search against the current index.
    pub fn search(&self, request: &SearchRequest) -> Result<SearchResponse, ApiError> {
        let model = request.model.clone().unwrap_or_else(|| self.config.default_model.clone());
        let detector_id = self.config.default_detector.clone();
        let spec = QuerySpec {
            threshold: request.threshold.unwrap_or(self.config.default_threshold),
            k: request.k.unwrap_or(self.config.default_k),
            seed: request.seed,
            ..QuerySpec::new(request.prompt.clone())
        };
        spec.validate().map_err(|e| search_error(&SearchError::Query(e)))?;
        let extractor = self.registry.extractor(&model)?;
        let detector = self.registry.detector(&detector_id)?;
        let index = self.index(&model).map_err(ApiError::internal)?.ok_or_else(|| {
            ApiError::new(StatusCode::CONFLICT, "STALE_INDEX", format!("no index for `{model}`; start an index job"))
        })?;
        let covered = index.covered_snapshot(self.root_str());
        let scan =
            scan_directory_reusing(&self.root, &default_extensions(), Some(&covered)).map_err(ApiError::internal)?;
        let ctx = SearchContext {
            root: &self.root,
            snapshot: &scan.snapshot,
            index: &index,
            extractor: extractor.as_ref(),
            detector: detector.as_ref(),
        };
        let outcome = search(&ctx, &spec).map_err(|e| search_error(&e))?;
        Ok(SearchResponse::from_outcome(&model, &detector_id, &outcome))
    }

    /// Resolves a catalog-relative path, refusing anything outside the root.
    pub fn resolve_image(&self, path: &str) -> Result<PathBuf, ApiError> {
        if !is_valid_relative_path(path) {
            return Err(ApiError::bad_path(format!("{path:?} is not a catalog path")));
        }
        let ext = Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_lowercase);
        if !ext.is_some_and(|e| default_extensions().contains(&e)) {
            return Err(ApiError::bad_path(format!("{path:?} is not an image")));
        }
        let full = self
            .root
            .join(path)
            .canonicalize()
            .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("{path:?} does not exist")))?;
        if !full.starts_with(&self.root) || !full.is_file() {
            return Err(ApiError::bad_path(format!("{path:?} is outside the catalog")));
        }
        Ok(full)
    }

    /// A JPEG no larger than `size` on its longest side, cached by content.
    pub fn thumbnail(&self, file: &Path, size: u32) -> Result<Vec<u8>, ApiError> {
        let (hash, _) = hash_file(file).map_err(ApiError::internal)?;
        let cache = self.config.index_cache_dir.join("thumbnails").join(format!("{}-{size}.jpg", hash.to_hex()));
        if let Ok(bytes) = std::fs::read(&cache) {
            return Ok(bytes);
        }
        let image = decode::load_path(file)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "DECODE_ERROR", e.to_string()))?;
        let thumb = decode::to_dynamic(&image).thumbnail(size, size);
        let mut bytes = Vec::new();
        thumb.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Jpeg).map_err(ApiError::internal)?;
        if let Some(dir) = cache.parent() {
            if std::fs::create_dir_all(dir).is_ok() {
                if let Ok(tmp) = tempfile::NamedTempFile::new_in(dir) {
                    if std::fs::write(tmp.path(), &bytes).is_ok() {
                        let _ = tmp.persist(&cache);
                    }
                }
            }
        }
        Ok(bytes)
    }
}

type Shared = Arc<AppState>;

fn bad_json(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.body_text())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

#[derive(Serialize)]
struct ModelInfo {
    model_id: String,
    role: String,
    feature_dim: Option<usize>,
    size_bytes: Option<u64>,
    is_default: bool,
    indexed: bool,
}

async fn list_models(State(state): State<Shared>) -> Result<Json<Vec<ModelInfo>>, ApiError> {
    blocking(move || {
        let mut out = Vec::new();
        for d in state.registry.descriptors() {
            let indexed = d.role == Role::Extractor && matches!(state.index(&d.model_id), Ok(Some(_)));
            out.push(ModelInfo {
                model_id: d.model_id.clone(),
                role: d.role.to_string(),
                feature_dim: d.feature_dim,
                size_bytes: d.file_size().ok(),
                is_default: d.model_id == state.config.default_model || d.model_id == state.config.default_detector,
                indexed,
            });
        }
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRequest {
    #[serde(default)]
    dir: Option<PathBuf>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    force: bool,
}

async fn start_index(
    State(state): State<Shared>,
    req: Result<Json<IndexRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req.map_err(bad_json)?;
    if let Some(dir) = &req.dir {
        let same = canonical_root(dir).map(|d| d == state.root).unwrap_or(false);
        if !same {
            return Err(ApiError::bad_path("only the configured catalog root can be indexed"));
        }
    }
    let model = req.model.unwrap_or_else(|| state.config.default_model.clone());
    let d = state.registry.descriptor(&model)?;
    if d.role != Role::Extractor {
        return Err(ModelError::WrongRole { model_id: model, expected: Role::Extractor, actual: d.role }.into());
    }
    if !state.claim_job(&model) {
        return Err(ApiError::new(StatusCode::CONFLICT, "JOB_RUNNING", format!("an index job for `{model}` is running")));
    }
    let job_state = state.clone();
    let job_model = model.clone();
    tokio::task::spawn_blocking(move || job_state.run_index_job(&job_model, req.force));
    Ok((StatusCode::ACCEPTED, Json(state.job(&model))).into_response())
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    model: Option<String>,
}

async fn index_status(State(state): State<Shared>, Query(q): Query<StatusQuery>) -> Json<JobStatus> {
    let model = q.model.unwrap_or_else(|| state.config.default_model.clone());
    Json(state.job(&model))
}

async fn run_search(
    State(state): State<Shared>,
    req: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Json(req) = req.map_err(bad_json)?;
    blocking(move || state.search(&req).map(Json)).await
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    path: String,
    size: Option<u32>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<Shared>, Query(q): Query<ImageQuery>) -> Result<Response, ApiError> {
    blocking(move || {
        let file = state.resolve_image(&q.path)?;
        match q.size {
            None => {
                let bytes = std::fs::read(&file).map_err(ApiError::internal)?;
                Ok(([(header::CONTENT_TYPE, content_type(&file))], bytes).into_response())
            }
            Some(size) if (1..=MAX_THUMBNAIL).contains(&size) => {
                let bytes = state.thumbnail(&file, size)?;
                Ok(([(header::CONTENT_TYPE, "image/jpeg")], bytes).into_response())
            }
            Some(_) => Err(ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", format!("size must be 1..={MAX_THUMBNAIL}"))),
        }
    })
    .await
}

const PLACEHOLDER: &str = include_str!("placeholder.html");

async fn static_files(State(state): State<Shared>, uri: Uri) -> Result<Response, ApiError> {
    let Some(ui) = state.config.ui_dir.clone() else {
        return if uri.path() == "/" {
            Ok(Html(PLACEHOLDER).into_response())
        } else {
            Err(ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such page"))
        };
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if !is_valid_relative_path(rel) {
        return Err(ApiError::bad_path("bad asset path"));
    }
    let file = ui.join(rel);
    match tokio::fs::read(&file).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&file))], bytes).into_response()),
        Err(_) => Err(ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such asset")),
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/index", post(start_index))
        .route("/api/index/status", get(index_status))
        .route("/api/search", post(run_search))
        .route("/api/image", get(image))
        .fallback(get(static_files))
        .with_state(state)
}

pub async fn serve(state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(state.config.bind_address).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
