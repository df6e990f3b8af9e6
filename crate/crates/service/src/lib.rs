//! HTTP service: catalog listing, outfit composition, full and zoomed
//! generation, and run lookup.

pub mod catalog;
pub mod config;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use acdg::inferpipe::{
    compose_control, generate_full, generate_zoom, ComposedControl, ModelBundle, SamplerOptions, Timings, ZoomWindow,
    DENOISER_FILE,
};
use acdg::raster::sha256_hex;
use acdg::synthworld::{Category, Layer, OutfitComposition, StyleFlags, ValidationIssue};
use acdg::warpkit::Jitter;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use catalog::{AvatarEntry, Catalog, GarmentEntry, Raster};
use config::ServiceConfig;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    InvalidOutfit(Vec<ValidationIssue>),
    NotFound(String),
    QueueFull(usize),
    Unavailable { message: String, hint: String },
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": "bad-request", "message": m })),
            ApiError::InvalidOutfit(issues) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "invalid-outfit", "message": "the outfit breaks layering rules", "issues": issues }),
            ),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": "not-found", "message": m })),
            ApiError::QueueFull(n) => (
                StatusCode::TOO_MANY_REQUESTS,
                json!({ "error": "queue-full", "message": format!("{n} generation requests already admitted; retry later") }),
            ),
            ApiError::Unavailable { message, hint } => {
                (StatusCode::SERVICE_UNAVAILABLE, json!({ "error": "checkpoint-unavailable", "message": message, "hint": hint }))
            }
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "internal", "message": m })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<acdg::Error> for ApiError {
    fn from(e: acdg::Error) -> Self {
        match e {
            acdg::Error::Composition(m) | acdg::Error::Config(m) | acdg::Error::Shape(m) => ApiError::BadRequest(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct LoadedModel {
    bundle: ModelBundle,
    digest: String,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub catalog: Catalog,
    model: Mutex<Option<Arc<LoadedModel>>>,
    /// Admission permits; a request without one gets 429.
    pub queue: Arc<Semaphore>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let catalog = Catalog::build(&config)?;
        std::fs::create_dir_all(&config.runs_dir)?;
        Ok(Arc::new(Self {
            queue: Arc::new(Semaphore::new(config.queue_capacity)),
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            catalog,
            model: Mutex::new(None),
            config,
        }))
    }

    /// Loads the checkpoint on first use; a missing one is retried on the
    /// next request.
    fn model(&self) -> Result<Arc<LoadedModel>, ApiError> {
        let mut slot = self.model.lock().expect("model lock");
        if let Some(m) = slot.as_ref() {
            return Ok(m.clone());
        }
        let dir = &self.config.checkpoint_dir;
        let unavailable = |message: String| ApiError::Unavailable {
            message,
            hint: format!(
                "train one with `diffcore train --config <file> --variant acdg` and point checkpoint_dir \
                 (or TRYON_CHECKPOINT_DIR) at the run directory; currently {}",
                dir.display()
            ),
        };
        let bundle = ModelBundle::load(dir).map_err(|e| unavailable(e.to_string()))?;
        if (bundle.height(), bundle.width()) != (self.catalog.world.height, self.catalog.world.width) {
            return Err(unavailable(format!(
                "checkpoint is {}x{} but the catalog is {}x{}",
                bundle.height(),
                bundle.width(),
                self.catalog.world.height,
                self.catalog.world.width
            )));
        }
        let bytes = std::fs::read(dir.join(DENOISER_FILE)).map_err(|e| unavailable(e.to_string()))?;
        let m = Arc::new(LoadedModel { bundle, digest: sha256_hex(&bytes) });
        *slot = Some(m.clone());
        Ok(m)
    }

    fn run_path(&self, id: &str) -> PathBuf {
        self.config.runs_dir.join(format!("{id}.json"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/avatars", get(list_avatars))
        .route("/garments", get(list_garments))
        .route("/compose", post(compose))
        .route("/generate", post(generate))
        .route("/zoom", post(zoom))
        .route("/runs/{id}", get(get_run))
        .with_state(state)
}

async fn list_avatars(State(s): State<Arc<AppState>>) -> Json<Vec<AvatarEntry>> {
    Json(s.catalog.avatars.values().map(|(_, e)| e.clone()).collect())
}

async fn list_garments(State(s): State<Arc<AppState>>) -> Json<Vec<GarmentEntry>> {
    Json(s.catalog.garments.values().map(|(_, e)| e.clone()).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerRequest {
    pub garment: String,
    /// Defaults to the garment's own category.
    #[serde(default)]
    pub slot: Option<Category>,
    #[serde(default)]
    pub style: StyleFlags,
}

/// Layers bottom to top.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutfitRequest {
    pub avatar: u64,
    pub layers: Vec<LayerRequest>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(flatten)]
    pub outfit: OutfitRequest,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZoomRequest {
    #[serde(flatten)]
    pub outfit: OutfitRequest,
    #[serde(default)]
    pub seed: u64,
    pub window: ZoomWindow,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComposeResponse {
    pub avatar: u64,
    pub outfit_digest: String,
    /// Digest of the outfit digest and the control raster; changes with
    /// layer order.
    pub control_hash: String,
    pub control: Raster,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub kind: String,
    pub avatar: u64,
    pub seed: u64,
    pub window: Option<ZoomWindow>,
    pub control_hash: String,
    pub checkpoint: String,
    pub image_sha256: String,
    pub png_base64: String,
    pub evaluations: usize,
    pub timings: Timings,
}

fn resolve(s: &AppState, req: &OutfitRequest) -> Result<OutfitComposition, ApiError> {
    if !s.catalog.avatars.contains_key(&req.avatar) {
        return Err(ApiError::InvalidOutfit(vec![ValidationIssue {
            layer: None,
            code: "unknown-avatar".into(),
            message: format!("no avatar {}", req.avatar),
        }]));
    }
    let mut issues = Vec::new();
    let mut layers = Vec::new();
    for (i, l) in req.layers.iter().enumerate() {
        match s.catalog.garments.get(&l.garment) {
            Some((g, _)) => layers.push(Layer { garment: g.clone(), slot: l.slot.unwrap_or(g.category), style: l.style }),
            None => issues.push(ValidationIssue {
                layer: Some(i),
                code: "unknown-garment".into(),
                message: format!("no garment {}", l.garment),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(ApiError::InvalidOutfit(issues));
    }
    let outfit = OutfitComposition::new(req.avatar, layers);
    let issues = outfit.issues();
    if !issues.is_empty() {
        return Err(ApiError::InvalidOutfit(issues));
    }
    Ok(outfit)
}

fn compose_for(s: &AppState, req: &OutfitRequest) -> Result<(ComposedControl, ComposeResponse), ApiError> {
    let outfit = resolve(s, req)?;
    let (avatar, _) = &s.catalog.avatars[&req.avatar];
    let composed = compose_control(&outfit, avatar, Jitter::none())?;
    let control = Raster::from_rgb(&composed.control.image.to_rgb())?;
    let digest = outfit.digest();
    let control_hash = sha256_hex(format!("{digest}:{}", control.sha256).as_bytes());
    Ok((composed, ComposeResponse { avatar: req.avatar, outfit_digest: digest, control_hash, control }))
}

async fn compose(State(s): State<Arc<AppState>>, body: Result<Json<OutfitRequest>, JsonRejection>) -> ApiResult<ComposeResponse> {
    let Json(req) = body?;
    Ok(Json(compose_for(&s, &req)?.1))
}

async fn generate(State(s): State<Arc<AppState>>, body: Result<Json<GenerateRequest>, JsonRejection>) -> ApiResult<RunRecord> {
    let Json(req) = body?;
    run(s, req.outfit, req.seed, None).await
}

async fn zoom(State(s): State<Arc<AppState>>, body: Result<Json<ZoomRequest>, JsonRejection>) -> ApiResult<RunRecord> {
    let Json(req) = body?;
    let (h, w) = (s.catalog.world.height, s.catalog.world.width);
    req.window.validate(h, w).map_err(|e| {
        ApiError::InvalidOutfit(vec![ValidationIssue { layer: None, code: "invalid-window".into(), message: e.to_string() }])
    })?;
    run(s, req.outfit, req.seed, Some(req.window)).await
}

async fn run(s: Arc<AppState>, outfit: OutfitRequest, seed: u64, window: Option<ZoomWindow>) -> ApiResult<RunRecord> {
    let (composed, resp) = compose_for(&s, &outfit)?;
    let model = s.model()?;
    let _admitted = s.queue.clone().try_acquire_owned().map_err(|_| ApiError::QueueFull(s.config.queue_capacity))?;
    let _worker = s.workers.clone().acquire_owned().await.map_err(|e| ApiError::Internal(e.to_string()))?;
    let kind = if window.is_some() { "zoom" } else { "full" };
    let key = json!({ "kind": kind, "control_hash": resp.control_hash, "seed": seed, "window": window, "checkpoint": model.digest });
    let id = sha256_hex(key.to_string().as_bytes())[..24].to_string();
    let m = model.clone();
    let result = tokio::task::spawn_blocking(move || {
        let (c, j) = (&composed.control.image, &composed.joints);
        match window {
            Some(w) => generate_zoom(&m.bundle, c, j, w, seed, SamplerOptions::default()),
            None => generate_full(&m.bundle, c, j, seed, SamplerOptions::default()),
        }
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let image = Raster::from_rgb(&result.image.to_rgb())?;
    let record = RunRecord {
        id,
        kind: kind.into(),
        avatar: outfit.avatar,
        seed,
        window,
        control_hash: resp.control_hash,
        checkpoint: model.digest.clone(),
        image_sha256: image.sha256,
        png_base64: image.png_base64,
        evaluations: result.evaluations(),
        timings: result.timings,
    };
    let text = serde_json::to_string(&record).map_err(|e| ApiError::Internal(e.to_string()))?;
    std::fs::write(s.run_path(&record.id), text).map_err(|e| ApiError::Internal(e.to_string()))?;
    tracing::info!(id = %record.id, kind, "run stored");
    Ok(Json(record))
}

async fn get_run(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<RunRecord> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(ApiError::BadRequest(format!("malformed run id '{id}'")));
    }
    let text = std::fs::read_to_string(s.run_path(&id)).map_err(|_| ApiError::NotFound(format!("no run {id}")))?;
    serde_json::from_str(&text).map(Json).map_err(|e| ApiError::Internal(e.to_string()))
}
