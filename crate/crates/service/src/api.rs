//! HTTP JSON API. Every failure is an [`ApiError`] body with a stable code.
//!
//! | method | path                          | body / query            | response             |
//! |--------|-------------------------------|-------------------------|----------------------|
//! | GET    | /healthz                      |                         | `Health`             |
//! | POST   | /session                      | `{"config"?: ...}`      | `SessionInfo` (201)  |
//! | GET    | /session/{id}                 |                         | `SessionInfo`        |
//! | POST   | /session/{id}/frame           | `FrameUpload`           | `FrameInfo`          |
//! | POST   | /session/{id}/labels          | `LabelSet`              | `LabelReport`        |
//! | POST   | /session/{id}/train           |                         | `TrainOutcome`       |
//! | GET    | /session/{id}/classification  |                         | `ClassificationView` |
//! | GET    | /session/{id}/costmap         | `?format=json|grid|ppm` | `CostmapView` or bytes |
//! | POST   | /session/{id}/plan            | `PlanRequest`           | `PlanOutcome`        |
//! | GET    | /session/{id}/model           |                         | `ModelView`          |
//! | POST   | /session/{id}/persist         |                         | `PersistView`        |
//! | POST   | /session/{id}/restore         |                         | `SessionInfo`        |

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use terrainnav::costmap::{CostmapSummary, ProjectionReport};
use terrainnav::featnet::Network;
use terrainnav::ground::{CloudFormat, GroundPlane};
use terrainnav::patch::{HeadModel, LabelMap, LabelSet, RleLabelMap};
use terrainnav::planner::PlanRequest;

use crate::error::ApiError;
use crate::persist::{persist_session, restore_session};
use crate::session::{Frame, Session, SessionConfig, SessionError, SessionInfo, SessionState};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
/// Largest accepted image side, pixels.
pub const MAX_IMAGE_SIDE: usize = 4096;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: Option<PathBuf>,
    pub session_defaults: SessionConfig,
}

pub struct AppState {
    pub network: Arc<Network>,
    pub checkpoint: String,
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(network: Network, checkpoint: String, config: ServiceConfig) -> Self {
        AppState {
            network: Arc::new(network),
            checkpoint,
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    fn insert(&self, session: Session) -> Arc<Session> {
        let session = Arc::new(session);
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session.id(), session.clone());
        session
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }
}

type Shared = State<Arc<AppState>>;

fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "payload-too-large"
        } else {
            "malformed-payload"
        };
        ApiError::new(status, code, r.body_text())
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::malformed(format!("invalid JSON body: {e}")))
}

fn parse_optional_body<T: DeserializeOwned + Default>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    match &body {
        Ok(b) if b.iter().all(|c| c.is_ascii_whitespace()) => Ok(T::default()),
        _ => parse_body(body),
    }
}

/// Runs CPU-heavy session work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint: String,
    pub sessions: usize,
}

async fn healthz(State(app): Shared) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        checkpoint: app.checkpoint.clone(),
        sessions: app.session_count(),
    })
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    config: Option<SessionConfig>,
}

async fn create_session(State(app): Shared, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let req: CreateSession = parse_optional_body(body)?;
    let config = req.config.unwrap_or_else(|| app.config.session_defaults.clone());
    config.validate()?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let state = SessionState::new(id.clone(), app.network.clone(), app.checkpoint.clone(), config);
    let session = app.insert(Session::new(state));
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(session.info())).into_response())
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(app.session(&id)?.info()))
}

/// `image` is base64 PNG or binary PPM. `cloud` is the text of a CSV or
/// ASCII PLY point cloud; its format is sniffed when not given.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameUpload {
    pub image: String,
    #[serde(default)]
    pub cloud: Option<String>,
    #[serde(default)]
    pub cloud_format: Option<CloudFormat>,
}

pub fn sniff_cloud_format(text: &str) -> CloudFormat {
    if text.trim_start().starts_with("ply") {
        CloudFormat::Ply
    } else {
        CloudFormat::Csv
    }
}

async fn post_frame(
    State(app): Shared,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let upload: FrameUpload = parse_body(body)?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(upload.image.trim())
        .map_err(|e| ApiError::malformed(format!("image is not valid base64: {e}")))?;
    let cloud = upload.cloud.map(|text| {
        let format = upload.cloud_format.unwrap_or_else(|| sniff_cloud_format(&text));
        (format, text)
    });
    let info = blocking(move || {
        let frame = Frame::decode(bytes, cloud)?;
        let (w, h) = (frame.image.width(), frame.image.height());
        if w > MAX_IMAGE_SIDE || h > MAX_IMAGE_SIDE {
            return Err(SessionError::Frame(format!("{w}x{h} exceeds the {MAX_IMAGE_SIDE} px limit")).into());
        }
        Ok(session.set_frame(frame))
    })
    .await?;
    Ok(Json(info).into_response())
}

async fn post_labels(
    State(app): Shared,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let set: LabelSet = parse_body(body)?;
    let report = session.add_strokes(set.strokes)?;
    Ok(Json(report).into_response())
}

async fn post_train(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let outcome = blocking(move || Ok(session.train()?)).await?;
    tracing::info!(
        session = %id,
        version = outcome.model_version,
        examples = outcome.training_set_size,
        secs = outcome.duration_secs,
        "head trained"
    );
    Ok(Json(outcome).into_response())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationView {
    pub model_version: u64,
    pub frame: usize,
    pub stride: usize,
    /// Pixels that are unknown, drivable, obstacle.
    pub counts: [usize; 3],
    pub labels: RleLabelMap,
}

async fn get_classification(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let c = blocking(move || Ok(session.classification()?)).await?;
    Ok(Json(ClassificationView {
        model_version: c.model_version,
        frame: c.frame,
        stride: c.stride,
        counts: c.labels.counts(),
        labels: c.labels.to_rle(),
    })
    .into_response())
}

/// Fused labels are run-length encoded over cells in `iy * nx + ix` order,
/// i.e. an image `nx` wide and `ny` tall with row `iy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostmapView {
    pub model_version: u64,
    pub frame: usize,
    pub plane: GroundPlane,
    pub projection: ProjectionReport,
    pub summary: CostmapSummary,
    pub fused: RleLabelMap,
}

#[derive(Clone, Debug, Default, Deserialize)]
struct CostmapQuery {
    format: Option<String>,
}

async fn get_costmap(
    State(app): Shared,
    Path(id): Path<String>,
    query: Result<Query<CostmapQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let Query(q) = query.map_err(|e| ApiError::malformed(e.body_text()))?;
    let format = q.format.unwrap_or_else(|| "json".into());
    if !matches!(format.as_str(), "json" | "grid" | "ppm") {
        return Err(ApiError::malformed(format!("unknown costmap format {format:?}; use json, grid or ppm")));
    }
    let c = blocking(move || Ok(session.costmap()?)).await?;
    let version = c.model_version.to_string();
    let with_version = |ctype: &'static str, bytes: Vec<u8>| {
        (
            [(header::CONTENT_TYPE, ctype.to_string()), (header::HeaderName::from_static("x-model-version"), version.clone())],
            bytes,
        )
            .into_response()
    };
    Ok(match format.as_str() {
        "grid" => with_version("application/octet-stream", c.map.encode_grid()),
        "ppm" => with_version("image/x-portable-pixmap", c.map.render_ppm()),
        _ => {
            let (nx, ny) = (c.map.nx(), c.map.ny());
            let mut labels = LabelMap::unknown(nx, ny);
            for (i, cell) in c.map.cells().iter().enumerate() {
                labels.set(i / nx, i % nx, cell.fused);
            }
            Json(CostmapView {
                model_version: c.model_version,
                frame: c.frame,
                plane: c.plane,
                projection: c.report,
                summary: c.map.summary(),
                fused: labels.to_rle(),
            })
            .into_response()
        }
    })
}

async fn post_plan(
    State(app): Shared,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let request: PlanRequest = parse_body(body)?;
    let outcome = blocking(move || Ok(session.plan(&request)?)).await?;
    Ok(Json(outcome).into_response())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub model_version: u64,
    pub checkpoint: String,
    pub head: HeadModel,
}

async fn get_model(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let (model_version, head) = session.head()?;
    let checkpoint = session.info().checkpoint;
    Ok(Json(ModelView {
        model_version,
        checkpoint,
        head: (*head).clone(),
    })
    .into_response())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistView {
    pub id: String,
    pub path: String,
}

fn data_dir(app: &AppState) -> Result<PathBuf, ApiError> {
    app.config.data_dir.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no-data-dir",
            "the service was started without a data directory",
        )
    })
}

async fn post_persist(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let dir = data_dir(&app)?;
    let path = blocking(move || Ok(persist_session(&session.snapshot(), &dir)?)).await?;
    Ok(Json(PersistView {
        id,
        path: path.display().to_string(),
    })
    .into_response())
}

async fn post_restore(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dir = data_dir(&app)?;
    let app2 = app.clone();
    let state = blocking(move || {
        Ok(restore_session(
            &dir,
            &id,
            Some((app2.checkpoint.as_str(), app2.network.clone())),
        )?)
    })
    .await?;
    let session = app.insert(Session::new(state));
    Ok(Json(session.info()).into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("this path")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method-not-allowed", "method not allowed on this path")
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/frame", post(post_frame))
        .route("/session/{id}/labels", post(post_labels))
        .route("/session/{id}/train", post(post_train))
        .route("/session/{id}/classification", get(get_classification))
        .route("/session/{id}/costmap", get(get_costmap))
        .route("/session/{id}/plan", post(post_plan))
        .route("/session/{id}/model", get(get_model))
        .route("/session/{id}/persist", post(post_persist))
        .route("/session/{id}/restore", post(post_restore))
        .fallback(fallback)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(app)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(app: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(app)).await
}
