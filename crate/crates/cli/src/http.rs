//! JSON HTTP service over an atomically swappable model snapshot.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use medsuggest_core::pipeline::{ExplainRequest, Snapshot, SsRequest, SuggestRequest};
use medsuggest_core::Error;

/// Where a reload reads the bundle and interaction graph from.
#[derive(Debug, Clone)]
pub struct SnapshotSource {
    pub bundle_dir: PathBuf,
    pub data_dir: PathBuf,
    pub alpha: f64,
}

impl SnapshotSource {
    pub fn load(&self) -> medsuggest_core::Result<Snapshot> {
        Snapshot::load(&self.bundle_dir, &self.data_dir, self.alpha)
    }
}

/// Shared state: readers clone the current `Arc` and never block a reload
/// for longer than the pointer swap.
pub struct AppState {
    /// Current snapshot and how many reloads produced it.
    current: RwLock<(Arc<Snapshot>, u64)>,
    source: Option<SnapshotSource>,
}

impl AppState {
    pub fn new(snapshot: Snapshot, source: Option<SnapshotSource>) -> Arc<Self> {
        Arc::new(Self {
            current: RwLock::new((Arc::new(snapshot), 0)),
            source,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current().0
    }

    fn current(&self) -> (Arc<Snapshot>, u64) {
        let guard = self.current.read().expect("snapshot lock poisoned");
        (Arc::clone(&guard.0), guard.1)
    }

    fn swap(&self, snapshot: Snapshot) -> u64 {
        let mut guard = self.current.write().expect("snapshot lock poisoned");
        *guard = (Arc::new(snapshot), guard.1 + 1);
        guard.1
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownDrug(_) => StatusCode::NOT_FOUND,
            Error::Argument(_) | Error::Shape(_) | Error::Disconnected(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a JSON body, naming the offending field in the error.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = if path == "." {
            format!("invalid request body: {}", e.inner())
        } else {
            format!("{path}: {}", e.inner())
        };
        ApiError(StatusCode::BAD_REQUEST, msg)
    })
}

fn ok<T: Serialize>(r: medsuggest_core::Result<T>) -> ApiResult<T> {
    r.map(Json).map_err(ApiError::from)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/drugs", get(drugs))
        .route("/suggest", post(suggest))
        .route("/explain", post(explain))
        .route("/ss", post(ss))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (snap, generation) = s.current();
    Json(json!({
        "status": "ok",
        "drugs": snap.bundle.num_drugs(),
        "features": snap.bundle.feature_dim(),
        "generation": generation,
    }))
}

async fn schema(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.snapshot().schema())
}

async fn drugs(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.snapshot().drugs())
}

async fn suggest(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: SuggestRequest = parse(&body)?;
    ok(s.snapshot().suggest(&req))
}

async fn explain(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: ExplainRequest = parse(&body)?;
    ok(s.snapshot().explain(&req))
}

async fn ss(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: SsRequest = parse(&body)?;
    ok(s.snapshot().ss(&req))
}

/// Rebuilds the snapshot from disk and swaps it in; on failure the old
/// snapshot keeps serving.
async fn reload(State(s): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let Some(source) = s.source.clone() else {
        return Err(ApiError(
            StatusCode::CONFLICT,
            "service was started without a reload source".into(),
        ));
    };
    let loaded = tokio::task::spawn_blocking(move || source.load())
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| {
            ApiError(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("reload failed, keeping current model: {e}"),
            )
        })?;
    let generation = s.swap(loaded);
    log::info!("snapshot reloaded, generation {generation}");
    Ok(Json(json!({ "status": "reloaded", "generation": generation })))
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
