//! HTTP edit service: `GET /health`, `GET /styles`, `POST /edit`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::error::CliError;
use crate::grid::png_bytes;
use crate::model::{run_edit, Model};
use crate::request::{default_presets, EditRequest, StylePreset, SCHEMA_VERSION};

pub const MANIFEST_HEADER: &str = "x-manifest-hash";

pub struct ServiceState {
    model: Model,
    presets: Vec<StylePreset>,
    workers: Semaphore,
}

impl ServiceState {
    pub fn new(model: Model, workers: usize) -> Result<Arc<Self>, CliError> {
        if workers == 0 {
            return Err(CliError::usage("the service needs at least one worker"));
        }
        Ok(Arc::new(Self {
            model,
            presets: default_presets(),
            workers: Semaphore::new(workers),
        }))
    }

    pub fn manifest_hash(&self) -> &str {
        self.model.manifest_hash()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub schema_version: u32,
    pub manifest_hash: String,
    pub seed: u64,
    /// Base64 PNGs, one per pose.
    pub edited: Vec<String>,
    pub base: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub manifest_hash: String,
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// `bad_request`, `not_found` or `internal`.
    pub kind: String,
    pub message: String,
    pub incident_id: Option<String>,
}

fn error_response(state: &ServiceState, status: StatusCode, kind: &str, message: String) -> Response {
    let incident_id = status.is_server_error().then(|| uuid::Uuid::new_v4().to_string());
    if let Some(id) = &incident_id {
        log::error!("incident {id}: {message}");
    }
    let body = ErrorBody {
        schema_version: SCHEMA_VERSION,
        manifest_hash: state.manifest_hash().to_string(),
        error: ErrorDetail {
            kind: kind.into(),
            message,
            incident_id,
        },
    };
    (status, Json(body)).into_response()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/styles", get(styles))
        .route("/edit", post(edit))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), stamp_manifest))
        .with_state(state)
}

async fn stamp_manifest(State(state): State<Arc<ServiceState>>, request: Request, next: Next) -> Response {
    let mut response = next.run(request).await;
    if let Ok(v) = HeaderValue::from_str(state.manifest_hash()) {
        response.headers_mut().insert(MANIFEST_HEADER, v);
    }
    response
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "manifest_hash": state.manifest_hash(),
    }))
}

async fn styles(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "manifest_hash": state.manifest_hash(),
        "styles": state.presets,
    }))
}

async fn not_found(State(state): State<Arc<ServiceState>>) -> Response {
    error_response(&state, StatusCode::NOT_FOUND, "not_found", "no such endpoint".into())
}

fn encode(images: &[image::RgbImage]) -> Result<Vec<String>, CliError> {
    images.iter().map(|im| Ok(STANDARD.encode(png_bytes(im)?))).collect()
}

async fn edit(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let request: EditRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&state, StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    if let Err(e) = request.validate() {
        return error_response(&state, StatusCode::BAD_REQUEST, "bad_request", e.to_string());
    }
    let Ok(_permit) = state.workers.acquire().await else {
        return error_response(
            &state,
            StatusCode::SERVICE_UNAVAILABLE,
            "internal",
            "worker pool closed".into(),
        );
    };
    let worker_state = state.clone();
    let job = tokio::task::spawn_blocking(move || {
        let out = run_edit(worker_state.model(), &request)?;
        Ok::<_, CliError>(EditResponse {
            schema_version: SCHEMA_VERSION,
            manifest_hash: worker_state.manifest_hash().to_string(),
            seed: request.seed,
            edited: encode(&out.edited)?,
            base: out.base.as_deref().map(encode).transpose()?,
        })
    });
    match job.await {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(e)) if e.is_client_error() => {
            error_response(&state, StatusCode::BAD_REQUEST, "bad_request", e.to_string())
        }
        Ok(Err(e)) => error_response(&state, StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        Err(e) => error_response(
            &state,
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            format!("render task failed: {e}"),
        ),
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving on {} (manifest {})",
        listener.local_addr()?,
        state.manifest_hash()
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyperedit::encoders::Encoders;
    use hyperedit::generator::{GeneratorConfig, GeneratorParams};
    use hyperedit::hyper::{HyperConfig, HyperModule};

    #[tokio::test]
    async fn server_errors_carry_an_incident_id() {
        let config = GeneratorConfig {
            feature_res: 8,
            ..GeneratorConfig::default()
        };
        let g = GeneratorParams::init(config, 0, candle_core::DType::F32).unwrap();
        let h = HyperModule::new(HyperConfig::default(), g.specs(), g.config().groups.clone(), 0, g.dtype()).unwrap();
        let state = ServiceState::new(Model::new(g, h, Encoders::stub(0)).unwrap(), 1).unwrap();
        let response = error_response(&state, StatusCode::INTERNAL_SERVER_ERROR, "internal", "boom".into());
        assert_eq!(response.status(), StatusCode::INTERNAL_SERVER_ERROR);
        let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
        let body: ErrorBody = serde_json::from_slice(&bytes).unwrap();
        assert!(body.error.incident_id.is_some());
        assert_eq!(body.manifest_hash, state.manifest_hash());
    }
}
