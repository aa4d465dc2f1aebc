//! HTTP prediction service and command-line front end.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{ConnectInfo, DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::classes::class_map;
use crate::predictor::{
    load_artifact, load_catalog, recommend, Advice, PredictError, Prediction, Predictor, RecommendationCatalog,
    SCHEMA_VERSION,
};

pub mod cli;
mod rate_limit;

pub use rate_limit::TokenBucket;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub artifact_path: PathBuf,
    /// Bundled catalog when unset.
    pub catalog_path: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub frame_rate_limit_per_s: f64,
    /// Append-only request log; one line per prediction.
    pub log_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            artifact_path: PathBuf::from("artifact"),
            catalog_path: None,
            max_upload_bytes: 10 * 1024 * 1024,
            frame_rate_limit_per_s: 1.0,
            log_path: None,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.port == 0 {
            return Err(GatewayError::Config("port must lie in [1, 65535]".into()));
        }
        if self.max_upload_bytes == 0 {
            return Err(GatewayError::Config("max_upload_bytes must be > 0".into()));
        }
        if !(self.frame_rate_limit_per_s > 0.0 && self.frame_rate_limit_per_s.is_finite()) {
            return Err(GatewayError::Config(format!(
                "frame_rate_limit_per_s must be > 0, got {}",
                self.frame_rate_limit_per_s
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub backbone_name: String,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema_version: u32,
    pub label: String,
    pub class_index: usize,
    pub probabilities: BTreeMap<String, f64>,
    pub top1_confidence: f64,
    pub uncertain: bool,
    pub recommendation: Advice,
    pub model: ModelSummary,
    pub latency_ms: f64,
}

#[derive(Deserialize)]
struct FrameRequest {
    frame_base64: String,
}

struct AppState {
    predictor: Predictor,
    catalog: RecommendationCatalog,
    config: ServiceConfig,
    frame_limits: Mutex<HashMap<IpAddr, TokenBucket>>,
    log: Option<Mutex<std::fs::File>>,
    started: Instant,
}

/// A loaded, validated service ready to be bound.
#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str) -> Self {
        Self {
            status,
            code,
            detail: None,
        }
    }

    fn detail(mut self, d: impl ToString) -> Self {
        self.detail = Some(d.to_string());
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"schema_version": SCHEMA_VERSION, "error": self.code});
        if let Some(d) = self.detail {
            body["detail"] = d.into();
        }
        let mut resp = (self.status, Json(body)).into_response();
        if self.status == StatusCode::TOO_MANY_REQUESTS {
            resp.headers_mut().insert(header::RETRY_AFTER, header::HeaderValue::from_static("1"));
        }
        resp
    }
}

fn too_large() -> ApiError {
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large")
}

impl Service {
    /// Loads the artifact and catalog, failing fast on either.
    pub fn new(config: ServiceConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let predictor = load_artifact(&config.artifact_path)?;
        let catalog = match &config.catalog_path {
            Some(p) => load_catalog(p)?,
            None => crate::predictor::default_catalog(),
        };
        let log = match &config.log_path {
            Some(p) => Some(Mutex::new(
                std::fs::OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(Self {
            state: Arc::new(AppState {
                predictor,
                catalog,
                config,
                frame_limits: Mutex::new(HashMap::new()),
                log,
                started: Instant::now(),
            }),
        })
    }

    pub fn predictor(&self) -> &Predictor {
        &self.state.predictor
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.state.config
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/model", get(model))
            .route("/classes", get(classes))
            .route("/predict", post(predict))
            .route("/predict-frame", post(predict_frame))
            .route("/recommendations/{class}", get(recommendation))
            .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found") })
            .method_not_allowed_fallback(|| async { ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed") })
            .layer(DefaultBodyLimit::max(self.state.config.max_upload_bytes))
            .layer(tower_http::cors::CorsLayer::permissive())
            .with_state(self.state.clone())
    }

    /// Serves on `listener` until `shutdown` resolves.
    pub async fn run(
        self,
        listener: tokio::net::TcpListener,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> Result<(), GatewayError> {
        let app = self.router().into_make_service_with_connect_info::<SocketAddr>();
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
        Ok(())
    }
}

/// Loads, binds `host:port` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), GatewayError> {
    let service = Service::new(config)?;
    let addr = format!("{}:{}", service.config().host, service.config().port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!(
        "serving {} on http://{}",
        service.predictor().metadata().backbone_name,
        listener.local_addr()?
    );
    service
        .run(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "uptime_s": s.started.elapsed().as_secs_f64(),
    }))
}

async fn model(State(s): State<Arc<AppState>>) -> Json<crate::predictor::ArtifactMetadata> {
    Json(s.predictor.metadata().clone())
}

async fn classes() -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "class_map": class_map(),
        "classes": crate::classes::class_names(),
    }))
}

async fn recommendation(
    State(s): State<Arc<AppState>>,
    UrlPath(class): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let advice = recommend(&class, &s.catalog).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "unknown_class").detail(e))?;
    let mut body = serde_json::to_value(advice).expect("advice serializes");
    body["schema_version"] = SCHEMA_VERSION.into();
    Ok(Json(body))
}

async fn predict(
    State(s): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request").detail(e.body_text()))?;
    let mut image = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request").detail(e.body_text())),
        };
        if field.name() == Some("image") {
            let bytes = field.bytes().await.map_err(|e| {
                if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                    too_large()
                } else {
                    ApiError::new(StatusCode::BAD_REQUEST, "bad_request").detail(e.body_text())
                }
            })?;
            image = Some(bytes);
        }
    }
    let bytes = image.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_image"))?;
    classify(s, bytes.to_vec(), false).await
}

async fn predict_frame(
    State(s): State<Arc<AppState>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    body: Result<Json<FrameRequest>, JsonRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let allowed = {
        let mut limits = s.frame_limits.lock().expect("rate-limit table");
        let rate = s.config.frame_rate_limit_per_s;
        limits
            .entry(peer.ip())
            .or_insert_with(|| TokenBucket::new(rate, rate.max(1.0)))
            .try_take(Instant::now())
    };
    if !allowed {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited"));
    }
    let Json(req) = body.map_err(|e| match e.status() {
        StatusCode::PAYLOAD_TOO_LARGE => too_large(),
        status => ApiError::new(status, "bad_request").detail(e.body_text()),
    })?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(req.frame_base64.trim())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "decode_failed").detail(e))?;
    classify(s, bytes, true).await
}

async fn classify(s: Arc<AppState>, bytes: Vec<u8>, frame: bool) -> Result<Json<PredictResponse>, ApiError> {
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || {
        if frame {
            state.predictor.predict_frame(&bytes)
        } else {
            state.predictor.predict(&bytes)
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal").detail(e))?;
    let prediction = match result {
        Ok(p) => p,
        Err(PredictError::Decode(d)) => {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "decode_failed").detail(d))
        }
        Err(e) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal").detail(e)),
    };
    let response = respond(&s, &prediction)?;
    append_log(&s, &prediction, if frame { "frame" } else { "image" });
    Ok(Json(response))
}

fn respond(s: &AppState, p: &Prediction) -> Result<PredictResponse, ApiError> {
    let advice = recommend(p.label.as_str(), &s.catalog)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal").detail(e))?;
    let meta = s.predictor.metadata();
    Ok(PredictResponse {
        schema_version: SCHEMA_VERSION,
        label: p.label.as_str().to_string(),
        class_index: p.class_index,
        probabilities: p.probability_map(),
        top1_confidence: p.top1_confidence,
        uncertain: p.uncertain,
        recommendation: advice.clone(),
        model: ModelSummary {
            backbone_name: meta.backbone_name.as_str().to_string(),
            val_accuracy: meta.metrics.val_accuracy,
        },
        latency_ms: p.latency_ms,
    })
}

fn append_log(s: &AppState, p: &Prediction, kind: &str) {
    let line = format!(
        "{}\t{kind}\t{}\t{:.4}\n",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        p.label,
        p.top1_confidence
    );
    log::info!("{}", line.trim_end());
    if let Some(file) = &s.log {
        let mut f = file.lock().expect("request log");
        if let Err(e) = f.write_all(line.as_bytes()) {
            log::error!("request log: {e}");
        }
    }
}
