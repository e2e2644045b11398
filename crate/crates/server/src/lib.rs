//! HTTP/JSON facade over the model store and job engine.
//!
//! Every route authenticates with `Authorization: Bearer <token>` and
//! answers errors with `{code, message, details}`. Role checks live in the
//! store and engine; handlers only translate.

pub mod config;
pub mod error;
pub mod export;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_DISPOSITION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use esp_core::engine::{Engine, ImportBatch, JobRequest};
use esp_core::montecarlo::ScenarioSpec;
use esp_core::store::{Actor, Role, StandardTest, Store};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub use config::{Config, ConfigError, User, Users};
pub use error::ApiError;

const MAX_BODY: usize = 64 * 1024 * 1024;
const MAX_AUDIT_PAGE: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub users: Arc<Users>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, users: Users) -> AppState {
        AppState {
            engine,
            users: Arc::new(users),
        }
    }

    fn store(&self) -> &Arc<Store> {
        self.engine.store()
    }
}

/// The authenticated caller.
pub struct Caller(pub Actor);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::auth("missing Authorization header"))?;
        let token = header
            .to_str()
            .ok()
            .and_then(|h| h.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::auth("expected a Bearer token"))?;
        state
            .users
            .authenticate(token.trim())
            .map(Caller)
            .ok_or_else(|| ApiError::auth("unknown token"))
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Runs store or engine work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new("INTERNAL", e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/api/models", get(list_models).post(upload))
        .route("/api/models/{name}/versions", get(versions))
        .route("/api/models/{name}/schema", get(schema))
        .route("/api/models/{name}/{ver}/download", get(download))
        .route("/api/models/{name}/{ver}/tests", get(get_tests).put(put_tests))
        .route("/api/models/{name}/{ver}/test-run", post(test_run))
        .route("/api/models/{name}/{ver}/promote", post(promote))
        .route("/api/models/{name}/{ver}/retire", post(retire))
        .route("/api/scenarios", post(put_scenario))
        .route("/api/scenarios/{hash}", get(get_scenario))
        .route("/api/jobs", get(list_jobs).post(submit))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/api/jobs/{id}/result.csv", get(job_result_csv))
        .route("/api/import", post(import))
        .route("/api/audit", get(audit))
        .route("/api/audit/verify", get(audit_verify))
        .fallback(|| async { ApiError::new("NOT_FOUND", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

fn version_number(ver: &str) -> ApiResult<u32> {
    ver.parse()
        .map_err(|_| ApiError::bad_request(format!("`{ver}` is not a version number")))
}

// ---- models ----------------------------------------------------------------

async fn list_models(State(s): State<AppState>, Caller(_): Caller) -> ApiResult<Json<Value>> {
    let store = Arc::clone(s.store());
    blocking(move || {
        let mut out = Vec::new();
        for name in store.list_models() {
            let vs = store.versions(&name)?;
            let live = vs.iter().find(|v| v.status == esp_core::store::Status::Live);
            out.push(json!({
                "model_name": name,
                "latest_version": vs.last().map(|v| v.version),
                "live_version": live.map(|v| v.version),
            }));
        }
        Ok(Json(Value::Array(out)))
    })
    .await
}

async fn upload(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let name = q
        .get("name")
        .cloned()
        .ok_or_else(|| ApiError::bad_request("query parameter `name` is required"))?;
    let store = Arc::clone(s.store());
    let v = blocking(move || Ok(store.upload_version(&name, &body, &actor)?)).await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn versions(State(s): State<AppState>, Caller(_): Caller, Path(name): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store().versions(&name)?))
}

async fn schema(State(s): State<AppState>, Caller(_): Caller, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let engine = Arc::clone(&s.engine);
    blocking(move || {
        let (v, inputs, outputs) = engine.live_schema(&name)?;
        Ok(Json(json!({
            "model_name": v.model_name,
            "version": v.version,
            "inputs": inputs,
            "outputs": outputs,
        })))
    })
    .await
}

async fn download(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
) -> ApiResult<Response> {
    let version = version_number(&ver)?;
    let store = Arc::clone(s.store());
    let bytes = blocking(move || Ok(store.download_version(&name, version, &actor)?)).await?;
    Ok(([(CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_tests(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    actor.require(&[Role::Superuser], "read standard tests")?;
    Ok(Json(s.store().tests(&name, version_number(&ver)?)?))
}

async fn put_tests(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let version = version_number(&ver)?;
    let tests: Vec<StandardTest> = parse(&body)?;
    let store = Arc::clone(s.store());
    blocking(move || {
        let n = store.attach_standard_tests(&name, version, tests, &actor)?;
        let v = store.version(&name, version)?;
        Ok(Json(json!({"model_name": name, "version": version, "tests": n, "status": v.status})))
    })
    .await
}

async fn test_run(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let version = version_number(&ver)?;
    let engine = Arc::clone(&s.engine);
    let report = blocking(move || Ok(engine.run_standard_tests(&name, version, &actor)?)).await?;
    Ok(Json(report))
}

async fn promote(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let version = version_number(&ver)?;
    let store = Arc::clone(s.store());
    let v = blocking(move || Ok(store.promote(&name, version, &actor)?)).await?;
    Ok(Json(v))
}

async fn retire(
    State(s): State<AppState>,
    Caller(actor): Caller,
    Path((name, ver)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let version = version_number(&ver)?;
    let store = Arc::clone(s.store());
    let v = blocking(move || Ok(store.retire(&name, version, &actor)?)).await?;
    Ok(Json(v))
}

// ---- scenarios -------------------------------------------------------------

async fn put_scenario(State(s): State<AppState>, Caller(actor): Caller, body: Bytes) -> ApiResult<impl IntoResponse> {
    let spec: ScenarioSpec = parse(&body)?;
    let store = Arc::clone(s.store());
    let hash = blocking(move || Ok(store.put_scenario(&spec, &actor)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"scenario_hash": hash}))))
}

async fn get_scenario(State(s): State<AppState>, Caller(_): Caller, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store().scenario(&hash)?))
}

// ---- jobs ------------------------------------------------------------------

async fn submit(State(s): State<AppState>, Caller(actor): Caller, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: JobRequest = parse(&body)?;
    let engine = Arc::clone(&s.engine);
    let job_id = blocking(move || Ok(engine.submit(&request, &actor)?)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job_id, "state": "QUEUED"}))))
}

async fn list_jobs(State(s): State<AppState>, Caller(actor): Caller) -> impl IntoResponse {
    Json(s.engine.list(&actor))
}

async fn job_status(State(s): State<AppState>, Caller(actor): Caller, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.status(&id, &actor)?))
}

async fn job_result(State(s): State<AppState>, Caller(actor): Caller, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let r = s.engine.result(&id, &actor)?;
    Ok(Json((*r).clone()))
}

async fn job_result_csv(State(s): State<AppState>, Caller(actor): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let r = s.engine.result(&id, &actor)?;
    let csv = export::result_csv(&r).map_err(|e| ApiError::new("INTERNAL", e.to_string()))?;
    let disposition = format!("attachment; filename=\"{id}.csv\"");
    Ok((
        [(CONTENT_TYPE, "text/csv; charset=utf-8".to_string()), (CONTENT_DISPOSITION, disposition)],
        csv,
    )
        .into_response())
}

async fn import(State(s): State<AppState>, Caller(actor): Caller, body: Bytes) -> ApiResult<impl IntoResponse> {
    let batch: ImportBatch = parse(&body)?;
    let engine = Arc::clone(&s.engine);
    let jobs = blocking(move || Ok(engine.submit_batch(&batch, &actor)?)).await?;
    let map: serde_json::Map<String, Value> = jobs.into_iter().map(|(row, job)| (row, Value::String(job))).collect();
    Ok((StatusCode::ACCEPTED, Json(json!({"jobs": map}))))
}

// ---- audit -----------------------------------------------------------------

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "Page::default_limit")]
    limit: usize,
}

impl Page {
    fn default_limit() -> usize {
        100
    }
}

async fn audit(State(s): State<AppState>, Caller(actor): Caller, Query(page): Query<Page>) -> ApiResult<Json<Value>> {
    let store = Arc::clone(s.store());
    blocking(move || {
        let limit = page.limit.min(MAX_AUDIT_PAGE);
        let records = store.audit_records(&actor, page.offset, limit)?;
        Ok(Json(json!({
            "offset": page.offset,
            "total": store.audit_len(),
            "records": records,
        })))
    })
    .await
}

async fn audit_verify(State(s): State<AppState>, Caller(actor): Caller) -> ApiResult<impl IntoResponse> {
    actor.require(&[Role::Admin, Role::Superuser], "verify the audit log")?;
    let store = Arc::clone(s.store());
    let v = blocking(move || Ok(store.verify_audit_chain()?)).await?;
    Ok(Json(v))
}

// ---- running ---------------------------------------------------------------

/// Opens the store, starts the engine and loads users from `config`.
pub fn build_state(config: &Config) -> Result<AppState, Box<dyn std::error::Error + Send + Sync>> {
    let store = Arc::new(Store::open(&config.store)?);
    let engine = Engine::new(store, config.engine_config()?)?;
    Ok(AppState::new(Arc::new(engine), config.users()?))
}

/// Serves until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = build_state(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// A server on its own runtime thread; stops when dropped.
pub struct Background {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Background {
    pub fn start(state: AppState, listen: &str) -> std::io::Result<Background> {
        let listener = std::net::TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::Builder::new()
            .name("esp-http".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                    let _ = axum::serve(listener, router(state))
                        .with_graceful_shutdown(async {
                            let _ = stopped.await;
                        })
                        .await;
                });
            })?;
        Ok(Background {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
