//! HTTP+JSON API. Handlers are thin adapters over [`Platform`]; blocking
//! work runs on the blocking pool.

use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;

use super::config::Config;
use super::platform::{Platform, SubmitRequest};
use crate::auth::Principal;
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::leaderboard::{render_table, Grade, ViewFilter};
use crate::registry::LabeledCase;
use crate::task::TaskDescriptor;

/// Body of `POST /datasets`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegisterDatasetRequest {
    pub task: TaskDescriptor,
    pub cases: Vec<LabeledCase>,
    /// Directory holding file-valued features, on the platform host.
    #[serde(default)]
    pub files_dir: Option<PathBuf>,
}

/// Body of `POST /datasets/{id}/splits`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitRequest {
    pub seed: u64,
    pub test_fraction: Fraction,
}

#[derive(Debug, Default, Deserialize)]
struct LeaderboardQuery {
    format: Option<String>,
    participant: Option<String>,
    grade: Option<Grade>,
    baseline: Option<bool>,
}

/// HTTP status for an error code.
pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::Unauthorized(_) => StatusCode::UNAUTHORIZED,
        Error::NotFound { .. } | Error::UnknownTask(_) => StatusCode::NOT_FOUND,
        Error::DuplicateSubmission(_) | Error::TaskMismatch { .. } => StatusCode::CONFLICT,
        Error::Io(_) | Error::CorruptLog(_) | Error::SpawnFailed(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.0.code(), "message": self.0.to_string() });
        (status_for(&self.0), Json(body)).into_response()
    }
}

type Shared = Arc<Platform>;
type ApiResult<T> = std::result::Result<T, ApiError>;

fn principal(platform: &Platform, headers: &HeaderMap) -> Result<Principal> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    platform.authenticate(token)
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T> {
    Ok(serde_json::from_slice(body)?)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
}

async fn register_dataset(
    State(p): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let who = principal(&p, &headers)?;
    who.require_admin()?;
    let req: RegisterDatasetRequest = parse(&body)?;
    let rec =
        blocking(move || p.register_dataset(&who, req.task, req.cases, req.files_dir.as_deref()))
            .await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn create_split(
    State(p): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let who = principal(&p, &headers)?;
    let req: SplitRequest = parse(&body)?;
    let rec = blocking(move || p.create_split(&who, &id, req.seed, req.test_fraction)).await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn export_public(State(p): State<Shared>, Path(task): Path<String>) -> ApiResult<Response> {
    let archive = blocking(move || p.export_public(&task)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-tar")], archive.bytes).into_response())
}

async fn submit(
    State(p): State<Shared>,
    Path(task): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let who = principal(&p, &headers)?;
    let req: SubmitRequest = parse(&body)?;
    let outcome = blocking(move || p.submit(&who, &task, &req)).await?;
    if outcome.eligibility.eligible {
        Ok((StatusCode::ACCEPTED, Json(outcome)).into_response())
    } else {
        let err = Error::NotEligible(outcome.submission_id.clone());
        let body = json!({ "error": err.code(), "message": err.to_string(), "outcome": outcome });
        Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response())
    }
}

async fn submission(
    State(p): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let who = principal(&p, &headers)?;
    Ok(Json(p.submission(&who, &id)?).into_response())
}

async fn report(
    State(p): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let who = principal(&p, &headers)?;
    Ok(Json(p.report(&who, &id)?).into_response())
}

async fn leaderboard(
    State(p): State<Shared>,
    Path(task): Path<String>,
    Query(q): Query<LeaderboardQuery>,
) -> ApiResult<Response> {
    let filter = ViewFilter {
        participant: q.participant,
        grade: q.grade,
        baseline: q.baseline,
    };
    let entries = p.leaderboard(&task, &filter)?;
    Ok(match q.format.as_deref() {
        Some("text") => (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            render_table(&task, &entries),
        )
            .into_response(),
        None | Some("json") => Json(json!({ "task_id": task, "entries": entries })).into_response(),
        Some(other) => return Err(Error::invalid(format!("unknown format `{other}`")).into()),
    })
}

async fn admin_state(State(p): State<Shared>, headers: HeaderMap) -> ApiResult<Response> {
    principal(&p, &headers)?.require_admin()?;
    Ok(Json(p.state()).into_response())
}

pub fn router(platform: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/datasets", post(register_dataset))
        .route("/datasets/{id}/splits", post(create_split))
        .route("/tasks/{id}/public", get(export_public))
        .route("/tasks/{id}/submissions", post(submit))
        .route("/tasks/{id}/leaderboard", get(leaderboard))
        .route("/submissions/{id}", get(submission))
        .route("/submissions/{id}/report", get(report))
        .route("/admin/state", get(admin_state))
        .with_state(platform)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    platform: Shared,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router(platform))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

async fn shutdown_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).ok();
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = async { match term.as_mut() { Some(t) => { t.recv().await; } None => std::future::pending().await } } => {}
    }
}

/// Opens the platform, starts the workers and serves until SIGINT/SIGTERM.
pub fn run_server(config: &Config) -> Result<()> {
    let platform = Arc::new(Platform::open(&config.data_dir, config.credentials()?)?);
    let stop = Arc::new(AtomicBool::new(false));
    let idle = Duration::from_millis(config.idle_poll_ms);
    let workers: Vec<_> = (0..config.workers)
        .map(|_| {
            let (p, stop) = (platform.clone(), stop.clone());
            std::thread::spawn(move || p.run_worker(&stop, idle))
        })
        .collect();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let result = runtime.block_on(async {
        let listener = TcpListener::bind(config.listen).await?;
        // Printed on stdout so supervisors and tests can find the bound port.
        println!("listening on http://{}", listener.local_addr()?);
        info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "serving");
        serve(platform, listener, shutdown_signal()).await
    });
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    for w in workers {
        let _ = w.join();
    }
    result
}
