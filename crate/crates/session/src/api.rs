//! Routes under `/api/v1`.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/v1/health` | service name and version |
//! | GET, POST | `/api/v1/runs` | list runs, create a run |
//! | GET | `/api/v1/runs/{run}` | run descriptor |
//! | GET | `/api/v1/runs/{run}/pending` | pending individuals |
//! | GET | `/api/v1/runs/{run}/history` | per-generation statistics |
//! | GET | `/api/v1/runs/{run}/individuals/{id}` | one individual |
//! | GET | `/api/v1/runs/{run}/individuals/{id}/mesh` | binary STL |
//! | GET | `/api/v1/runs/{run}/individuals/{id}/voxels` | voxel grid file |
//! | POST | `/api/v1/runs/{run}/individuals/{id}/fitness` | record a measurement |
//! | POST | `/api/v1/runs/{run}/advance` | form the next generation |
//!
//! Errors are `{"error": kind, "message": text}` with status 400, 404, 409
//! or 500.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use supershape_core::IndividualId;
use tower_http::services::ServeDir;

use crate::service::{ApiError, Session};
use crate::store::ArtifactKind;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<Session>;

/// Runs `f` on the blocking pool; rendering and disk writes happen there.
async fn blocking<T, F>(session: Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Session) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&session))
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

fn json<T: Serialize>(value: T) -> Response {
    Json(value).into_response()
}

/// Empty bodies mean "all defaults".
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::BadRequest(format!("request body: {e}")))
}

fn individual_id(raw: &str) -> Result<IndividualId, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::NotFound(format!("no individual {raw}")))
}

async fn health() -> Response {
    json(serde_json::json!({
        "service": "supershape-session",
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn list_runs(State(s): State<Shared>) -> Result<Response, ApiError> {
    Ok(json(blocking(s, |s| Ok(s.list_runs())).await?))
}

async fn create_run(State(s): State<Shared>, bytes: Bytes) -> Result<Response, ApiError> {
    let req = body(&bytes)?;
    let run = blocking(s, move |s| s.create_run(req)).await?;
    Ok((StatusCode::CREATED, Json(run)).into_response())
}

async fn get_run(State(s): State<Shared>, Path(run): Path<String>) -> Result<Response, ApiError> {
    Ok(json(blocking(s, move |s| s.get_run(&run)).await?))
}

async fn pending(State(s): State<Shared>, Path(run): Path<String>) -> Result<Response, ApiError> {
    Ok(json(blocking(s, move |s| s.list_pending(&run)).await?))
}

async fn history(State(s): State<Shared>, Path(run): Path<String>) -> Result<Response, ApiError> {
    Ok(json(blocking(s, move |s| s.history(&run)).await?))
}

async fn individual(
    State(s): State<Shared>,
    Path((run, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let id = individual_id(&id)?;
    Ok(json(blocking(s, move |s| s.get_individual(&run, id)).await?))
}

async fn artifact(
    s: Shared,
    run: String,
    id: String,
    kind: ArtifactKind,
) -> Result<Response, ApiError> {
    let id = individual_id(&id)?;
    let name = match kind {
        ArtifactKind::Stl => format!("{run}-ind{id}.stl"),
        ArtifactKind::Vox => format!("{run}-ind{id}.vox"),
        ArtifactKind::Genome => format!("{run}-ind{id}.genome.json"),
    };
    let content_type = match kind {
        ArtifactKind::Stl => "model/stl",
        ArtifactKind::Vox => "application/octet-stream",
        ArtifactKind::Genome => "application/json",
    };
    let bytes = blocking(s, move |s| s.artifact(&run, id, kind)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, content_type.to_owned()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{name}\""),
            ),
        ],
        bytes,
    )
        .into_response())
}

async fn mesh(
    State(s): State<Shared>,
    Path((run, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    artifact(s, run, id, ArtifactKind::Stl).await
}

async fn voxels(
    State(s): State<Shared>,
    Path((run, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    artifact(s, run, id, ArtifactKind::Vox).await
}

async fn fitness(
    State(s): State<Shared>,
    Path((run, id)): Path<(String, String)>,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let id = individual_id(&id)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::BadRequest("request body: missing value".into()));
    }
    let req = serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::BadRequest(format!("request body: {e}")))?;
    Ok(json(blocking(s, move |s| s.submit_fitness(&run, id, req)).await?))
}

async fn advance(
    State(s): State<Shared>,
    Path(run): Path<String>,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let req = body(&bytes)?;
    Ok(json(blocking(s, move |s| s.advance(&run, req)).await?))
}

async fn not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

const INDEX: &str = r#"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>supershape session</title></head>
<body>
<h1>supershape session</h1>
<p>The JSON API is served under <code>/api/v1</code>. Start the server with
<code>--static-dir</code> to serve an operator dashboard here.</p>
<ul id="runs"></ul>
<script>
fetch("/api/v1/runs").then(r => r.json()).then(runs => {
  const ul = document.getElementById("runs");
  for (const run of runs) {
    const li = document.createElement("li");
    li.textContent = `${run.run_id} ${run.mode} generation ${run.generation}, ${run.pending} pending`;
    ul.appendChild(li);
  }
});
</script>
</body>
</html>
"#;

/// The full application. Static files come from `static_dir` when given,
/// otherwise `/` serves a small built-in page.
pub fn router(session: Arc<Session>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{run}", get(get_run))
        .route("/runs/{run}/pending", get(pending))
        .route("/runs/{run}/history", get(history))
        .route("/runs/{run}/advance", post(advance))
        .route("/runs/{run}/individuals/{id}", get(individual))
        .route("/runs/{run}/individuals/{id}/mesh", get(mesh))
        .route("/runs/{run}/individuals/{id}/voxels", get(voxels))
        .route("/runs/{run}/individuals/{id}/fitness", post(fitness))
        .fallback(not_found)
        .with_state(session);
    let app = Router::new().nest("/api/v1", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(INDEX) })),
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(
    session: Arc<Session>,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(session, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
