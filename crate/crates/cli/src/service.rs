//! Read-mostly HTTP service over a directory of run folders.
//!
//! Snapshots are cached per run id. Interventions go through a single
//! writer lock so concurrent POSTs never race on run ids or directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use topos_core::atlas::export::{DiagnosticsFile, BUNDLE_FILE};
use topos_core::atlas::{diff_worlds, read_run, RunSnapshot};
use topos_core::intervene::{run_intervention, InterventionSpec};
use topos_core::pipeline::{sha256_hex, BundleSummary, SCHEMA_VERSION};
use topos_core::sheaf::{GluingOverlap, RestrictionDiagnostic};
use topos_core::ToposError;

use crate::commands::write_artifacts;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

pub struct AppState {
    runs_dir: PathBuf,
    cache: RwLock<BTreeMap<String, Arc<RunSnapshot>>>,
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(runs_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            runs_dir: runs_dir.into(),
            cache: RwLock::new(BTreeMap::new()),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty()
            && !id.starts_with('.')
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
    }

    fn snapshot(&self, id: &str) -> std::result::Result<Arc<RunSnapshot>, ApiError> {
        if !Self::valid_id(id) {
            return Err(ApiError::NotFound(format!("run `{id}` not found")));
        }
        if let Some(s) = self.cache.read().expect("cache lock").get(id) {
            return Ok(s.clone());
        }
        let dir = self.runs_dir.join(id);
        if !dir.join(BUNDLE_FILE).is_file() {
            return Err(ApiError::NotFound(format!("run `{id}` not found")));
        }
        let snap = Arc::new(read_run(&dir).map_err(|e| ApiError::Internal(e.to_string()))?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(id.to_string(), snap.clone());
        Ok(snap)
    }

    fn run_ids(&self) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(&self.runs_dir) else {
            return Vec::new();
        };
        let mut ids: Vec<String> = entries
            .flatten()
            .filter(|e| e.path().join(BUNDLE_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| Self::valid_id(id))
            .collect();
        ids.sort();
        ids
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/atlas", get(atlas))
        .route("/runs/{id}/contexts/{cid}", get(context))
        .route("/runs/{id}/diagnostics", get(diagnostics))
        .route("/runs/{id}/state", get(run_state))
        .route("/runs/{id}/interventions", post(intervene))
        .route("/runs/{a}/diff/{b}", get(diff))
        .with_state(state)
}

pub async fn serve(runs_dir: &Path, port: u16) -> std::io::Result<()> {
    let app = router(AppState::new(runs_dir));
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, app).await
}

#[derive(Debug, Serialize)]
struct RunEntry {
    id: String,
    summary: BundleSummary,
    recommendation: String,
    focus: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
}

async fn list_runs(State(st): State<Arc<AppState>>) -> ApiResult<Vec<RunEntry>> {
    let mut out = Vec::new();
    for id in st.run_ids() {
        let Ok(s) = st.snapshot(&id) else { continue };
        out.push(RunEntry {
            id,
            summary: s.bundle.summary.clone(),
            recommendation: serde_json::to_value(s.state.recommendation)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            focus: s.state.focus.clone(),
            parent: s.state.parent.clone(),
        });
    }
    Ok(Json(out))
}

async fn atlas(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<serde_json::Value> {
    let s = st.snapshot(&id)?;
    Ok(Json(
        serde_json::to_value(&s.atlas).map_err(|e| ApiError::Internal(e.to_string()))?,
    ))
}

async fn diagnostics(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<DiagnosticsFile> {
    let s = st.snapshot(&id)?;
    Ok(Json(DiagnosticsFile {
        schema_version: SCHEMA_VERSION,
        diagnostics: s.diagnostics.clone(),
    }))
}

async fn run_state(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<serde_json::Value> {
    let s = st.snapshot(&id)?;
    Ok(Json(
        serde_json::to_value(&s.state).map_err(|e| ApiError::Internal(e.to_string()))?,
    ))
}

#[derive(Debug, Serialize)]
struct ContextDetail {
    context: topos_core::model::Context,
    event_count: usize,
    psr: Option<serde_json::Value>,
    restrictions: Vec<RestrictionDiagnostic>,
    overlaps: Vec<GluingOverlap>,
}

async fn context(
    State(st): State<Arc<AppState>>,
    UrlPath((id, cid)): UrlPath<(String, String)>,
) -> ApiResult<ContextDetail> {
    let s = st.snapshot(&id)?;
    let b = &s.bundle;
    let ctx = b
        .site
        .context(&cid)
        .ok_or_else(|| ApiError::NotFound(format!("context `{cid}` not found in run `{id}`")))?;
    let psr = b.psr(&cid).map(|p| {
        json!({
            "histories": p.histories,
            "tests": p.tests,
            "table": p.table,
            "support": p.support,
            "provenance": p.provenance,
            "diagnostics": p.diagnostics,
            "test_polarity": p.test_polarity,
        })
    });
    let d = &b.diagnostics;
    Ok(Json(ContextDetail {
        context: ctx.clone(),
        event_count: b.assignment.events_in(&cid).len(),
        psr,
        restrictions: d
            .restrictions
            .iter()
            .filter(|r| r.source == cid || r.target == cid)
            .cloned()
            .collect(),
        overlaps: d
            .overlaps
            .iter()
            .filter(|o| o.left == cid || o.right == cid)
            .cloned()
            .collect(),
    }))
}

async fn diff(
    State(st): State<Arc<AppState>>,
    UrlPath((a, b)): UrlPath<(String, String)>,
) -> ApiResult<serde_json::Value> {
    let (old, new) = (st.snapshot(&a)?, st.snapshot(&b)?);
    let eps = old
        .bundle
        .config
        .atlas
        .eps_drift(&old.bundle.config.tolerance);
    let report = diff_worlds(&old.bundle, &new.bundle, eps);
    Ok(Json(
        serde_json::to_value(&report).map_err(|e| ApiError::Internal(e.to_string()))?,
    ))
}

/// Errors raised before anything is rebuilt are the caller's fault.
fn is_client_error(e: &ToposError) -> bool {
    match e {
        ToposError::Stage { stage, .. } => *stage == "intervention spec",
        ToposError::Config(_)
        | ToposError::InvalidArgument(_)
        | ToposError::UnknownContext(_)
        | ToposError::MissingTarget(_) => true,
        _ => false,
    }
}

/// Body is an intervention spec. Substrate paths resolve against the runs
/// directory.
async fn intervene(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> std::result::Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let spec =
        InterventionSpec::from_json(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let base = st.snapshot(&id)?;
    let _guard = st.writer.lock().await;
    let tag = &sha256_hex(body.as_bytes())[..8];
    let mut new_id = format!("{id}-{tag}");
    let mut n = 1;
    while st.runs_dir.join(&new_id).exists() {
        n += 1;
        new_id = format!("{id}-{tag}-{n}");
    }
    let runs_dir = st.runs_dir.clone();
    let (parent, dir) = (id.clone(), runs_dir.join(&new_id));
    let result = tokio::task::spawn_blocking(move || -> topos_core::Result<()> {
        let run = run_intervention(&base.bundle, &spec, &runs_dir)?;
        write_artifacts(&dir, &run.bundle, Some(parent), Some(&run.diff))?;
        Ok(())
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    match result {
        Ok(()) => Ok((StatusCode::CREATED, Json(json!({ "new_run_id": new_id })))),
        Err(e) if is_client_error(&e) => Err(ApiError::BadRequest(e.to_string())),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}
