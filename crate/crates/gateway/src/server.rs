//! JSON-over-HTTP contest sessions.
//!
//! Threshold changes and acceptance are answered immediately. Edge cuts
//! retrain in a background worker on a copy of the session; the session
//! reports `status = "training"` until the copy is swapped back in, and any
//! revision arriving meanwhile is refused with 409.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contestable::data::{read_category_map, read_csv, Dataset};
use contestable::discovery::{ContestSession, ExtractionConfig, HistoryRecord, Revision, SessionMetrics, SessionStatus, WeightedGraphJson};
use contestable::injector::{train_unconstrained, EpochRecord};
use contestable::jointnet::{JointNetwork, Task};
use contestable::netcore::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{GatewayError, GatewayResult};
use crate::manifest::write_json;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    defaults: RunConfig,
    sessions_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

struct Slot {
    state: Mutex<SlotState>,
}

struct SlotState {
    session: ContestSession<f64>,
    training: bool,
    progress: Option<EpochRecord>,
    error: Option<String>,
    checkpoint: Option<PathBuf>,
}

impl AppState {
    pub fn new(defaults: RunConfig, sessions_dir: PathBuf) -> Self {
        Self {
            inner: Arc::new(Inner {
                defaults,
                sessions_dir,
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

/// Where a session's data comes from: a CSV on the server, or rows inline
/// with the target in the first column.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    File {
        path: PathBuf,
        #[serde(default = "default_target")]
        target: String,
        #[serde(default = "default_task")]
        task: Task,
        #[serde(default)]
        categories: Option<PathBuf>,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Inline {
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        #[serde(default = "default_task")]
        task: Task,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn default_target() -> String {
    "Y".into()
}

fn default_task() -> Task {
    Task::Regression
}

fn yes() -> bool {
    true
}

impl DatasetSource {
    fn load(&self) -> contestable::Result<Dataset> {
        match self {
            DatasetSource::File {
                path,
                target,
                task,
                categories,
                standardize,
            } => {
                let cats = categories.as_ref().map(read_category_map).transpose()?;
                let d = read_csv(path, target, *task, cats.as_ref())?.dataset;
                if *standardize {
                    d.standardize()
                } else {
                    Ok(d)
                }
            }
            DatasetSource::Inline {
                columns,
                rows,
                task,
                standardize,
            } => {
                let width = columns.len();
                if let Some(bad) = rows.iter().position(|r| r.len() != width) {
                    return Err(contestable::Error::Validation(format!("row {bad} does not have {width} values")));
                }
                let values = Matrix::from_vec(rows.len(), width, rows.concat())?;
                let d = Dataset::new(values, columns.clone(), *task)?;
                if *standardize {
                    d.standardize()
                } else {
                    Ok(d)
                }
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: DatasetSource,
    /// Partial run configuration overlaid on the server defaults.
    #[serde(default)]
    pub config: Option<Value>,
    /// Start from a trained checkpoint instead of training unconstrained.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireStatus {
    Open,
    Training,
    Accepted,
    Aborted,
}

/// Body of every session response.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub status: WireStatus,
    pub tau: f64,
    pub graph: WeightedGraphJson,
    pub metrics: SessionMetrics,
    pub banned: Vec<[usize; 2]>,
    pub history: Vec<HistoryRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress: Option<EpochRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl SlotState {
    fn snapshot(&self) -> SessionState {
        let view = self.session.view();
        let status = if self.training {
            WireStatus::Training
        } else {
            match view.status {
                SessionStatus::Open => WireStatus::Open,
                SessionStatus::Accepted => WireStatus::Accepted,
                SessionStatus::Aborted => WireStatus::Aborted,
            }
        };
        SessionState {
            session_id: view.session_id,
            status,
            tau: view.tau,
            graph: view.graph,
            metrics: view.history.last().expect("sessions start with one record").metrics,
            banned: view.banned,
            history: view.history,
            progress: self.progress,
            error: self.error.clone(),
            checkpoint: self.checkpoint.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<contestable::Error> for ApiError {
    fn from(e: contestable::Error) -> Self {
        use contestable::Error as E;
        let status = match &e {
            E::State(_) => StatusCode::CONFLICT,
            E::Shape { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/revise", post(revise))
        .route("/sessions/{id}/accept", post(accept))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> GatewayResult<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| GatewayError::Internal(format!("cannot bind {addr}: {e}")))?;
    log::info!(
        "listening on http://{}",
        listener.local_addr().map_err(|e| GatewayError::Internal(e.to_string()))?
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| GatewayError::Internal(e.to_string()))
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionState>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let cfg = match &req.config {
        Some(overlay) => app
            .inner
            .defaults
            .merged(overlay)
            .map_err(|e| ApiError::bad_request(format!("invalid config: {e}")))?,
        None => app.inner.defaults.clone(),
    };
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let extraction = ExtractionConfig {
        tau: req.tau.unwrap_or(cfg.extraction.tau),
        ..cfg.extraction
    };
    let id = uuid::Uuid::new_v4().to_string();
    let session_id = id.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<ContestSession<f64>, ApiError> {
        let data = req.dataset.load()?;
        let net = match &req.checkpoint {
            Some(path) => JointNetwork::<f64>::load_checkpoint(path)?,
            None => {
                let spec = cfg.network.spec(data.features(), data.task(), cfg.train.seed);
                train_unconstrained(&data, JointNetwork::new(&spec)?, &cfg.train)?.network
            }
        };
        Ok(ContestSession::new(session_id, Arc::new(data), net, cfg.train.clone(), extraction)?)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let slot = Arc::new(Slot {
        state: Mutex::new(SlotState {
            session,
            training: false,
            progress: None,
            error: None,
            checkpoint: None,
        }),
    });
    let snapshot = slot.state.lock().expect("slot lock").snapshot();
    app.inner.sessions.write().expect("session table lock").insert(id.clone(), slot);
    log::info!("session {id} created with {} edges", snapshot.graph.graph.edges.len());
    Ok((StatusCode::CREATED, Json(snapshot)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let slot = app.slot(&id)?;
    let snapshot = slot.state.lock().expect("slot lock").snapshot();
    Ok(Json(snapshot))
}

async fn revise(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let revision: Revision = parse_body(&body)?;
    if revision == Revision::Accept {
        return accept_slot(&app, &id, &slot).map(|s| Json(s).into_response());
    }
    let mut guard = slot.state.lock().expect("slot lock");
    if guard.training {
        return Err(ApiError::conflict("a revision is already training"));
    }
    guard.session.check_revision(&revision)?;
    match revision {
        Revision::CutEdges { .. } => {
            guard.training = true;
            guard.error = None;
            guard.progress = None;
            let mut working = guard.session.clone();
            let snapshot = guard.snapshot();
            drop(guard);
            let worker_slot = Arc::clone(&slot);
            tokio::task::spawn_blocking(move || {
                let progress_slot = Arc::clone(&worker_slot);
                let result = working.contest_step_with_progress(revision, |rec| {
                    progress_slot.state.lock().expect("slot lock").progress = Some(*rec);
                });
                let mut st = worker_slot.state.lock().expect("slot lock");
                match result {
                    Ok(_) => st.session = working,
                    Err(e) => {
                        log::error!("session {}: retraining failed: {e}", st.session.id());
                        st.error = Some(e.to_string());
                    }
                }
                st.training = false;
            });
            Ok((StatusCode::ACCEPTED, Json(snapshot)).into_response())
        }
        other => {
            guard.session.contest_step(other)?;
            Ok(Json(guard.snapshot()).into_response())
        }
    }
}

async fn accept(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let slot = app.slot(&id)?;
    accept_slot(&app, &id, &slot).map(Json)
}

fn accept_slot(app: &AppState, id: &str, slot: &Slot) -> Result<SessionState, ApiError> {
    let mut guard = slot.state.lock().expect("slot lock");
    if guard.training {
        return Err(ApiError::conflict("a revision is still training"));
    }
    guard.session.contest_step(Revision::Accept)?;
    let dir = app.inner.sessions_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
    let checkpoint = dir.join("checkpoint.json");
    guard.session.network().save_checkpoint(&checkpoint)?;
    write_json(&dir.join("history.json"), &guard.session.history()).map_err(|e| ApiError::internal(e.to_string()))?;
    write_json(&dir.join("graph.json"), &guard.session.view().graph).map_err(|e| ApiError::internal(e.to_string()))?;
    guard.checkpoint = Some(checkpoint);
    log::info!("session {id} accepted with {} edges", guard.session.graph().edge_count());
    Ok(guard.snapshot())
}
