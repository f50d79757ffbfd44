//! HTTP front end for running scenarios and exploring what-if interventions.
//!
//! Sessions live in memory. Each holds a converged baseline that is never
//! modified; what-ifs start from a copy of it and are stored by name.
//! Requests for one session are serialized, requests for different sessions
//! run concurrently.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use citymove_core::report::{compare, layers, summarize, write_json, Comparison, SavedState, Summary};
use citymove_core::scenario::{Intervention, Model, Scenario};
use citymove_core::simulation::{apply_interventions, resume, run_to_convergence, SimulationState};
use citymove_core::Error;

/// Scenarios with more agents than this run as background jobs.
pub const DEFAULT_JOB_THRESHOLD: usize = 50_000;

#[derive(Debug, Clone)]
pub struct Config {
    pub job_threshold: usize,
    /// When set, baseline and what-if states are also written here in the
    /// CLI's state format.
    pub state_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            job_threshold: DEFAULT_JOB_THRESHOLD,
            state_dir: None,
        }
    }
}

struct Run {
    model: Model,
    state: SimulationState,
    summary: Summary,
}

struct WhatIf {
    run: Run,
    comparison: Comparison,
}

enum Baseline {
    Running,
    Failed(ApiError),
    Ready(Arc<Run>),
}

struct Session {
    baseline: Baseline,
    whatifs: BTreeMap<String, WhatIf>,
}

type SessionRef = Arc<Mutex<Session>>;

pub struct Service {
    config: Config,
    sessions: RwLock<HashMap<String, SessionRef>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(config: Config) -> Arc<Service> {
        Arc::new(Service {
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn session(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }

    fn persist(&self, rel: &Path, run: &Run, comparison: Option<&Comparison>) -> Result<(), ApiError> {
        let Some(root) = &self.config.state_dir else {
            return Ok(());
        };
        let dir = root.join(rel);
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join("state.json"), &SavedState::capture(&run.model, &run.state))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(c) = comparison {
            write_json(&dir.join("comparison.json"), c).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(())
    }
}

/// An error response: status plus a JSON body of the form
/// `{"error": kind, "message": text, "diagnostics": [...]}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: String, diagnostics: Vec<Value>) -> Self {
        ApiError {
            status,
            body: json!({"error": kind, "message": message, "diagnostics": diagnostics}),
        }
    }

    fn not_found(message: String) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message, Vec::new())
    }

    fn conflict(message: String) -> Self {
        ApiError::new(StatusCode::CONFLICT, "conflict", message, Vec::new())
    }

    fn invalid(message: String) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message, Vec::new())
    }

    fn internal(message: String) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, Vec::new())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let diagnostic = match &e {
            Error::MissingLayer { layer, path } => json!({"layer": layer, "path": path}),
            Error::Feature { file, feature, message } => {
                json!({"file": file, "feature": feature, "message": message})
            }
            Error::File { file, message } => json!({"file": file, "message": message}),
            Error::Row { file, line, message } => json!({"file": file, "line": line, "message": message}),
            Error::Eviction { target, message } => json!({"target": target, "message": message}),
            Error::UnknownTarget(target) => json!({"target": target, "message": "unknown target"}),
            _ => json!({"message": message}),
        };
        match e {
            Error::Eviction { .. } => ApiError::new(StatusCode::CONFLICT, "eviction", message, vec![diagnostic]),
            e if e.is_validation() => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message, vec![diagnostic])
            }
            _ => ApiError::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Body of `POST /sessions`. Exactly one of `path`, `toml` or `scenario`
/// must be given; relative input paths in a document resolve against `base`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub path: Option<PathBuf>,
    pub toml: Option<String>,
    pub scenario: Option<Value>,
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
}

impl CreateSession {
    fn scenario(&self) -> Result<Scenario, ApiError> {
        let base = self.base.clone().unwrap_or_else(|| PathBuf::from("."));
        let mut scenario = match (&self.path, &self.toml, &self.scenario) {
            (Some(path), None, None) => {
                if !path.is_file() {
                    return Err(ApiError::invalid(format!("{}: no such scenario file", path.display())));
                }
                Scenario::from_file(path)?
            }
            (None, Some(text), None) => Scenario::from_toml_str(text, &base)?,
            (None, None, Some(doc)) => Scenario::from_json_str(&doc.to_string(), &base)?,
            _ => {
                return Err(ApiError::invalid(
                    "give exactly one of `path`, `toml` or `scenario`".into(),
                ))
            }
        };
        for (key, value) in &self.overrides {
            let text = match value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            scenario.set(key, &text)?;
        }
        Ok(scenario)
    }
}

/// Body of `POST /sessions/{id}/whatifs`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateWhatIf {
    pub name: String,
    #[serde(default)]
    pub interventions: Vec<Intervention>,
}

fn check_name(name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(ApiError::invalid(format!(
            "what-if name `{name}` must be non-empty and use only letters, digits, `-`, `_` and `.`"
        )))
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn baseline_run(model: Model) -> Result<Run, ApiError> {
    let state = run_to_convergence(&model)?;
    let summary = summarize(&model, &state);
    Ok(Run { model, state, summary })
}

async fn create_session(
    State(svc): State<Arc<Service>>,
    Json(req): Json<CreateSession>,
) -> Result<Response, ApiError> {
    let model = blocking(move || Ok(Model::load(&req.scenario()?)?)).await?;
    let id = format!("s{}", svc.next_id.fetch_add(1, Ordering::Relaxed));
    let job = model.n_agents() > svc.config.job_threshold;
    let session: SessionRef = Arc::new(Mutex::new(Session {
        baseline: Baseline::Running,
        whatifs: BTreeMap::new(),
    }));

    if job {
        svc.sessions.write().unwrap().insert(id.clone(), session.clone());
        let svc = svc.clone();
        let job_id = id.clone();
        tokio::spawn(async move {
            let outcome = blocking(move || baseline_run(model))
                .await
                .and_then(|run| svc.persist(Path::new(&job_id), &run, None).map(|()| run));
            session.lock().await.baseline = match outcome {
                Ok(run) => Baseline::Ready(Arc::new(run)),
                Err(e) => Baseline::Failed(e),
            };
        });
        let body = json!({"session_id": id, "status": "running"});
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }

    let run = blocking(move || baseline_run(model)).await?;
    svc.persist(Path::new(&id), &run, None)?;
    let body = json!({"session_id": id, "status": "ready", "summary": run.summary});
    session.lock().await.baseline = Baseline::Ready(Arc::new(run));
    svc.sessions.write().unwrap().insert(id, session);
    Ok(Json(body).into_response())
}

/// The ready baseline, or the response to give while it is not available.
fn ready(session: &Session) -> Result<Arc<Run>, Response> {
    match &session.baseline {
        Baseline::Ready(run) => Ok(run.clone()),
        Baseline::Running => Err((StatusCode::ACCEPTED, Json(json!({"status": "running"}))).into_response()),
        Baseline::Failed(e) => Err(e.clone().into_response()),
    }
}

async fn get_session(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = svc.session(&id)?;
    let session = session.lock().await;
    let body = match &session.baseline {
        Baseline::Running => json!({"session_id": id, "status": "running"}),
        Baseline::Failed(e) => json!({"session_id": id, "status": "failed", "error": e.body}),
        Baseline::Ready(run) => json!({
            "session_id": id,
            "status": "ready",
            "summary": run.summary,
            "whatifs": session.whatifs.keys().collect::<Vec<_>>(),
        }),
    };
    Ok(Json(body).into_response())
}

async fn get_summary(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = svc.session(&id)?;
    let session = session.lock().await;
    Ok(match ready(&session) {
        Ok(run) => Json(&run.summary).into_response(),
        Err(pending) => pending,
    })
}

async fn get_layers(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = svc.session(&id)?;
    let session = session.lock().await;
    Ok(match ready(&session) {
        Ok(run) => Json(layers(&run.model, &run.state)).into_response(),
        Err(pending) => pending,
    })
}

async fn post_whatif(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<CreateWhatIf>,
) -> Result<Response, ApiError> {
    check_name(&req.name)?;
    let session = svc.session(&id)?;
    let mut session = session.lock().await;
    let base = match ready(&session) {
        Ok(run) => run,
        Err(pending) if pending.status() == StatusCode::ACCEPTED => {
            return Err(ApiError::conflict(format!("session `{id}` is still running its baseline")))
        }
        Err(failed) => return Ok(failed),
    };
    if session.whatifs.contains_key(&req.name) {
        return Err(ApiError::conflict(format!("what-if `{}` already exists", req.name)));
    }
    let name = req.name;
    let interventions = req.interventions;
    let whatif = blocking(move || {
        let mut model = base.model.clone();
        let mut state = base.state.clone();
        apply_interventions(&mut model, &mut state, &interventions)?;
        resume(&model, &mut state);
        let summary = summarize(&model, &state);
        let comparison = compare(interventions, base.summary.clone(), summary.clone());
        Ok(WhatIf {
            run: Run { model, state, summary },
            comparison,
        })
    })
    .await?;
    svc.persist(
        &Path::new(&id).join("whatifs").join(&name),
        &whatif.run,
        Some(&whatif.comparison),
    )?;
    let body = Json(&whatif.comparison).into_response();
    session.whatifs.insert(name, whatif);
    Ok(body)
}

async fn with_whatif(
    svc: &Service,
    id: &str,
    name: &str,
    f: impl FnOnce(&WhatIf) -> Response,
) -> Result<Response, ApiError> {
    let session = svc.session(id)?;
    let session = session.lock().await;
    let whatif = session
        .whatifs
        .get(name)
        .ok_or_else(|| ApiError::not_found(format!("no what-if `{name}` in session `{id}`")))?;
    Ok(f(whatif))
}

async fn get_whatif(
    State(svc): State<Arc<Service>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    with_whatif(&svc, &id, &name, |w| Json(&w.comparison).into_response()).await
}

async fn get_whatif_layers(
    State(svc): State<Arc<Service>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    with_whatif(&svc, &id, &name, |w| Json(layers(&w.run.model, &w.run.state)).into_response()).await
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/summary", get(get_summary))
        .route("/sessions/{id}/layers", get(get_layers))
        .route("/sessions/{id}/whatifs", post(post_whatif))
        .route("/sessions/{id}/whatifs/{name}", get(get_whatif))
        .route("/sessions/{id}/whatifs/{name}/layers", get(get_whatif_layers))
        .with_state(svc)
}
