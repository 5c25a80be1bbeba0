//! HTTP API over the run registry.
//!
//! Routes:
//! - `POST /runs` queue a run from a JSON config (201, or 400 with field errors)
//! - `GET /runs`, `GET /runs/:id`
//! - `GET /runs/:id/series` simulated outcome, `GET /runs/:id/policy[?format=csv]`
//! - `POST /runs/:id/cancel`
//! - `GET /pareto?ids=a,b,...` dominance among finished runs
//! - `GET /datasets` data directories holding `series.csv`
//!
//! Runs wait in a bounded queue served by a fixed number of workers.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use oro_core::hydro::Deviations;
use oro_core::moss::pareto_filter;

use crate::config::{FieldError, RunConfig};
use crate::runner::{self, CancelSet, SharedRegistry};
use crate::store::RunStatus;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    pub queue_depth: usize,
    /// Relative data paths in submitted configs resolve against this.
    pub data_dir: Option<PathBuf>,
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            queue_depth: 16,
            data_dir: None,
            token: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    reg: SharedRegistry,
    cancels: Arc<CancelSet>,
    queue: mpsc::Sender<String>,
    cfg: Arc<ServiceConfig>,
}

/// Build the router and start its workers on the current tokio runtime.
/// Runs left queued by an earlier process are queued again.
pub fn start(reg: SharedRegistry, cfg: ServiceConfig) -> Router {
    let (tx, rx) = mpsc::channel::<String>(cfg.queue_depth.max(1));
    let rx = Arc::new(tokio::sync::Mutex::new(rx));
    let cancels = Arc::new(CancelSet::default());
    for _ in 0..cfg.workers.max(1) {
        let rx = rx.clone();
        let reg = reg.clone();
        let cancels = cancels.clone();
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                let Some(id) = next else { break };
                let (reg, cancels) = (reg.clone(), cancels.clone());
                let res = tokio::task::spawn_blocking(move || runner::execute(&reg, &cancels, &id)).await;
                match res {
                    Ok(Err(e)) => log::error!("worker: {e:#}"),
                    Err(e) => log::error!("worker task: {e}"),
                    Ok(Ok(_)) => {}
                }
            }
        });
    }
    let pending: Vec<String> = {
        let r = reg.lock().unwrap_or_else(|e| e.into_inner());
        r.list()
            .iter()
            .filter(|x| x.status == RunStatus::Queued)
            .map(|x| x.id.clone())
            .collect()
    };
    for id in pending {
        if tx.try_send(id.clone()).is_err() {
            log::warn!("{id} left queued: queue is full");
        }
    }
    let state = AppState {
        reg,
        cancels,
        queue: tx,
        cfg: Arc::new(cfg),
    };
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/:id", get(get_run))
        .route("/runs/:id/series", get(get_series))
        .route("/runs/:id/policy", get(get_policy))
        .route("/runs/:id/cancel", post(cancel_run))
        .route("/pareto", get(pareto))
        .route("/datasets", get(datasets))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(s): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &s.cfg.token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
        }
    }
    next.run(req).await
}

fn error(code: StatusCode, msg: impl Into<String>) -> Response {
    (code, Json(json!({ "error": msg.into() }))).into_response()
}

fn field_errors(errs: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "errors": errs }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("no run {id}"))
}

impl AppState {
    fn registry(&self) -> std::sync::MutexGuard<'_, crate::store::Registry> {
        self.reg.lock().unwrap_or_else(|e| e.into_inner())
    }
}

async fn create_run(State(s): State<AppState>, body: Bytes) -> Response {
    let cfg = match serde_json::from_slice::<RunConfig>(&body) {
        Ok(c) => c,
        Err(e) => {
            return field_errors(vec![FieldError {
                field: "body".into(),
                message: e.to_string(),
            }])
        }
    };
    let cfg = match &s.cfg.data_dir {
        Some(d) => cfg.resolved(d),
        None => cfg,
    };
    let reg = s.reg.clone();
    let rec = match tokio::task::spawn_blocking(move || runner::submit(&reg, cfg)).await {
        Ok(Ok(rec)) => rec,
        Ok(Err(errs)) => return field_errors(errs),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    if s.queue.try_send(rec.id.clone()).is_err() {
        let _ = s.registry().update(&rec.id, |x| {
            x.status = RunStatus::Failed;
            x.message = Some("queue full".into());
        });
        return error(StatusCode::SERVICE_UNAVAILABLE, "run queue is full");
    }
    (StatusCode::CREATED, Json(json!({ "id": rec.id, "status": rec.status }))).into_response()
}

async fn list_runs(State(s): State<AppState>) -> Response {
    Json(s.registry().list().to_vec()).into_response()
}

async fn get_run(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match s.registry().get(&id) {
        Some(r) => Json(r.clone()).into_response(),
        None => not_found(&id),
    }
}

fn run_file(s: &AppState, id: &str, name: &str, content_type: &str) -> Response {
    let dir = {
        let r = s.registry();
        if r.get(id).is_none() {
            return not_found(id);
        }
        r.run_dir(id)
    };
    match std::fs::read(dir.join(name)) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type.to_string())], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, format!("run {id} has no {name}")),
    }
}

async fn get_series(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    run_file(&s, &id, "outcome.json", "application/json")
}

#[derive(Debug, Deserialize)]
struct PolicyQuery {
    format: Option<String>,
}

async fn get_policy(State(s): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<PolicyQuery>) -> Response {
    match q.format.as_deref() {
        Some("csv") => run_file(&s, &id, "policy.csv", "text/csv"),
        None | Some("json") => run_file(&s, &id, "policy.json", "application/json"),
        Some(f) => error(StatusCode::BAD_REQUEST, format!("unknown format {f}")),
    }
}

async fn cancel_run(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    if s.registry().get(&id).is_none() {
        return not_found(&id);
    }
    match runner::cancel(&s.reg, &s.cancels, &id) {
        Ok(rec) => Json(rec).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct ParetoQuery {
    ids: Option<String>,
}

#[derive(Debug, Serialize)]
struct ParetoRow {
    id: String,
    label: String,
    sums: Deviations,
    dominated: bool,
}

async fn pareto(State(s): State<AppState>, Query(q): Query<ParetoQuery>) -> Response {
    let r = s.registry();
    let ids: Vec<String> = match &q.ids {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect(),
        None => r.list().iter().map(|x| x.id.clone()).collect(),
    };
    let mut rows = Vec::new();
    for id in &ids {
        let Some(rec) = r.get(id) else { return not_found(id) };
        let sums = rec.summary.as_ref().and_then(|x| x.sums.map(|d| (x.label.clone(), d)));
        match sums {
            Some((label, sums)) if rec.status == RunStatus::Done => rows.push(ParetoRow {
                id: id.clone(),
                label,
                sums,
                dominated: false,
            }),
            _ if q.ids.is_some() => return error(StatusCode::BAD_REQUEST, format!("run {id} has no finished outcome")),
            _ => {}
        }
    }
    let sums: Vec<Deviations> = rows.iter().map(|x| x.sums).collect();
    let front = pareto_filter(&sums);
    for (k, row) in rows.iter_mut().enumerate() {
        row.dominated = !front.contains(&k);
    }
    Json(json!({ "runs": rows, "front": front.iter().map(|&k| rows[k].id.clone()).collect::<Vec<_>>() }))
        .into_response()
}

async fn datasets(State(s): State<AppState>) -> Response {
    let Some(dir) = &s.cfg.data_dir else {
        return Json(Vec::<String>::new()).into_response();
    };
    let mut names = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            if e.path().join("series.csv").is_file() {
                names.push(e.file_name().to_string_lossy().into_owned());
            }
        }
    }
    names.sort();
    Json(names).into_response()
}
