//! HTTP annotation service: hands out leased labeling jobs, appends label
//! records to a durable log, and reports live progress and metrics.

mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pooljudge_core::metrics::DEFAULT_KS;
use pooljudge_core::pooling::Label;
use serde::Deserialize;
use serde_json::json;

pub use state::{
    AnnotationJob, AppState, Clock, ManualClock, PairView, Progress, ServiceConfig, ServiceError,
    SystemClock, DEFAULT_GUIDELINES, DEFAULT_LEASE_SECS,
};

pub type SharedState = Arc<AppState>;

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::MissingRater => StatusCode::BAD_REQUEST,
            ServiceError::UnknownJob(_)
            | ServiceError::UnknownRun(_)
            | ServiceError::UnknownPair(_) => StatusCode::NOT_FOUND,
            ServiceError::JobClosed(_)
            | ServiceError::LeaseMismatch(_)
            | ServiceError::LeaseExpired(_) => StatusCode::CONFLICT,
            ServiceError::Metric(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Log { .. } | ServiceError::Pooling(_) | ServiceError::Corpus(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": msg.into() })),
    )
        .into_response()
}

#[derive(Deserialize)]
struct NextParams {
    rater_id: Option<String>,
}

async fn next_job(State(state): State<SharedState>, Query(p): Query<NextParams>) -> Response {
    let Some(rater) = p.rater_id.filter(|r| !r.trim().is_empty()) else {
        return bad_request("rater_id is required");
    };
    match state.next_job(&rater) {
        Ok(Some(job)) => Json(job).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct Submission {
    job_id: String,
    rater_id: String,
    label: String,
}

async fn submit_label(
    State(state): State<SharedState>,
    body: Result<Json<Submission>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(sub) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    let Some(label) = Label::parse(&sub.label) else {
        return bad_request(format!(
            "label must be relevant, irrelevant or escalated, got {:?}",
            sub.label
        ));
    };
    match state.submit(&sub.job_id, &sub.rater_id, label) {
        Ok(record) => Json(record).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(state): State<SharedState>) -> Json<Progress> {
    Json(state.progress())
}

#[derive(Deserialize)]
struct MetricParams {
    run: Option<String>,
    /// One cutoff or a comma-separated list.
    k: Option<String>,
}

async fn metrics(State(state): State<SharedState>, Query(p): Query<MetricParams>) -> Response {
    let Some(run) = p.run else {
        return bad_request("run is required");
    };
    let ks = match p.k {
        None => DEFAULT_KS.to_vec(),
        Some(raw) => match raw
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
        {
            Ok(ks) if !ks.is_empty() && !ks.contains(&0) => ks,
            _ => return bad_request(format!("k must be positive integers, got {raw:?}")),
        },
    };
    match state.metrics(&run, &ks) {
        Ok(report) => Json(json!({
            "system": report.system,
            "ks": report.ks,
            "aggregate": report.aggregate,
            "no_known_positive": report.no_known_positive.len(),
            "unjudged_queries": report.unjudged_queries.len(),
        }))
        .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn guidelines(State(state): State<SharedState>) -> Json<serde_json::Value> {
    Json(json!({ "text": state.guidelines() }))
}

async fn pair(State(state): State<SharedState>, Path(id): Path<String>) -> Response {
    match state.pair(&id) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export_log(State(state): State<SharedState>) -> Response {
    match state.export_log() {
        Ok(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/queue/next", get(next_job))
        .route("/api/labels", post(submit_label))
        .route("/api/labels/export", get(export_log))
        .route("/api/progress", get(progress))
        .route("/api/metrics", get(metrics))
        .route("/api/guidelines", get(guidelines))
        .route("/api/pairs/{id}", get(pair))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: SharedState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
