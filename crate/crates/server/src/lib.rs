//! HTTP front end over a directory of study stores.
//!
//! Each study lives in `<root>/<id>/` with its audit log. Mutations on one
//! study are serialized behind a write lock; reads share a read lock, and
//! different studies proceed in parallel.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use delphi_core::alignment::{AlignmentCategory, AlignmentTally};
use delphi_core::consensus::{classify_pending, CompatibilityBasis, TierTally};
use delphi_core::model::ResponseKey;
use delphi_core::report::{consensus_report, REPORT_JSON, REPORT_MD, TIERS_CSV};
use delphi_core::saturation::{permutation_robustness, EvaluationMode};
use delphi_core::store::{Clock, Command, ResponseDocument, SystemClock, EVENTS_FILE};
use delphi_core::{Error, PanelRole, StudyStore, WorkflowEvent, SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

/// Actor recorded on audit events when the `x-actor` header is absent.
pub const DEFAULT_ACTOR: &str = "facilitator";

type Handle = Arc<RwLock<StudyStore>>;
type ClockFactory = Arc<dyn Fn() -> Box<dyn Clock> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    root: PathBuf,
    open: Arc<Mutex<HashMap<String, Handle>>>,
    clock: ClockFactory,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self::with_clock(root, || Box::new(SystemClock))
    }

    pub fn with_clock(root: impl Into<PathBuf>, clock: impl Fn() -> Box<dyn Clock> + Send + Sync + 'static) -> Self {
        Self {
            root: root.into(),
            open: Arc::default(),
            clock: Arc::new(clock),
        }
    }

    fn handle(&self, id: &str) -> Result<Handle, ApiError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(ApiError::unknown_study(id));
        }
        let mut open = self.open.lock().expect("study table poisoned");
        if let Some(h) = open.get(id) {
            return Ok(h.clone());
        }
        let dir = self.root.join(id);
        if !dir.join(EVENTS_FILE).is_file() {
            return Err(ApiError::unknown_study(id));
        }
        let store = StudyStore::open(&dir, (self.clock)())?;
        let h = Arc::new(RwLock::new(store));
        open.insert(id.to_owned(), h.clone());
        Ok(h)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/transition", post(post_transition))
        .route("/studies/{id}/responses", post(post_responses))
        .route("/studies/{id}/consensus", get(get_consensus))
        .route("/studies/{id}/saturation", get(get_saturation))
        .route("/studies/{id}/alignment", get(get_alignment))
        .route("/studies/{id}/adjudications", post(post_adjudication))
        .route("/studies/{id}/clarifications", post(post_clarification))
        .route("/studies/{id}/report", get(get_report))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route".into()) })
        .with_state(state)
}

pub async fn serve(root: PathBuf, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(root))).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: String) -> Self {
        Self {
            status,
            code: code.to_owned(),
            message,
        }
    }

    fn unknown_study(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_study", format!("unknown study: {id}"))
    }

    fn bad_request(message: String) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_document", format!("malformed document: {message}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidTransition { .. } | Error::IllegalReclassification { .. } | Error::DuplicateResponse => {
                StatusCode::CONFLICT
            }
            Error::UnknownItem(_) | Error::UnknownPanelist(_) | Error::UnknownResponse(_) => StatusCode::NOT_FOUND,
            Error::MalformedDocument(_) | Error::Json(_) | Error::Csv(_) => StatusCode::BAD_REQUEST,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "code": self.code,
            "message": self.message,
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn actor(headers: &HeaderMap) -> String {
    headers
        .get("x-actor")
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.trim().is_empty())
        .unwrap_or(DEFAULT_ACTOR)
        .to_owned()
}

/// Parses a request body, insisting on the supported schema version.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    match value.get("schema_version").and_then(Value::as_str) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => return Err(ApiError::bad_request(format!("unsupported schema_version {other}"))),
        None => return Err(ApiError::bad_request("missing schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn envelope(mut body: Value) -> Json<Value> {
    if let Value::Object(map) = &mut body {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    Json(body)
}

/// Saves the snapshot after a successful mutation; the log already holds the event.
fn persist(store: &StudyStore) -> Result<(), ApiError> {
    store.save_snapshot().map_err(ApiError::from)
}

async fn get_study(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let h = app.handle(&id)?;
    let store = h.read().await;
    Ok(envelope(json!({
        "state": store.study().round_state,
        "event_count": store.events().len(),
        "study": store.study(),
    })))
}

#[derive(Deserialize)]
struct TransitionBody {
    event: WorkflowEvent,
}

async fn post_transition(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let req: TransitionBody = parse(&body)?;
    let actor = actor(&headers);
    let h = app.handle(&id)?;
    let mut store = h.write().await;
    let state = store.advance(&actor, req.event)?;
    persist(&store)?;
    let mut body = json!({ "state": state });
    if req.event == WorkflowEvent::EmitReport {
        body["files"] = json!([REPORT_MD, TIERS_CSV, REPORT_JSON]);
    }
    Ok(envelope(body))
}

async fn post_responses(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let doc = ResponseDocument::from_json(text)?;
    let h = app.handle(&id)?;
    let mut store = h.write().await;
    let report = store.ingest_responses(&actor(&headers), &doc)?;
    persist(&store)?;
    Ok(Json(serde_json::to_value(report).map_err(Error::from)?))
}

async fn get_consensus(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let h = app.handle(&id)?;
    let store = h.read().await;
    let study = store.study();
    let tally = TierTally::from_tiers(study.classifications.values().map(|c| c.tier));
    let classifications: Vec<_> = study
        .items
        .iter()
        .filter_map(|i| study.classifications.get(&i.id))
        .collect();
    // Suggested tiers for quorate items not yet classified.
    let suggestions = classify_pending(study)?;
    Ok(envelope(json!({
        "state": study.round_state,
        "tally": tally.to_document(),
        "classifications": classifications,
        "suggestions": suggestions,
    })))
}

#[derive(Deserialize)]
struct SaturationQuery {
    #[serde(default)]
    role: Option<PanelRole>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn get_saturation(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<SaturationQuery>) -> ApiResult {
    let h = app.handle(&id)?;
    let store = h.read().await;
    let role = q.role.unwrap_or(PanelRole::SeniorExpert);
    let seed = q.seed.unwrap_or(0);
    let size = store.study().members(role).count();
    let mode = match q.mode.as_deref() {
        None => EvaluationMode::for_panel(size, seed),
        Some("exhaustive") => EvaluationMode::Exhaustive,
        Some("sampled") => EvaluationMode::sampled(seed),
        Some(other) => return Err(ApiError::bad_request(format!("unknown mode {other}"))),
    };
    let report = permutation_robustness(store.study(), role, mode)?;
    Ok(envelope(json!({ "report": report, "curve_csv": report.curve_csv() })))
}

async fn get_alignment(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let h = app.handle(&id)?;
    let store = h.read().await;
    let study = store.study();
    let records: Vec<_> = study.items.iter().filter_map(|i| study.alignments.get(&i.id)).collect();
    let tally = AlignmentTally::from_categories(records.iter().map(|r| r.category));
    Ok(envelope(json!({
        "tally": tally,
        "total": tally.total(),
        "band_concordance": tally.band_concordance().to_string(),
        "concordance_percent": tally.concordance_percent(),
        "overridden": records.iter().filter(|r| r.facilitator_override.is_some()).count(),
        "records": records,
    })))
}

/// Either a consensus-basis decision or an alignment override.
#[derive(Deserialize)]
struct AdjudicationBody {
    item_id: String,
    #[serde(default)]
    basis: Option<CompatibilityBasis>,
    #[serde(default)]
    alignment: Option<AlignmentCategory>,
    #[serde(default)]
    rationale: String,
}

async fn post_adjudication(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let req: AdjudicationBody = parse(&body)?;
    let h = app.handle(&id)?;
    let mut store = h.write().await;
    let item_id = delphi_core::ItemId::new(req.item_id);
    let actor = actor(&headers);
    let event = match (req.basis, req.alignment) {
        (Some(basis), None) => store.decide(&actor, item_id.clone(), basis, &req.rationale)?.clone(),
        (None, Some(category)) => store
            .execute(
                &actor,
                Command::OverrideAlignment {
                    item_id: item_id.clone(),
                    category,
                    rationale: req.rationale,
                },
            )?
            .clone(),
        _ => return Err(ApiError::bad_request("exactly one of basis or alignment is required".into())),
    };
    persist(&store)?;
    let study = store.study();
    Ok(envelope(json!({
        "event": event,
        "annotation": study.annotations.get(&item_id),
        "classification": study.classifications.get(&item_id),
        "alignment": study.alignments.get(&item_id),
    })))
}

#[derive(Deserialize)]
struct ClarificationBody {
    item_id: String,
    panelist_id: String,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    exchange: Option<usize>,
    #[serde(default)]
    answer: Option<String>,
}

async fn post_clarification(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let req: ClarificationBody = parse(&body)?;
    let key = ResponseKey::new(req.item_id, req.panelist_id);
    let actor = actor(&headers);
    let h = app.handle(&id)?;
    let mut store = h.write().await;
    match (req.question, req.exchange, req.answer) {
        (Some(q), None, None) => {
            store.request_clarification(&actor, key.clone(), &q)?;
        }
        (None, Some(n), Some(a)) => store.record_answer(&actor, key.clone(), n, &a)?,
        _ => {
            return Err(ApiError::bad_request(
                "send either a question, or an exchange index with its answer".into(),
            ))
        }
    }
    persist(&store)?;
    let thread = &store.study().response(&key).expect("exchange recorded").clarification_thread;
    Ok(envelope(json!({ "response_id": key.to_response_id(), "thread": thread })))
}

async fn get_report(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let h = app.handle(&id)?;
    let store = h.read().await;
    let doc = consensus_report(store.study())?;
    Ok(Json(serde_json::to_value(doc).map_err(Error::from)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use delphi_core::WorkflowState;

    #[test]
    fn core_errors_map_to_statuses() {
        let e: ApiError = Error::InvalidTransition {
            state: WorkflowState::Draft,
            action: "x".into(),
        }
        .into();
        assert_eq!((e.status, e.code.as_str()), (StatusCode::CONFLICT, "invalid_transition"));
        let e: ApiError = Error::UnknownItem("q9".into()).into();
        assert_eq!(e.status, StatusCode::NOT_FOUND);
        let e: ApiError = Error::EmptyQuestion.into();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
    }

    #[test]
    fn bodies_need_the_schema_version() {
        #[derive(Debug, Deserialize)]
        struct B {
            #[allow(dead_code)]
            event: WorkflowEvent,
        }
        assert!(parse::<B>(br#"{"schema_version":"1","event":"finalize_items"}"#).is_ok());
        assert_eq!(parse::<B>(br#"{"event":"finalize_items"}"#).unwrap_err().code, "malformed_document");
        assert_eq!(
            parse::<B>(br#"{"schema_version":"2","event":"finalize_items"}"#).unwrap_err().status,
            StatusCode::BAD_REQUEST
        );
    }

    #[test]
    fn study_ids_cannot_escape_the_root() {
        let app = AppState::new("/nonexistent");
        assert_eq!(app.handle("../etc").unwrap_err().code, "unknown_study");
        assert_eq!(app.handle("").unwrap_err().code, "unknown_study");
    }
}
