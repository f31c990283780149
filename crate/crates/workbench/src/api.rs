use std::collections::{BTreeMap, BTreeSet};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use softrules::corpus::InstanceRecord;
use softrules::session::{evaluate_session, preview, DeleteOutcome, Edit, EditSession, PreviewError, SessionError};
use softrules::sieve::{Mode, SieveConfig, SupportRule};

use crate::state::{now, AppState};

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Parse { message: String, offset: usize },
    Duplicate(String),
    Conflict(String),
    Internal(String),
}

impl ApiError {
    fn session(id: &str) -> Self {
        ApiError::NotFound(format!("no session {id:?}"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Parse(p) => ApiError::Parse {
                message: p.message,
                offset: p.offset,
            },
            SessionError::UnknownRule(_) => ApiError::NotFound(e.to_string()),
            SessionError::Duplicate { existing } => ApiError::Duplicate(existing),
            SessionError::Deleted(_) => ApiError::Conflict(e.to_string()),
            SessionError::EmptyRelation | SessionError::Threshold(_) => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({"kind": "not_found", "message": m})),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({"kind": "bad_request", "message": m})),
            ApiError::Parse { message, offset } => (
                StatusCode::BAD_REQUEST,
                json!({"kind": "parse", "message": message, "offset": offset}),
            ),
            ApiError::Duplicate(existing) => (
                StatusCode::CONFLICT,
                json!({"kind": "duplicate", "message": format!("identical rule exists as {existing}"), "existing": existing}),
            ),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({"kind": "conflict", "message": m})),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"kind": "internal", "message": m})),
        };
        (status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub async fn relations(State(state): State<AppState>) -> Json<Value> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ep in state.inner.episodes.iter() {
        for r in ep.relations() {
            *counts.entry(r).or_default() += 1;
        }
    }
    let relations: Vec<Value> = counts
        .into_iter()
        .map(|(name, episodes)| json!({"name": name, "episodes": episodes}))
        .collect();
    Json(json!({
        "version": state.version(),
        "episodes": state.inner.episodes.len(),
        "model": state.embedder().is_some(),
        "relations": relations,
    }))
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    id: String,
    version: u64,
    edits: usize,
    overrides: BTreeMap<String, f64>,
    created: u64,
    updated: u64,
}

fn summary(s: &EditSession) -> SessionSummary {
    SessionSummary {
        id: s.id.clone(),
        version: s.version,
        edits: s.log.len(),
        overrides: s.overrides.clone(),
        created: s.created,
        updated: s.updated,
    }
}

pub async fn list_sessions(State(state): State<AppState>) -> Json<Value> {
    let handles: Vec<_> = state.inner.sessions.read().await.values().cloned().collect();
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(summary(&*h.lock().await));
    }
    Json(json!({"version": state.version(), "sessions": out}))
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    id: Option<String>,
}

pub async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = body.and_then(|Json(b)| b.id);
    if id.as_deref().is_some_and(|i| i.is_empty() || !i.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')) {
        return Err(ApiError::BadRequest("session ids use letters, digits, '-' and '_'".into()));
    }
    let s = state
        .create_session(id.clone())
        .await
        .ok_or_else(|| ApiError::Conflict(format!("session {:?} exists", id.unwrap_or_default())))?;
    state.save(&s).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!(summary(&s)))))
}

pub async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let s = h.lock().await;
    Ok(Json(json!({
        "id": s.id,
        "version": s.version,
        "overrides": s.overrides,
        "log": s.log,
        "created": s.created,
        "updated": s.updated,
    })))
}

#[derive(Debug, Serialize)]
struct RuleView {
    id: String,
    relation: String,
    rule: String,
    source_instance_id: String,
    enabled: bool,
    origin: &'static str,
    /// Episodes in which the rule is visible.
    episodes: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct RuleFilter {
    relation: Option<String>,
}

pub async fn list_rules(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(filter): Query<RuleFilter>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut s = h.lock().await;
    let version = s.version;
    let book = s.rules();
    let mut views: BTreeMap<String, RuleView> = BTreeMap::new();
    let mut view = |r: &SupportRule, origin: &'static str, ep: Option<&str>| {
        let v = views.entry(r.id.clone()).or_insert_with(|| RuleView {
            id: r.id.clone(),
            relation: r.relation.clone(),
            rule: r.rule.to_string(),
            source_instance_id: r.source_instance_id.clone(),
            enabled: r.enabled,
            origin,
            episodes: Vec::new(),
        });
        if let Some(e) = ep {
            v.episodes.push(e.to_string());
        }
    };
    for (ep, rules) in &book.episodes {
        for r in rules {
            view(r, "support", Some(ep));
        }
    }
    for r in &book.added {
        view(r, "added", None);
    }
    for ep in state.inner.episodes.iter() {
        let rels: BTreeSet<String> = ep.relations().into_iter().collect();
        for r in &book.added {
            if rels.contains(&r.relation) {
                views.get_mut(&r.id).expect("inserted above").episodes.push(ep.id.clone());
            }
        }
    }
    let rules: Vec<RuleView> = views
        .into_values()
        .filter(|v| filter.relation.as_ref().is_none_or(|r| &v.relation == r))
        .collect();
    Ok(Json(json!({"version": version, "rules": rules})))
}

#[derive(Debug, Deserialize)]
pub struct AddRule {
    relation: String,
    rule: String,
}

pub async fn add_rule(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<AddRule>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut s = h.lock().await;
    let rid = s.add_rule(&body.relation, &body.rule, now())?;
    state.bump();
    state.save(&s).map_err(|e| ApiError::Internal(e.to_string()))?;
    let rule = match s.log.last() {
        Some(Edit::Add { rule, .. }) => rule.to_string(),
        _ => body.rule,
    };
    Ok((StatusCode::CREATED, Json(json!({"version": s.version, "id": rid, "rule": rule}))))
}

pub async fn delete_rule(
    State(state): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut s = h.lock().await;
    let outcome = s.delete_rule(&rid, now())?;
    if outcome == DeleteOutcome::Deleted {
        state.bump();
        state.save(&s).map_err(|e| ApiError::Internal(e.to_string()))?;
    }
    Ok(Json(json!({"version": s.version, "id": rid, "outcome": outcome})))
}

#[derive(Debug, Deserialize)]
pub struct ModifyRule {
    rule: String,
}

pub async fn modify_rule(
    State(state): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
    Json(body): Json<ModifyRule>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut s = h.lock().await;
    s.modify_rule(&rid, &body.rule, now())?;
    state.bump();
    state.save(&s).map_err(|e| ApiError::Internal(e.to_string()))?;
    let rule = s.rules().find(&rid).map(|r| r.rule.to_string());
    Ok(Json(json!({"version": s.version, "id": rid, "rule": rule})))
}

#[derive(Debug, Deserialize)]
pub struct SetOverride {
    /// `null` clears the override.
    threshold: Option<f64>,
}

pub async fn set_override(
    State(state): State<AppState>,
    Path((id, relation)): Path<(String, String)>,
    Json(body): Json<SetOverride>,
) -> ApiResult<Json<Value>> {
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut s = h.lock().await;
    s.set_override(&relation, body.threshold, now())?;
    state.bump();
    state.save(&s).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({"version": s.version, "overrides": s.overrides})))
}

#[derive(Debug, Default, Deserialize)]
pub struct EvaluateRequest {
    mode: Option<Mode>,
    threshold: Option<f64>,
    /// Applied on top of the session's overrides for this request only.
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
    /// Include per-episode predictions in the response.
    #[serde(default)]
    predictions: bool,
}

pub async fn evaluate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<EvaluateRequest>>,
) -> ApiResult<Json<Value>> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let h = state.session(&id).await.ok_or_else(|| ApiError::session(&id))?;
    let mut snapshot = h.lock().await.clone();
    snapshot.overrides.extend(req.overrides);
    let cfg = SieveConfig {
        mode: req.mode.unwrap_or(state.inner.defaults.mode),
        threshold: req.threshold.unwrap_or(state.inner.defaults.threshold),
        overrides: snapshot.overrides.clone(),
        ..state.inner.defaults.clone()
    };
    cfg.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if cfg.mode != Mode::Hard && state.embedder().is_none() {
        return Err(ApiError::BadRequest("soft and hybrid modes need a model; the server has none".into()));
    }
    let st = state.clone();
    let report = tokio::task::spawn_blocking(move || {
        evaluate_session(&snapshot, &st.inner.episodes, st.embedder(), &cfg)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut out = json!({
        "version": report.version,
        "mode": report.report.mode,
        "threshold": report.report.threshold,
        "overrides": report.report.overrides,
        "episodes": report.report.episodes,
        "overall": report.overall,
        "baseline": report.baseline,
        "delta_f1": report.delta_f1,
        "per_relation": report.per_relation,
    });
    if req.predictions {
        out["predictions"] = json!(report.report.predictions);
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct PreviewRequest {
    rule: String,
    instance: InstanceRecord,
}

pub async fn preview_rule(State(state): State<AppState>, Json(body): Json<PreviewRequest>) -> ApiResult<Json<Value>> {
    let inst = body
        .instance
        .into_instance(1)
        .map_err(|e| ApiError::BadRequest(format!("instance: {e}")))?;
    let p = preview(&body.rule, &inst, state.embedder(), &state.inner.defaults.match_config).map_err(|e| match e {
        PreviewError::Parse(p) => ApiError::Parse {
            message: p.message,
            offset: p.offset,
        },
        PreviewError::Instance(m) => ApiError::BadRequest(m),
        PreviewError::Embed(e) => ApiError::Internal(e.to_string()),
    })?;
    Ok(Json(json!({
        "version": state.version(),
        "rule": p.rule,
        "sentence": p.sentence,
        "strict": p.strict,
        "similarity": p.similarity,
    })))
}
