//! HTTP API under `/v1`.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/v1/models` | loaded providers |
//! | GET | `/v1/sessions` | stored session ids |
//! | POST | `/v1/sessions` | generate and store a session |
//! | GET | `/v1/sessions/{id}` | tokens and metadata |
//! | POST | `/v1/sessions/{id}/interventions` | regenerate under an intervention |
//! | GET | `/v1/sessions/{id}/interventions` | intervention history |
//!
//! Errors are `{"code": ..., "message": ...}` with status 404 (unknown
//! session), 422 (invalid request or intervention) or 503 (provider
//! unavailable).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cf_engine::engine::generate;
use cf_engine::{GenerationSession, SamplerConfig, TokenId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::models::LoadedModel;
use crate::ops::{intervene, token_text, DiffMethod, InterventionRecord, InterventionRequest, ModeName};
use crate::store::SessionStore;

pub const DEFAULT_MAX_STEPS: u32 = 200;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    /// The first model is the default for new sessions.
    pub models: Arc<Vec<LoadedModel>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/models", get(list_models))
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route(
            "/v1/sessions/{id}/interventions",
            get(list_interventions).post(create_intervention),
        )
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        use cf_engine::Error as E;
        match e.downcast_ref::<E>() {
            Some(E::Domain(_)) => Self::invalid(format!("{e:#}")),
            Some(E::Transport { .. } | E::Protocol(_)) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", format!("{e:#}"))
            }
            Some(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("{e:#}")),
            // our own checks on request values
            None => Self::invalid(format!("{e:#}")),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_json", e.to_string()))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

/// Runs provider work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelView {
    pub name: String,
    pub model_id: String,
    pub tokenizer: cf_engine::Tokenizer,
    pub vocab_size: usize,
    pub context_limit: Option<usize>,
}

async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelView>> {
    Json(
        state
            .models
            .iter()
            .map(|m| ModelView {
                name: m.name.clone(),
                model_id: m.model_id(),
                tokenizer: m.tokenizer,
                vocab_size: m.vocabulary().len(),
                context_limit: m.provider.context_limit(),
            })
            .collect(),
    )
}

async fn list_sessions(State(state): State<AppState>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.store.ids().map_err(internal)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenView {
    pub id: TokenId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub model: String,
    pub model_id: String,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub max_steps: u32,
    pub truncated: bool,
    pub prompt: Vec<TokenView>,
    pub output: Vec<TokenView>,
    pub text: String,
}

fn session_view(id: String, model: &LoadedModel, s: &GenerationSession) -> SessionView {
    let view = |ids: &[TokenId]| {
        ids.iter()
            .map(|&id| TokenView {
                id,
                text: token_text(model, id),
            })
            .collect()
    };
    SessionView {
        id,
        model: model.name.clone(),
        model_id: s.model_id.clone(),
        sampler: s.sampler,
        seed: s.seed(),
        max_steps: s.max_steps,
        truncated: s.truncated,
        prompt: view(s.prompt.as_slice()),
        output: view(s.output.as_slice()),
        text: model.render(&s.full_sequence()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model: Option<String>,
    prompt: Option<String>,
    prompt_tokens: Option<Vec<TokenId>>,
    #[serde(default = "default_sampler")]
    sampler: SamplerConfig,
    seed: u64,
    #[serde(default = "default_max_steps")]
    max_steps: u32,
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig::gumbel_max(1.0)
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = parse_body(&body)?;
    let model = match &req.model {
        None => state
            .models
            .first()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", "no model loaded"))?,
        Some(name) => state
            .models
            .iter()
            .find(|m| &m.name == name || &m.model_id() == name)
            .cloned()
            .ok_or_else(|| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_model", format!("no model named {name:?}"))
            })?,
    };
    let store = state.store.clone();
    let view = blocking(move || {
        let prompt = match (req.prompt, req.prompt_tokens) {
            (Some(text), None) => model.encode(&text)?,
            (None, Some(tokens)) => tokens,
            _ => return Err(ApiError::invalid("give exactly one of prompt and prompt_tokens")),
        };
        let session = generate(model.provider.as_ref(), &prompt, req.sampler, req.seed, req.max_steps)
            .map_err(anyhow::Error::from)?;
        let id = store.insert(&session).map_err(internal)?;
        Ok(session_view(id, &model, &session))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

fn find_model(state: &AppState, s: &GenerationSession) -> ApiResult<LoadedModel> {
    state.models.iter().find(|m| m.model_id() == s.model_id).cloned().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "provider_unavailable",
            format!("model {} is not loaded", s.model_id),
        )
    })
}

fn load_session(state: &AppState, id: &str) -> ApiResult<GenerationSession> {
    state
        .store
        .get(id)
        .map_err(internal)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = load_session(&state, &id)?;
    let model = find_model(&state, &s)?;
    Ok(Json(session_view(id, &model, &s)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateIntervention {
    position: u32,
    replacement: Option<Vec<TokenId>>,
    replacement_text: Option<String>,
    #[serde(default)]
    mode: ModeName,
    fresh_seed: Option<u64>,
    #[serde(default)]
    noise_indexing: cf_engine::NoiseIndexing,
    #[serde(default)]
    diff: DiffMethod,
}

async fn create_intervention(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<InterventionRecord>)> {
    let s = load_session(&state, &id)?;
    let req: CreateIntervention = parse_body(&body)?;
    let model = find_model(&state, &s)?;
    let store = state.store.clone();
    let record = blocking(move || {
        let replacement = match (req.replacement, req.replacement_text) {
            (Some(tokens), None) => tokens,
            (None, Some(text)) => model.encode(&text)?,
            _ => return Err(ApiError::invalid("give exactly one of replacement and replacement_text")),
        };
        let request = InterventionRequest {
            position: req.position,
            replacement,
            mode: req.mode,
            fresh_seed: req.fresh_seed,
            noise_indexing: req.noise_indexing,
            diff: req.diff,
        };
        let record = intervene(&model, &s, &request)?;
        store.append(&id, record).map_err(internal)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_interventions(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<InterventionRecord>>> {
    load_session(&state, &id)?;
    Ok(Json(state.store.log(&id).map_err(internal)?))
}
