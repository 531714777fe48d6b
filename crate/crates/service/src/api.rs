//! HTTP API over live game sessions.
//!
//! Every mutation runs on a blocking thread under the session's lock: the
//! change is applied to a copy, its log records are appended and synced,
//! and only then is the copy installed and the response built. Payloads
//! name scents rather than exposing ids, and never name a round's target.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use sniff_core::catalogue::{Catalogue, EmbeddingStore, Family};
use sniff_core::game::{
    generate_schedule, read_log, replay_verified, GameError, LogRecord, LogWriter, OwedRating, Rating, RatingKind,
    RatingSubject, RevealKind, Round, RoundStatus, Session, SubjectRole, Task,
};
use sniff_core::providers::Encoder;
use sniff_core::vecmath::ScentId;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::config::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = serde_json::json!({ "error": ErrorBody { code: self.code.into(), message: self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", r.body_text())
    }
}

/// Maps engine errors onto HTTP statuses. Messages that would name a scent
/// by id are replaced.
impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        use GameError::*;
        let conflict = |code| ApiError::new(StatusCode::CONFLICT, code, e.to_string());
        match &e {
            RoundBudgetExhausted { .. } | SessionComplete => conflict("session_complete"),
            RoundInProgress => conflict("round_in_progress"),
            NoActiveRound => conflict("no_active_round"),
            NotAcceptingDescriptions { .. } => conflict("ratings_owed"),
            NothingOwed => conflict("nothing_owed"),
            DuplicateRating { .. } => conflict("duplicate_rating"),
            NothingToReveal(_) => conflict("nothing_to_reveal"),
            RatingOutOfOrder { expected, got, .. } => ApiError::new(
                StatusCode::CONFLICT,
                "rating_out_of_order",
                format!("expected a {expected:?} rating, got {got:?}"),
            ),
            EmptyDescription | RatingOutOfRange(_) | DescriptionCancelsReference => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", e.to_string())
            }
            Encode(_) => ApiError::new(StatusCode::BAD_GATEWAY, "encoder_failed", e.to_string()),
            MissingReference | UnexpectedReference | ReferenceIsTarget(_) => ApiError::internal("schedule produced an invalid round"),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Slot {
    session: Session,
    log: LogWriter,
}

pub struct AppState {
    pub catalogue: Arc<Catalogue>,
    pub store: Arc<EmbeddingStore>,
    pub encoder: Arc<dyn Encoder>,
    pub config: ServiceConfig,
    pub log_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    next_participant: AtomicUsize,
}

impl AppState {
    /// Opens the log directory and rebuilds every session logged there.
    /// Each session is re-verified against the store and encoder.
    pub fn open(
        catalogue: Arc<Catalogue>,
        store: Arc<EmbeddingStore>,
        encoder: Arc<dyn Encoder>,
        config: ServiceConfig,
        log_dir: impl Into<PathBuf>,
    ) -> anyhow::Result<Self> {
        use anyhow::Context;
        let log_dir = log_dir.into();
        fs::create_dir_all(&log_dir).with_context(|| format!("creating {}", log_dir.display()))?;
        anyhow::ensure!(config.participants > 0, "participants must be positive");
        let mut sessions = HashMap::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&log_dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
        files.sort();
        for path in files {
            let records = read_log(&path).with_context(|| format!("reading {}", path.display()))?;
            let Some(session) = replay_verified(&records, &store, encoder.as_ref())
                .with_context(|| format!("replaying {}", path.display()))?
            else {
                continue;
            };
            let log = LogWriter::open(&path)?;
            tracing::info!(session = %session.session_id, rounds = session.rounds.len(), "recovered session");
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(Slot { session, log })));
        }
        let recovered = sessions.len();
        Ok(AppState {
            catalogue,
            store,
            encoder,
            config,
            log_dir,
            sessions: RwLock::new(sessions),
            next_participant: AtomicUsize::new(recovered),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map").len()
    }

    /// A snapshot of a session, for tests and tooling.
    pub fn session(&self, id: &str) -> Option<Session> {
        let slot = self.sessions.read().expect("session map").get(id).cloned()?;
        let guard = slot.lock().expect("session lock");
        Some(guard.session.clone())
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Mutex<Slot>>> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        self.log_dir.join(format!("{session_id}.jsonl"))
    }
}

type Shared = Arc<AppState>;

/// Applies `f` to a copy of the session, appends the produced records, then
/// installs the copy. Nothing changes in memory if the append fails.
async fn mutate<T, F>(state: &Shared, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &AppState) -> ApiResult<(Vec<LogRecord>, T)> + Send + 'static,
{
    let slot = state.slot(id)?;
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = slot.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        let mut next = guard.session.clone();
        let (records, out) = f(&mut next, &state)?;
        guard.log.append(&records).map_err(|e| ApiError::internal(e.to_string()))?;
        guard.session = next;
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn read<T, F>(state: &Shared, id: &str, f: F) -> ApiResult<T>
where
    F: FnOnce(&Session, &AppState) -> ApiResult<T>,
{
    let slot = state.slot(id)?;
    let guard = slot.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
    f(&guard.session, state)
}

// ---- views ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueItem {
    pub name: String,
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub participant: usize,
    pub task1_rounds: u32,
    pub task2_rounds: u32,
    pub task1_guess_limit: u32,
    pub task2_guess_limit: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub schedule: ScheduleSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwedView {
    pub kind: RatingKind,
    pub role: SubjectRole,
    pub guess_index: Option<u32>,
    /// Name of the scent being rated, unless it is the hidden target.
    pub scent_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessView {
    pub index: u32,
    pub description: String,
    pub scent_name: String,
    pub correct: bool,
    pub validity: Option<u8>,
    pub similarity: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub index: usize,
    pub task: Task,
    pub status: RoundStatus,
    pub guess_limit: u32,
    pub guesses_used: u32,
    /// Comparison rounds: the scent the next description is compared against.
    pub reference_name: Option<String>,
    pub initial_reference_name: Option<String>,
    pub guesses: Vec<GuessView>,
    pub owed_ratings: Vec<OwedView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_label: String,
    pub complete: bool,
    pub task1_rounds_done: usize,
    pub task2_rounds_done: usize,
    pub schedule: ScheduleSummary,
    /// The newest round, live or finished.
    pub round: Option<RoundView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealView {
    pub reveal_token: String,
    pub kind: RevealKind,
    /// Set for reference and guess presentations only.
    pub scent_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessOutcome {
    pub guess: GuessSummary,
    pub round_status: RoundStatus,
    pub owed_ratings: Vec<OwedView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessSummary {
    pub index: u32,
    pub scent_name: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingOutcome {
    pub round_status: RoundStatus,
    pub owed_ratings: Vec<OwedView>,
}

fn schedule_summary(s: &Session) -> ScheduleSummary {
    ScheduleSummary {
        participant: s.schedule.participant,
        task1_rounds: s.config.task1_rounds,
        task2_rounds: s.config.task2_rounds,
        task1_guess_limit: s.config.task1_guess_limit,
        task2_guess_limit: s.config.task2_guess_limit,
    }
}

fn name(cat: &Catalogue, id: ScentId) -> String {
    cat.name(id).to_string()
}

fn owed_view(o: &OwedRating, cat: &Catalogue) -> OwedView {
    let scent_name = match (o.role, o.subject) {
        (SubjectRole::Target, _) => None,
        (_, RatingSubject::Scent(a) | RatingSubject::Pair(a, _)) => Some(name(cat, a)),
    };
    OwedView {
        kind: o.kind,
        role: o.role,
        guess_index: o.guess_index,
        scent_name,
    }
}

fn round_view(r: &Round, s: &Session, cat: &Catalogue) -> RoundView {
    RoundView {
        index: r.index,
        task: r.task,
        status: r.status,
        guess_limit: s.config.guess_limit(r.task),
        guesses_used: r.guesses.len() as u32,
        reference_name: r.current_reference_id.map(|id| name(cat, id)),
        initial_reference_name: r.initial_reference_id.map(|id| name(cat, id)),
        guesses: r
            .guesses
            .iter()
            .map(|g| GuessView {
                index: g.index,
                description: g.description_text.clone(),
                scent_name: name(cat, g.guessed_id),
                correct: g.correct,
                validity: g.validity.map(|x| x.value),
                similarity: g.similarity_to_target.map(|x| x.value),
            })
            .collect(),
        owed_ratings: r.owed.iter().map(|o| owed_view(o, cat)).collect(),
    }
}

fn session_view(s: &Session, cat: &Catalogue) -> SessionView {
    SessionView {
        session_id: s.session_id.clone(),
        participant_label: s.participant_label.clone(),
        complete: s.is_complete(),
        task1_rounds_done: s.rounds.iter().filter(|r| r.task == Task::Task1 && r.is_terminal()).count(),
        task2_rounds_done: s.rounds.iter().filter(|r| r.task == Task::Task2 && r.is_terminal()).count(),
        schedule: schedule_summary(s),
        round: s.rounds.last().map(|r| round_view(r, s, cat)),
    }
}

fn owed_now(s: &Session, cat: &Catalogue) -> Vec<OwedView> {
    s.current_round()
        .map(|r| r.owed.iter().map(|o| owed_view(o, cat)).collect())
        .unwrap_or_default()
}

// ---- requests ----

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSessionRequest {
    pub participant_label: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RevealRequest {
    pub kind: Option<RevealKind>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DescriptionRequest {
    pub text: String,
}

/// Identifies what is being rated by role rather than by scent id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct SubjectRef {
    pub role: SubjectRole,
    pub guess_index: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RatingRequest {
    pub kind: RatingKind,
    pub value: i64,
    pub subject: Option<SubjectRef>,
}

// ---- handlers ----

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let Json(req) = body?;
    let label = req.participant_label.trim().to_string();
    if label.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_input",
            "participant_label is empty",
        ));
    }
    let n = state.config.participants;
    let participant = state.next_participant.fetch_add(1, Ordering::SeqCst) % n;
    let seed = req.seed.unwrap_or(state.config.schedule_seed);
    let schedule = generate_schedule(n, &state.catalogue, seed)
        .map_err(ApiError::from)?
        .swap_remove(participant);
    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let out = Session::create(
        session_id.clone(),
        label,
        schedule,
        state.config.game.clone(),
        &state.store,
        Utc::now(),
    );
    let path = state.log_path(&session_id);
    let st = state.clone();
    let created = tokio::task::spawn_blocking(move || -> ApiResult<CreatedSession> {
        let mut log = LogWriter::open(&path).map_err(|e| ApiError::internal(e.to_string()))?;
        log.append(&out.events).map_err(|e| ApiError::internal(e.to_string()))?;
        let view = CreatedSession {
            session_id: out.value.session_id.clone(),
            schedule: schedule_summary(&out.value),
        };
        st.sessions
            .write()
            .expect("session map")
            .insert(view.session_id.clone(), Arc::new(Mutex::new(Slot { session: out.value, log })));
        Ok(view)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    tracing::info!(session = %created.session_id, participant, "session created");
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    read(&state, &id, |s, st| Ok(Json(session_view(s, &st.catalogue)))).await
}

async fn start_round(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<(StatusCode, Json<RoundView>)> {
    let view = mutate(&state, &id, |s, st| {
        let out = s.start_next_scheduled_round(Utc::now())?;
        let view = round_view(&s.rounds[out.value], s, &st.catalogue);
        Ok((out.events, view))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn reveal(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<RevealView>> {
    // An empty body is allowed whatever the content type says.
    let req: RevealRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RevealRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))?
    };
    let kind = req.kind.unwrap_or(RevealKind::Target);
    let view = mutate(&state, &id, move |s, st| {
        let out = s.reveal(kind, Utc::now())?;
        let round = s.rounds.last().expect("reveal needs a round");
        let token = format!("{}-{}-{}", s.session_id, round.index, round.reveals.len());
        let scent_name = match kind {
            RevealKind::Target => None,
            RevealKind::Reference | RevealKind::Guess => Some(name(&st.catalogue, out.value.scent_id)),
        };
        Ok((
            out.events,
            RevealView {
                reveal_token: token,
                kind,
                scent_name,
            },
        ))
    })
    .await?;
    Ok(Json(view))
}

async fn describe(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DescriptionRequest>, JsonRejection>,
) -> ApiResult<Json<GuessOutcome>> {
    let Json(req) = body?;
    let view = mutate(&state, &id, move |s, st| {
        let out = s.submit_description(&req.text, st.encoder.as_ref(), &st.store, Utc::now())?;
        let round = s.rounds.last().expect("a guess needs a round");
        let view = GuessOutcome {
            guess: GuessSummary {
                index: out.value.index,
                scent_name: name(&st.catalogue, out.value.guessed_id),
                correct: out.value.correct,
            },
            round_status: round.status,
            owed_ratings: owed_now(s, &st.catalogue),
        };
        Ok((out.events, view))
    })
    .await?;
    Ok(Json(view))
}

async fn rate(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> ApiResult<Json<RatingOutcome>> {
    let Json(req) = body?;
    let value = u8::try_from(req.value)
        .ok()
        .filter(|v| *v <= sniff_core::game::MAX_RATING)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_input",
                format!("rating {} outside 0..=10", req.value),
            )
        })?;
    let view = mutate(&state, &id, move |s, st| {
        if s.current_round().is_none() {
            return Err(GameError::NoActiveRound.into());
        }
        let head = s.next_owed().ok_or(GameError::NothingOwed)?;
        let matches = req.kind == head.kind
            && req
                .subject
                .is_none_or(|r| r.role == head.role && r.guess_index.is_none_or(|g| Some(g) == head.guess_index));
        if !matches {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "rating_out_of_order",
                format!(
                    "expected a {:?} rating of the {:?}{}",
                    head.kind,
                    head.role,
                    head.guess_index.map(|g| format!(" (guess {g})")).unwrap_or_default()
                ),
            ));
        }
        let rating = Rating::new(head.kind, value, head.subject)?;
        let out = s.record_rating(rating, Utc::now())?;
        let view = RatingOutcome {
            round_status: out.value,
            owed_ratings: owed_now(s, &st.catalogue),
        };
        Ok((out.events, view))
    })
    .await?;
    Ok(Json(view))
}

async fn results(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Session>> {
    read(&state, &id, |s, _| {
        if !s.is_complete() {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "session_incomplete",
                "results are available once every round is finished",
            ));
        }
        Ok(Json(s.clone()))
    })
    .await
}

async fn catalogue(State(state): State<Shared>) -> Json<Vec<CatalogueItem>> {
    Json(
        state
            .catalogue
            .entries()
            .iter()
            .map(|e| CatalogueItem {
                name: e.name.clone(),
                family: e.family,
            })
            .collect(),
    )
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Shared) -> Router {
    let origins = state.config.cors_origins.clone();
    Router::new()
        .route("/api/catalogue", get(catalogue))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/results", get(results))
        .route("/api/sessions/{id}/rounds", post(start_round))
        .route("/api/sessions/{id}/rounds/current/reveal", post(reveal))
        .route("/api/sessions/{id}/rounds/current/description", post(describe))
        .route("/api/sessions/{id}/rounds/current/ratings", post(rate))
        .layer(cors(&origins))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Shared, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = state.session_count(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
