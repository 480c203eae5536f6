use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use mammocolor::mrmc::{write_ratings_csv, BinaryCall, Condition, StudyPlan};
use mammocolor::pipeline::Birads;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{Result, StudyError};
use crate::images::ImageStore;
use crate::state::{EventKind, ImageKind, SessionStatus, StudyState};
use crate::store::{StudyStore, LOG_FILE};

/// Bearer tokens. With no token file the service is open.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tokens {
    pub operator: String,
    #[serde(default)]
    pub readers: BTreeMap<String, String>,
}

impl Tokens {
    pub fn from_file(path: &Path) -> Result<Tokens> {
        let bytes = std::fs::read(path).map_err(StudyError::io(path))?;
        serde_json::from_slice(&bytes).map_err(|e| StudyError::Invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub image_root: Option<PathBuf>,
    /// Replaces the plan's washout for studies created by this process.
    pub washout_override_days: Option<u32>,
    pub tokens: Option<Tokens>,
}

struct StudyHandle {
    writer: Mutex<StudyStore>,
    snapshot: RwLock<Arc<StudyState>>,
}

impl StudyHandle {
    fn new(store: StudyStore) -> Self {
        let snapshot = RwLock::new(Arc::new(store.state().clone()));
        StudyHandle { writer: Mutex::new(store), snapshot }
    }

    fn snapshot(&self) -> Arc<StudyState> {
        self.snapshot.read().unwrap().clone()
    }
}

pub struct AppState {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    images: ImageStore,
    studies: RwLock<BTreeMap<String, Arc<StudyHandle>>>,
}

impl AppState {
    /// Loads (and recovers) every study found under the data directory.
    pub fn load(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Arc<AppState>> {
        std::fs::create_dir_all(&config.data_dir).map_err(StudyError::io(&config.data_dir))?;
        let mut studies = BTreeMap::new();
        let entries = std::fs::read_dir(&config.data_dir).map_err(StudyError::io(&config.data_dir))?;
        for entry in entries {
            let dir = entry.map_err(StudyError::io(&config.data_dir))?.path();
            if !dir.join(LOG_FILE).exists() {
                continue;
            }
            let (store, report) = StudyStore::open(&dir)?;
            tracing::info!(study = %store.state().study_id, ?report, "recovered study");
            studies.insert(store.state().study_id.clone(), Arc::new(StudyHandle::new(store)));
        }
        Ok(Arc::new(AppState {
            images: ImageStore::new(config.image_root.clone()),
            config,
            clock,
            studies: RwLock::new(studies),
        }))
    }

    fn study(&self, id: &str) -> Result<Arc<StudyHandle>> {
        self.studies.read().unwrap().get(id).cloned().ok_or_else(|| StudyError::NotFound(format!("study {id}")))
    }

    fn authorize(&self, headers: &HeaderMap, reader: Option<&str>) -> Result<()> {
        let Some(tokens) = &self.config.tokens else {
            return Ok(());
        };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(StudyError::Unauthorized)?;
        let ok = given == tokens.operator || reader.and_then(|r| tokens.readers.get(r)).is_some_and(|t| t == given);
        if ok {
            Ok(())
        } else {
            Err(StudyError::Unauthorized)
        }
    }

    /// Runs one write under the study's writer lock and publishes the new
    /// snapshot before returning.
    fn write<R>(&self, id: &str, f: impl FnOnce(&mut StudyStore, DateTime<Utc>) -> Result<R>) -> Result<R> {
        let handle = self.study(id)?;
        let mut store = handle.writer.lock().unwrap();
        let out = f(&mut store, self.clock.now());
        *handle.snapshot.write().unwrap() = Arc::new(store.state().clone());
        out
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    unlock_at: Option<DateTime<Utc>>,
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::Conflict(_) => StatusCode::CONFLICT,
            StudyError::Locked { .. } => StatusCode::LOCKED,
            StudyError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Forbidden(_) => StatusCode::FORBIDDEN,
            StudyError::Unauthorized => StatusCode::UNAUTHORIZED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "request failed");
        }
        let unlock_at = match &self {
            StudyError::Locked { unlock_at, .. } => *unlock_at,
            _ => None,
        };
        (status, Json(ErrorBody { error: self.to_string(), unlock_at })).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateStudy {
    #[serde(default)]
    pub study_id: Option<String>,
    pub plan: StudyPlan,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub study_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub kind: ImageKind,
    pub view: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDescriptor {
    pub case_id: String,
    /// 1-based position in this session.
    pub position: usize,
    pub total: usize,
    pub images: Vec<ImageRef>,
}

/// What a reader sees of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub study_id: String,
    pub reader_id: String,
    pub session: u32,
    pub condition: Condition,
    pub status: SessionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<CaseDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_session: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_unlock_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Deserialize)]
pub struct RatingBody {
    pub binary_call: BinaryCall,
    pub birads: Birads,
}

#[derive(Debug, Deserialize)]
pub struct SwitchBody {
    pub display: ImageKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: u32,
    pub condition: Condition,
    pub status: SessionStatus,
    pub rated: usize,
    pub total: usize,
    pub opened_at: Option<DateTime<Utc>>,
    pub completed_at: Option<DateTime<Utc>>,
    pub unlock_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderSummary {
    pub reader_id: String,
    pub sessions: Vec<SessionSummary>,
}

/// Operator view of a study: plan and progress, no ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub washout_days: u32,
    pub created_at: DateTime<Utc>,
    pub plan: StudyPlan,
    pub readers: Vec<ReaderSummary>,
    pub ratings: usize,
}

fn session_view(app: &AppState, state: &StudyState, reader_id: &str, session: u32) -> Result<SessionView> {
    let s = state.session(reader_id, session)?;
    let order = state.case_order(reader_id, session)?;
    let case = match (s.status, order.get(s.cursor)) {
        (SessionStatus::Open | SessionStatus::Paused, Some(case_id)) => {
            let mut images = Vec::new();
            for &kind in ImageKind::allowed(s.condition) {
                for view in app.images.views(kind, case_id) {
                    let url = format!(
                        "/studies/{}/readers/{reader_id}/sessions/{session}/cases/{case_id}/images/{}/{view}",
                        state.study_id,
                        kind.as_str()
                    );
                    images.push(ImageRef { kind, view, url });
                }
            }
            Some(CaseDescriptor { case_id: case_id.clone(), position: s.cursor + 1, total: order.len(), images })
        }
        _ => None,
    };
    let (next_session, next_unlock_at) = if s.status == SessionStatus::Complete {
        let next = session + 1;
        match state.unlock_time(reader_id, next) {
            Ok(at) => (Some(next), at),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(SessionView {
        study_id: state.study_id.clone(),
        reader_id: reader_id.to_string(),
        session,
        condition: s.condition,
        status: s.status,
        case,
        next_session,
        next_unlock_at,
    })
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-'))
}

async fn create_study(State(app): State<Arc<AppState>>, headers: HeaderMap, Json(body): Json<CreateStudy>) -> Result<(StatusCode, Json<Created>)> {
    app.authorize(&headers, None)?;
    let id = match body.study_id {
        Some(id) => id,
        None => {
            let digest = Sha256::digest(serde_json::to_vec(&body.plan).expect("plan serializes"));
            format!("study-{}", &hex::encode(digest)[..12])
        }
    };
    if !valid_id(&id) {
        return Err(StudyError::Invalid(format!("study id '{id}' must be 1-128 of [A-Za-z0-9_-]")));
    }
    let washout = app.config.washout_override_days.unwrap_or(body.plan.washout_days);
    let mut studies = app.studies.write().unwrap();
    if studies.contains_key(&id) {
        return Err(StudyError::Conflict(format!("study {id} already exists")));
    }
    let store = StudyStore::create(&app.config.data_dir.join(&id), &id, body.plan, washout, app.clock.now())?;
    studies.insert(id.clone(), Arc::new(StudyHandle::new(store)));
    Ok((StatusCode::CREATED, Json(Created { study_id: id })))
}

async fn get_study(State(app): State<Arc<AppState>>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> Result<Json<StudySummary>> {
    app.authorize(&headers, None)?;
    let state = app.study(&id)?.snapshot();
    let readers = state
        .plan
        .readers
        .iter()
        .map(|r| ReaderSummary {
            reader_id: r.reader_id.clone(),
            sessions: state.sessions[&r.reader_id]
                .iter()
                .map(|s| SessionSummary {
                    session: s.session,
                    condition: s.condition,
                    status: s.status,
                    rated: s.cursor,
                    total: state.plan.cases.len(),
                    opened_at: s.opened_at,
                    completed_at: s.completed_at,
                    unlock_at: state.unlock_time(&r.reader_id, s.session).ok().flatten(),
                })
                .collect(),
        })
        .collect();
    Ok(Json(StudySummary {
        study_id: state.study_id.clone(),
        washout_days: state.washout_days,
        created_at: state.created_at,
        plan: state.plan.clone(),
        readers,
        ratings: state.ratings.len(),
    }))
}

type SessionPath = UrlPath<(String, String, u32)>;
type CasePath = UrlPath<(String, String, u32, String)>;

async fn open_session(State(app): State<Arc<AppState>>, headers: HeaderMap, UrlPath((id, rid, k)): SessionPath) -> Result<Json<SessionView>> {
    app.authorize(&headers, Some(&rid))?;
    app.write(&id, |store, now| {
        if store.state().session(&rid, k)?.status != SessionStatus::Open {
            store.append(now, EventKind::SessionOpened { reader_id: rid.clone(), session: k })?;
        }
        session_view(&app, store.state(), &rid, k)
    })
    .map(Json)
}

async fn pause_session(State(app): State<Arc<AppState>>, headers: HeaderMap, UrlPath((id, rid, k)): SessionPath) -> Result<Json<SessionView>> {
    app.authorize(&headers, Some(&rid))?;
    app.write(&id, |store, now| {
        store.append(now, EventKind::Paused { reader_id: rid.clone(), session: k, recovered: false })?;
        session_view(&app, store.state(), &rid, k)
    })
    .map(Json)
}

async fn resume_session(State(app): State<Arc<AppState>>, headers: HeaderMap, UrlPath((id, rid, k)): SessionPath) -> Result<Json<SessionView>> {
    app.authorize(&headers, Some(&rid))?;
    app.write(&id, |store, now| {
        store.append(now, EventKind::Resumed { reader_id: rid.clone(), session: k })?;
        session_view(&app, store.state(), &rid, k)
    })
    .map(Json)
}

async fn rate_case(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlPath((id, rid, k, cid)): CasePath,
    Json(body): Json<RatingBody>,
) -> Result<Json<SessionView>> {
    app.authorize(&headers, Some(&rid))?;
    app.write(&id, |store, now| {
        let kind = EventKind::Rated { reader_id: rid.clone(), session: k, case_id: cid.clone(), binary_call: body.binary_call, birads: body.birads };
        store.append(now, kind)?;
        session_view(&app, store.state(), &rid, k)
    })
    .map(Json)
}

async fn switch_display(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlPath((id, rid, k, cid)): CasePath,
    Json(body): Json<SwitchBody>,
) -> Result<StatusCode> {
    app.authorize(&headers, Some(&rid))?;
    app.write(&id, |store, now| {
        store.append(now, EventKind::Switched { reader_id: rid.clone(), session: k, case_id: cid.clone(), display: body.display })?;
        Ok(())
    })?;
    Ok(StatusCode::NO_CONTENT)
}

async fn case_image(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    UrlPath((id, rid, k, cid, kind, view)): UrlPath<(String, String, u32, String, ImageKind, String)>,
) -> Result<Response> {
    app.authorize(&headers, Some(&rid))?;
    let state = app.study(&id)?.snapshot();
    let s = state.session(&rid, k)?;
    if !ImageKind::allowed(s.condition).contains(&kind) {
        return Err(StudyError::Forbidden(format!("{} images are not shown under {}", kind.as_str(), s.condition)));
    }
    if s.status != SessionStatus::Open || state.cursor_case(&rid, k)? != Some(cid.as_str()) {
        return Err(StudyError::Conflict(format!("case {cid} is not on screen")));
    }
    let bytes = app.images.read(kind, &cid, &view)?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], bytes).into_response())
}

async fn export(State(app): State<Arc<AppState>>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> Result<Response> {
    app.authorize(&headers, None)?;
    let state = app.study(&id)?.snapshot();
    let mut buf = Vec::new();
    write_ratings_csv(&state.reader_ratings(), &mut buf).map_err(|e| StudyError::Invalid(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

pub fn router(app: Arc<AppState>) -> Router {
    let session = "/studies/{id}/readers/{rid}/sessions/{k}";
    Router::new()
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/export", get(export))
        .route(&format!("{session}/open"), post(open_session))
        .route(&format!("{session}/pause"), post(pause_session))
        .route(&format!("{session}/resume"), post(resume_session))
        .route(&format!("{session}/cases/{{cid}}/rating"), post(rate_case))
        .route(&format!("{session}/cases/{{cid}}/switch"), post(switch_display))
        .route(&format!("{session}/cases/{{cid}}/images/{{kind}}/{{view}}"), get(case_image))
        .with_state(app)
}

pub async fn serve(addr: SocketAddr, app: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "study service listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
