//! HTTP annotation API over presegmented sequences.
//!
//! Mutations on a sequence go through one writer at a time and are appended
//! to its journal before they become visible; readers take the current
//! snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use preseg::annotation::{append_journal, AnnotationState, FramePayload, Mutation, Outcome};
use preseg::data::{LabelMap, Sequence};
use preseg::pipeline::{PipelineConfig, Stage, TrackManifest};
use preseg::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::commands::{open_annotation, run_presegment, write_label_dir, ANNOTATED_DIR, JOURNAL_FILE};

pub const REVISION_HEADER: &str = "x-preseg-revision";

pub struct SequenceSlot {
    pub name: String,
    cfg: PipelineConfig,
    seq: Arc<Sequence<f64>>,
    state: RwLock<Arc<AnnotationState<f64>>>,
    presegmented: RwLock<bool>,
    writer: Arc<AsyncMutex<()>>,
}

impl SequenceSlot {
    /// Loads the sequence and, when the output directory holds a
    /// presegmentation, its annotation state.
    pub fn open(name: &str, cfg: PipelineConfig) -> preseg::Result<Self> {
        let (_, seq) = crate::commands::load_sequence(&cfg)?;
        let (state, done) = match open_annotation(&cfg, &seq) {
            Ok(s) => (s, true),
            Err(Error::Io { .. }) => (AnnotationState::new(&seq, &LabelMap::unlabeled(&seq.frames), &BTreeSet::new())?, false),
            Err(e) => return Err(e),
        };
        Ok(Self {
            name: name.to_string(),
            cfg,
            seq: Arc::new(seq),
            state: RwLock::new(Arc::new(state)),
            presegmented: RwLock::new(done),
            writer: Arc::new(AsyncMutex::new(())),
        })
    }

    pub fn snapshot(&self) -> Arc<AnnotationState<f64>> {
        self.state.read().expect("state lock").clone()
    }

    fn publish(&self, s: AnnotationState<f64>) {
        *self.state.write().expect("state lock") = Arc::new(s);
    }

    fn require_presegmented(&self) -> preseg::Result<()> {
        if *self.presegmented.read().expect("flag lock") {
            Ok(())
        } else {
            Err(Error::NotFound(format!("sequence {} has no presegmentation yet", self.name)))
        }
    }

    fn output(&self) -> preseg::Result<PathBuf> {
        self.cfg
            .output
            .clone()
            .ok_or_else(|| Error::Config(format!("sequence {} has no output directory", self.name)))
    }
}

const RUNNING: u8 = 0;
const DONE: u8 = 1;
const FAILED: u8 = 2;

pub struct Job {
    sequence: String,
    stage: AtomicU8,
    fraction: AtomicU64,
    state: AtomicU8,
    error: Mutex<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub job_id: u64,
    pub sequence: String,
    /// `running`, `done` or `failed`.
    pub state: String,
    pub stage: String,
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
pub struct AppState {
    sequences: BTreeMap<String, Arc<SequenceSlot>>,
    jobs: Mutex<BTreeMap<u64, Arc<Job>>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(slots: Vec<SequenceSlot>) -> Self {
        Self {
            sequences: slots.into_iter().map(|s| (s.name.clone(), Arc::new(s))).collect(),
            ..Default::default()
        }
    }

    fn slot(&self, name: &str) -> Result<Arc<SequenceSlot>, ApiError> {
        self.sequences
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError(Error::NotFound(format!("sequence {name}"))))
    }
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_revision: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = &self.0;
        let (status, kind) = match e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
            Error::Parameter(_) | Error::Range(_) | Error::Config(_) | Error::Parse { .. } => (StatusCode::BAD_REQUEST, "invalid"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let (current_revision, retry) = match e {
            Error::Conflict { actual, .. } => (
                Some(*actual),
                Some(format!("reload the sequence state and resend with expected_revision = {actual}")),
            ),
            _ => (None, None),
        };
        let body = ErrorBody {
            kind: kind.into(),
            error: e.to_string(),
            current_revision,
            retry,
        };
        (status, Json(body)).into_response()
    }
}

type Api<T> = Result<T, ApiError>;
type Shared = Arc<AppState>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frames: usize,
    pub presegmented: bool,
    pub revision: u64,
}

async fn list(State(app): State<Shared>) -> Json<Vec<SequenceInfo>> {
    Json(
        app.sequences
            .values()
            .map(|s| SequenceInfo {
                name: s.name.clone(),
                frames: s.seq.frames.len(),
                presegmented: *s.presegmented.read().expect("flag lock"),
                revision: s.snapshot().revision(),
            })
            .collect(),
    )
}

fn revision_header(rev: u64) -> [(header::HeaderName, HeaderValue); 1] {
    [(header::HeaderName::from_static(REVISION_HEADER), HeaderValue::from(rev))]
}

async fn frame(State(app): State<Shared>, Path((name, t)): Path<(String, usize)>) -> Api<Response> {
    let slot = app.slot(&name)?;
    let state = slot.snapshot();
    let payload = FramePayload::new(&slot.seq, &state, t)?;
    Ok((
        revision_header(state.revision()),
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"))],
        payload.encode(),
    )
        .into_response())
}

async fn segments(State(app): State<Shared>, Path(name): Path<String>) -> Api<Response> {
    let state = app.slot(&name)?.snapshot();
    let manifest: TrackManifest = state.manifest();
    Ok((revision_header(state.revision()), Json(manifest)).into_response())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationResponse {
    pub revision: u64,
    pub outcome: Outcome,
}

async fn mutate(app: &AppState, name: &str, m: Mutation, expected: Option<u64>) -> Api<Json<MutationResponse>> {
    let slot = app.slot(name)?;
    let _w = slot.writer.lock().await;
    slot.require_presegmented()?;
    let out = slot.output()?;
    let mut next = (*slot.snapshot()).clone();
    let (revision, outcome) = next.apply(m, expected)?;
    let entry = next.journal().last().expect("just applied").clone();
    let path = out.join(JOURNAL_FILE);
    tokio::task::spawn_blocking(move || append_journal(&path, &entry))
        .await
        .map_err(|e| Error::Protocol(format!("journal writer failed: {e}")))??;
    slot.publish(next);
    Ok(Json(MutationResponse { revision, outcome }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignRequest {
    pub segment_id: u32,
    pub semantic_id: u16,
    pub expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRequest {
    pub ids: Vec<u32>,
    pub expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRequest {
    pub segment_id: u32,
    pub frame: usize,
    pub point_indices: Vec<u32>,
    pub expected_revision: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionOnly {
    pub expected_revision: Option<u64>,
}

async fn assign(State(app): State<Shared>, Path(name): Path<String>, Json(r): Json<AssignRequest>) -> Api<Json<MutationResponse>> {
    let m = Mutation::Assign {
        segment_id: r.segment_id,
        semantic_id: r.semantic_id,
    };
    mutate(&app, &name, m, r.expected_revision).await
}

async fn merge(State(app): State<Shared>, Path(name): Path<String>, Json(r): Json<MergeRequest>) -> Api<Json<MutationResponse>> {
    mutate(&app, &name, Mutation::Merge { ids: r.ids }, r.expected_revision).await
}

async fn split(State(app): State<Shared>, Path(name): Path<String>, Json(r): Json<SplitRequest>) -> Api<Json<MutationResponse>> {
    let m = Mutation::Split {
        segment_id: r.segment_id,
        frame: r.frame,
        point_indices: r.point_indices,
    };
    mutate(&app, &name, m, r.expected_revision).await
}

/// The body is optional here, so it is parsed by hand.
async fn auto_instance(State(app): State<Shared>, Path(name): Path<String>, body: Bytes) -> Api<Json<MutationResponse>> {
    let r: RevisionOnly = if body.iter().all(u8::is_ascii_whitespace) {
        RevisionOnly::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| Error::Parameter(format!("bad request body: {e}")))?
    };
    mutate(&app, &name, Mutation::AutoInstance, r.expected_revision).await
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaveResponse {
    pub revision: u64,
    pub frames: usize,
    pub directory: PathBuf,
}

async fn save(State(app): State<Shared>, Path(name): Path<String>) -> Api<Json<SaveResponse>> {
    let slot = app.slot(&name)?;
    let _w = slot.writer.lock().await;
    slot.require_presegmented()?;
    let state = slot.snapshot();
    let dir = slot.output()?.join(ANNOTATED_DIR);
    let labels = state.labels();
    let frames = labels.frames.len();
    let d = dir.clone();
    tokio::task::spawn_blocking(move || write_label_dir(&d, &labels))
        .await
        .map_err(|e| Error::Protocol(format!("label writer failed: {e}")))??;
    Ok(Json(SaveResponse {
        revision: state.revision(),
        frames,
        directory: dir,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStarted {
    pub job_id: u64,
}

async fn start_presegment(State(app): State<Shared>, Path(name): Path<String>) -> Api<(StatusCode, Json<JobStarted>)> {
    let slot = app.slot(&name)?;
    let id = app.next_job.fetch_add(1, Ordering::Relaxed) + 1;
    let job = Arc::new(Job {
        sequence: name,
        stage: AtomicU8::new(0),
        fraction: AtomicU64::new(0f64.to_bits()),
        state: AtomicU8::new(RUNNING),
        error: Mutex::new(None),
    });
    app.jobs.lock().expect("jobs lock").insert(id, job.clone());
    let guard = slot.writer.clone().lock_owned().await;
    tokio::task::spawn_blocking(move || {
        let _w = guard;
        let mut progress = |p: preseg::pipeline::Progress| {
            let stage = Stage::ALL.iter().position(|s| *s == p.stage).unwrap_or(0);
            job.stage.store(stage as u8, Ordering::Relaxed);
            job.fraction.store(p.fraction.to_bits(), Ordering::Relaxed);
        };
        let result = run_presegment(&slot.cfg, &mut progress).and_then(|_| open_annotation(&slot.cfg, &slot.seq));
        match result {
            Ok(state) => {
                slot.publish(state);
                *slot.presegmented.write().expect("flag lock") = true;
                job.fraction.store(1f64.to_bits(), Ordering::Relaxed);
                job.state.store(DONE, Ordering::Release);
            }
            Err(e) => {
                log::error!("presegmentation of {} failed: {e}", job.sequence);
                *job.error.lock().expect("error lock") = Some(e.to_string());
                job.state.store(FAILED, Ordering::Release);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobStarted { job_id: id })))
}

async fn progress(State(app): State<Shared>, Path(id): Path<u64>) -> Api<Json<JobProgress>> {
    let job = app
        .jobs
        .lock()
        .expect("jobs lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("job {id}")))?;
    let state = job.state.load(Ordering::Acquire);
    Ok(Json(JobProgress {
        job_id: id,
        sequence: job.sequence.clone(),
        state: match state {
            RUNNING => "running",
            DONE => "done",
            _ => "failed",
        }
        .into(),
        stage: Stage::ALL[job.stage.load(Ordering::Relaxed) as usize].name().into(),
        fraction: f64::from_bits(job.fraction.load(Ordering::Relaxed)),
        error: if state == FAILED { job.error.lock().expect("error lock").clone() } else { None },
    }))
}

pub fn annotation_router(app: Shared) -> Router {
    Router::new()
        .route("/sequences", get(list))
        .route("/sequences/{s}/frames/{t}", get(frame))
        .route("/sequences/{s}/segments", get(segments))
        .route("/sequences/{s}/assign", post(assign))
        .route("/sequences/{s}/merge", post(merge))
        .route("/sequences/{s}/split", post(split))
        .route("/sequences/{s}/auto_instance", post(auto_instance))
        .route("/sequences/{s}/save", post(save))
        .route("/sequences/{s}/presegment", post(start_presegment))
        .route("/jobs/{id}/progress", get(progress))
        .with_state(app)
}
