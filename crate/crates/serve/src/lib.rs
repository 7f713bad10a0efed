//! HTTP and WebSocket front end over one editing session: renders of the
//! original, teacher or student model, proxy submission, and distillation
//! jobs with streamed progress.

pub mod error;
pub mod job;
pub mod state;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dynedit_core::data::{encode_rgb_png, save_checkpoint, Checkpoint};
use dynedit_core::edit::{DistillConfig, ProxySpec, TeacherModel};
use dynedit_core::field::{DynamicField, RadianceField};
use dynedit_core::workflow::{render_view, render_view_png, resolve_proxy, run_edit, PoseRef, ViewRequest};

pub use error::{ApiError, ErrorBody};
pub use job::{EventLog, Job, JobEvent, JobInfo, JobStatus};
pub use state::{AppState, ProxyEntry, Selector, ServeConfig, Session, Teacher};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/render", get(render))
        .route("/api/proxy", post(submit_proxy))
        .route("/api/proxy/{id}/commit", post(commit))
        .route("/api/job/{id}", get(job_status))
        .route("/api/job/{id}/stream", get(job_stream))
        .route("/api/model/select", post(select_model))
        .route("/api/scene/meta", get(scene_meta))
        .route("/api/session", get(session_info))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::new(axum::http::StatusCode::BAD_REQUEST, "malformed_json", e.to_string())
    })
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &'static str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    q.get(key)
        .map(|v| v.parse::<T>().map_err(|e| ApiError::validation(key, format!("`{v}`: {e}"))))
        .transpose()
}

/// `pose` is either a preset index or a JSON camera-to-world matrix.
fn parse_pose(v: &str) -> Result<PoseRef, ApiError> {
    if let Ok(i) = v.parse::<usize>() {
        return Ok(PoseRef::Index(i));
    }
    serde_json::from_str::<[[f64; 4]; 4]>(v)
        .map(PoseRef::Matrix)
        .map_err(|_| ApiError::validation("pose", "expected a preset index or a 4x4 matrix"))
}

enum Model {
    Original(Arc<Checkpoint>),
    Teacher(Arc<Teacher>),
    Student(Arc<DynamicField<f32>>),
}

impl Model {
    fn field(&self) -> &dyn RadianceField<f32> {
        match self {
            Model::Original(c) => &c.field,
            Model::Teacher(t) => t.as_ref(),
            Model::Student(f) => f.as_ref(),
        }
    }
}

fn select(session: &Session, selector: Selector) -> Result<Model, ApiError> {
    let ckpt = session.checkpoint()?.clone();
    match selector {
        Selector::Original => Ok(Model::Original(ckpt)),
        Selector::Teacher | Selector::Student if session.current_teacher().is_none() => Err(
            ApiError::validation("model", "teacher and student need an edit proxy"),
        ),
        Selector::Teacher => Ok(Model::Teacher(session.current_teacher().expect("checked").clone())),
        Selector::Student => Ok(match &session.student {
            Some(s) => Model::Student(s.clone()),
            None => Model::Original(ckpt),
        }),
    }
}

async fn render(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let (model, meta, req) = {
        let s = st.read();
        let meta = s.scene()?.clone();
        let selector = match q.get("model") {
            Some(m) => m.parse()?,
            None => s.selector,
        };
        let time = parse_param::<f64>(&q, "t")?.ok_or_else(|| ApiError::validation("t", "required"))?;
        let pose = q.get("pose").map(|p| parse_pose(p)).transpose()?.unwrap_or(PoseRef::Index(0));
        let req = ViewRequest {
            pose,
            time,
            width: parse_param(&q, "w")?.unwrap_or(meta.width),
            height: parse_param(&q, "h")?.unwrap_or(meta.height),
            n_samples: parse_param(&q, "samples")?,
        };
        req.validate()?;
        (select(&s, selector)?, meta, req)
    };
    let png = tokio::task::spawn_blocking(move || render_view_png(model.field(), &meta, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProxyCreated {
    pub proxy_id: u64,
    pub kind: String,
    pub t_edit: f64,
}

async fn submit_proxy(State(st): State<AppState>, body: Bytes) -> Result<Json<ProxyCreated>, ApiError> {
    let spec: ProxySpec = parse_json(&body)?;
    spec.validate()?;
    let ckpt = st.read().checkpoint()?.clone();
    let base_dir = st.config.base_dir.clone();
    let resolved = {
        let spec = spec.clone();
        tokio::task::spawn_blocking(move || resolve_proxy(&ckpt, &spec, base_dir.as_deref()).map(|p| (ckpt, p)))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    let (ckpt, proxy) = resolved;
    let mut s = st.write();
    let id = s.next_id();
    s.proxies.insert(
        id,
        ProxyEntry {
            spec: spec.clone(),
            teacher: Arc::new(TeacherModel::new(ckpt.field.clone(), proxy)),
        },
    );
    s.current_proxy = Some(id);
    s.student = None;
    Ok(Json(ProxyCreated {
        proxy_id: id,
        kind: spec.kind,
        t_edit: spec.t_edit,
    }))
}

/// Optional commit body. Missing fields fall back to the service defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitRequest {
    pub config: Option<DistillConfig>,
    pub preview_pose: Option<PoseRef>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: u64,
}

async fn commit(State(st): State<AppState>, Path(proxy_id): Path<u64>, body: Bytes) -> Result<Json<JobCreated>, ApiError> {
    let req: CommitRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CommitRequest::default()
    } else {
        parse_json(&body)?
    };
    let config = req.config.clone().unwrap_or_else(|| st.config.distill.clone());
    config.validate()?;
    let (job, ckpt, teacher, stem) = {
        let mut s = st.write();
        let teacher = s.proxy(proxy_id)?.teacher.clone();
        let ckpt = s.checkpoint()?.clone();
        s.scene()?;
        if s.running_job().is_some() {
            return Err(ApiError::job_in_progress());
        }
        let id = s.next_id();
        let job = Arc::new(Job::new(id, proxy_id, config.steps, st.config.preview_capacity));
        s.jobs.insert(id, job.clone());
        s.active_job = Some(id);
        s.current_proxy = Some(proxy_id);
        s.student = Some(Arc::new(ckpt.field.clone()));
        job.set_running();
        let stem = s.checkpoint_id.clone().unwrap_or_else(|| "session".into());
        (job, ckpt, teacher, stem)
    };
    let job_id = job.info().id;
    let worker = JobWorker {
        state: st.clone(),
        job,
        checkpoint: ckpt,
        teacher,
        config,
        preview_pose: req.preview_pose.unwrap_or(PoseRef::Index(0)),
        stem,
    };
    std::thread::Builder::new()
        .name(format!("distill-{job_id}"))
        .spawn(move || worker.run())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(JobCreated { job_id }))
}

struct JobWorker {
    state: AppState,
    job: Arc<Job>,
    checkpoint: Arc<Checkpoint>,
    teacher: Arc<Teacher>,
    config: DistillConfig,
    preview_pose: PoseRef,
    stem: String,
}

impl JobWorker {
    fn output_paths(&self) -> (PathBuf, PathBuf) {
        let dir = &self.state.config.out_dir;
        let id = self.job.info().id;
        let stem = std::path::Path::new(&self.stem)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "session".into());
        let mut n = 0;
        loop {
            let suffix = if n == 0 { String::new() } else { format!("-{n}") };
            let ckpt = dir.join(format!("{stem}-student-{id}{suffix}.sdnf"));
            if !ckpt.exists() {
                return (ckpt.clone(), ckpt.with_extension("log.jsonl"));
            }
            n += 1;
        }
    }

    fn preview(&self, step: u64, student: &DynamicField<f32>) {
        let snapshot = Arc::new(student.clone());
        {
            let mut s = self.state.write();
            if s.active_job == Some(self.job.info().id) {
                s.student = Some(snapshot.clone());
            }
        }
        let Some(meta) = self.checkpoint.scene.as_ref() else { return };
        let size = self.state.config.preview_size;
        let req = ViewRequest {
            pose: self.preview_pose.clone(),
            time: self.teacher.proxy().t_edit,
            width: size,
            height: size,
            n_samples: None,
        };
        if let Ok(img) = render_view(snapshot.as_ref(), meta, &req) {
            let png = base64::engine::general_purpose::STANDARD.encode(encode_rgb_png(&img));
            self.job.preview(step, size, size, png);
        }
    }

    fn run(self) {
        let every = self.state.config.preview_every;
        let result = run_edit(&self.checkpoint, self.teacher.proxy().clone(), &self.config, |rec, student| {
            self.job.record(rec);
            if every > 0 && (rec.step + 1) % every == 0 {
                self.preview(rec.step + 1, student);
            }
        });
        let outcome = result.map_err(|e| e.to_string()).and_then(|(ckpt, log)| {
            std::fs::create_dir_all(&self.state.config.out_dir).map_err(|e| e.to_string())?;
            let (ckpt_path, log_path) = self.output_paths();
            save_checkpoint(&ckpt, &ckpt_path).map_err(|e| e.to_string())?;
            std::fs::write(&log_path, log.to_jsonl()).map_err(|e| e.to_string())?;
            Ok((ckpt, ckpt_path, log_path))
        });
        match outcome {
            Ok((ckpt, ckpt_path, log_path)) => {
                {
                    let mut s = self.state.write();
                    if s.active_job == Some(self.job.info().id) {
                        s.student = Some(Arc::new(ckpt.field));
                    }
                }
                self.job.finish(ckpt_path, log_path);
            }
            Err(message) => self.job.fail(message),
        }
    }
}

async fn job_status(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Json<JobInfo>, ApiError> {
    Ok(Json(st.job(id)?.info()))
}

async fn job_stream(State(st): State<AppState>, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Response {
    let job = st.job(id);
    ws.on_upgrade(move |socket| stream_job(socket, job))
}

async fn send_event(socket: &mut WebSocket, event: &JobEvent) -> bool {
    let text = serde_json::to_string(event).expect("events serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn stream_job(mut socket: WebSocket, job: Result<Arc<Job>, ApiError>) {
    let job = match job {
        Ok(j) => j,
        Err(e) => {
            let event = JobEvent::Error {
                code: e.body.code,
                message: e.body.message,
            };
            send_event(&mut socket, &event).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    };
    let mut rx = job.subscribe();
    let mut next = 0;
    loop {
        for (seq, event) in job.events_since(next) {
            next = seq + 1;
            if !send_event(&mut socket, &event).await {
                return;
            }
            if let JobEvent::Status { status, .. } = event {
                if status.is_terminal() {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            }
        }
        if rx.changed().await.is_err() {
            return;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectRequest {
    pub selector: Selector,
}

async fn select_model(State(st): State<AppState>, body: Bytes) -> Result<Json<SelectRequest>, ApiError> {
    let v: serde_json::Value = parse_json(&body)?;
    let name = v
        .get("selector")
        .and_then(|s| s.as_str())
        .ok_or_else(|| ApiError::validation("selector", "required"))?;
    let selector: Selector = name.parse().map_err(|e: ApiError| ApiError::validation("selector", e.body.message))?;
    let mut s = st.write();
    s.checkpoint()?;
    select(&s, selector).map_err(|e| ApiError::validation("selector", e.body.message))?;
    s.selector = selector;
    Ok(Json(SelectRequest { selector }))
}

async fn scene_meta(State(st): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = st.read();
    let meta = s.scene()?;
    Ok(Json(json!({
        "checkpoint": s.checkpoint_id,
        "camera_angle_x": meta.camera_angle_x,
        "width": meta.width,
        "height": meta.height,
        "near": meta.near,
        "far": meta.far,
        "background": meta.background,
        "n_samples": meta.n_samples,
        "poses": meta.poses,
        "t_range": [0.0, 1.0],
    })))
}

async fn session_info(State(st): State<AppState>) -> Json<serde_json::Value> {
    let s = st.read();
    Json(json!({
        "checkpoint": s.checkpoint_id,
        "loaded": s.checkpoint.is_some(),
        "selector": s.selector,
        "current_proxy": s.current_proxy,
        "active_job": s.active_job,
        "job_status": s.active_job.and_then(|id| s.jobs.get(&id)).map(|j| j.status()),
    }))
}
