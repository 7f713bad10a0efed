use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use dynedit_core::data::{Checkpoint, SceneMeta};
use dynedit_core::edit::{DistillConfig, ProxySpec, TeacherModel};
use dynedit_core::field::DynamicField;

use crate::error::ApiError;
use crate::job::Job;

/// Which model renders answer with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Original,
    Teacher,
    Student,
}

impl std::str::FromStr for Selector {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, ApiError> {
        match s {
            "original" => Ok(Selector::Original),
            "teacher" => Ok(Selector::Teacher),
            "student" => Ok(Selector::Student),
            _ => Err(ApiError::validation(
                "model",
                format!("unknown model `{s}` (expected original, teacher or student)"),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    /// Directory receiving student checkpoints and job logs.
    pub out_dir: PathBuf,
    /// Distillation settings used when a commit does not supply its own.
    pub distill: DistillConfig,
    /// Steps between preview renders; 0 disables previews.
    pub preview_every: u64,
    pub preview_size: u32,
    /// Previews kept per job before the oldest are dropped.
    pub preview_capacity: usize,
    /// Directory against which relative seal image paths resolve.
    pub base_dir: Option<PathBuf>,
}

impl ServeConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            distill: DistillConfig::default(),
            preview_every: 100,
            preview_size: 128,
            preview_capacity: 16,
            base_dir: None,
        }
    }
}

pub type Teacher = TeacherModel<DynamicField<f32>>;

pub struct ProxyEntry {
    pub spec: ProxySpec,
    pub teacher: Arc<Teacher>,
}

/// Everything a session owns. Mutated only under the write lock.
#[derive(Default)]
pub struct Session {
    pub checkpoint: Option<Arc<Checkpoint>>,
    pub checkpoint_id: Option<String>,
    pub selector: Selector,
    pub proxies: BTreeMap<u64, ProxyEntry>,
    pub current_proxy: Option<u64>,
    /// Latest student snapshot: the base at commit time, then the weights
    /// at each preview boundary, then the final result.
    pub student: Option<Arc<DynamicField<f32>>>,
    pub jobs: BTreeMap<u64, Arc<Job>>,
    pub active_job: Option<u64>,
    next_id: u64,
}

impl Session {
    pub fn next_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    pub fn checkpoint(&self) -> Result<&Arc<Checkpoint>, ApiError> {
        self.checkpoint.as_ref().ok_or_else(ApiError::no_model)
    }

    pub fn scene(&self) -> Result<&SceneMeta, ApiError> {
        self.checkpoint()?
            .scene
            .as_ref()
            .ok_or_else(|| ApiError::new(axum::http::StatusCode::CONFLICT, "no_scene", "checkpoint carries no scene metadata"))
    }

    pub fn current_teacher(&self) -> Option<&Arc<Teacher>> {
        self.current_proxy
            .and_then(|id| self.proxies.get(&id))
            .map(|p| &p.teacher)
    }

    pub fn proxy(&self, id: u64) -> Result<&ProxyEntry, ApiError> {
        self.proxies.get(&id).ok_or_else(|| ApiError::not_found("proxy"))
    }

    pub fn job(&self, id: u64) -> Result<&Arc<Job>, ApiError> {
        self.jobs.get(&id).ok_or_else(|| ApiError::not_found("job"))
    }

    pub fn running_job(&self) -> Option<&Arc<Job>> {
        self.active_job
            .and_then(|id| self.jobs.get(&id))
            .filter(|j| !j.status().is_terminal())
    }
}

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServeConfig>,
    pub session: Arc<RwLock<Session>>,
}

impl AppState {
    /// A session with nothing loaded.
    pub fn empty(config: ServeConfig) -> Self {
        Self {
            config: Arc::new(config),
            session: Arc::new(RwLock::new(Session::default())),
        }
    }

    pub fn with_checkpoint(config: ServeConfig, checkpoint: Checkpoint, id: impl Into<String>) -> Self {
        let state = Self::empty(config);
        {
            let mut s = state.write();
            s.checkpoint = Some(Arc::new(checkpoint));
            s.checkpoint_id = Some(id.into());
        }
        state
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, Session> {
        self.session.read().expect("session lock poisoned")
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, Session> {
        self.session.write().expect("session lock poisoned")
    }

    pub fn job(&self, id: u64) -> Result<Arc<Job>, ApiError> {
        self.read().job(id).cloned()
    }

    /// Looks up a proxy's teacher.
    pub fn teacher(&self, proxy_id: u64) -> Result<Arc<Teacher>, ApiError> {
        Ok(self.read().proxy(proxy_id)?.teacher.clone())
    }
}
