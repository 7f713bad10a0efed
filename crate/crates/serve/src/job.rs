use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use dynedit_core::train::LogRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

/// One line of a job stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum JobEvent {
    Log(LogRecord),
    Preview {
        step: u64,
        width: u32,
        height: u32,
        png_base64: String,
    },
    Status {
        status: JobStatus,
        step: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
    },
    Error {
        code: String,
        message: String,
    },
}

/// Ordered job events. Log and status events are all kept; previews are
/// capped, dropping the oldest when the cap is reached.
#[derive(Debug)]
pub struct EventLog {
    next_seq: u64,
    events: VecDeque<(u64, JobEvent)>,
    previews: usize,
    preview_capacity: usize,
}

impl EventLog {
    pub fn new(preview_capacity: usize) -> Self {
        Self {
            next_seq: 0,
            events: VecDeque::new(),
            previews: 0,
            preview_capacity: preview_capacity.max(1),
        }
    }

    /// Appends an event and returns its sequence number.
    pub fn push(&mut self, event: JobEvent) -> u64 {
        if matches!(event, JobEvent::Preview { .. }) {
            if self.previews == self.preview_capacity {
                let i = self
                    .events
                    .iter()
                    .position(|(_, e)| matches!(e, JobEvent::Preview { .. }))
                    .expect("preview count matches contents");
                self.events.remove(i);
                self.previews -= 1;
            }
            self.previews += 1;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push_back((seq, event));
        seq
    }

    /// Events with sequence numbers at or after `seq`, in order.
    pub fn since(&self, seq: u64) -> Vec<(u64, JobEvent)> {
        self.events.iter().filter(|(s, _)| *s >= seq).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    pub id: u64,
    pub proxy_id: u64,
    pub status: JobStatus,
    pub step: u64,
    pub total_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A distillation job shared between its worker thread and readers.
#[derive(Debug)]
pub struct Job {
    info: Mutex<JobInfo>,
    events: Mutex<EventLog>,
    latest: watch::Sender<u64>,
}

impl Job {
    pub fn new(id: u64, proxy_id: u64, total_steps: u64, preview_capacity: usize) -> Self {
        Self {
            info: Mutex::new(JobInfo {
                id,
                proxy_id,
                status: JobStatus::Idle,
                step: 0,
                total_steps,
                last_loss: None,
                checkpoint: None,
                log: None,
                error: None,
            }),
            events: Mutex::new(EventLog::new(preview_capacity)),
            latest: watch::channel(0).0,
        }
    }

    pub fn info(&self) -> JobInfo {
        self.info.lock().expect("job info lock").clone()
    }

    pub fn status(&self) -> JobStatus {
        self.info.lock().expect("job info lock").status
    }

    fn publish(&self, event: JobEvent) {
        let seq = self.events.lock().expect("job events lock").push(event);
        self.latest.send_replace(seq + 1);
    }

    pub fn events_since(&self, seq: u64) -> Vec<(u64, JobEvent)> {
        self.events.lock().expect("job events lock").since(seq)
    }

    /// Receiver that changes whenever an event is published. Its value is
    /// one past the newest sequence number.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }

    pub fn set_running(&self) {
        let step = {
            let mut info = self.info.lock().expect("job info lock");
            info.status = JobStatus::Running;
            info.step
        };
        self.publish(JobEvent::Status {
            status: JobStatus::Running,
            step,
            message: None,
            checkpoint: None,
        });
    }

    pub fn record(&self, record: &LogRecord) {
        {
            let mut info = self.info.lock().expect("job info lock");
            info.step = record.step + 1;
            info.last_loss = Some(record.loss);
        }
        self.publish(JobEvent::Log(record.clone()));
    }

    pub fn preview(&self, step: u64, width: u32, height: u32, png_base64: String) {
        self.publish(JobEvent::Preview {
            step,
            width,
            height,
            png_base64,
        });
    }

    pub fn finish(&self, checkpoint: PathBuf, log: PathBuf) {
        let checkpoint = checkpoint.display().to_string();
        let step = {
            let mut info = self.info.lock().expect("job info lock");
            info.status = JobStatus::Done;
            info.checkpoint = Some(checkpoint.clone());
            info.log = Some(log.display().to_string());
            info.step
        };
        self.publish(JobEvent::Status {
            status: JobStatus::Done,
            step,
            message: None,
            checkpoint: Some(checkpoint),
        });
    }

    pub fn fail(&self, message: String) {
        let step = {
            let mut info = self.info.lock().expect("job info lock");
            info.status = JobStatus::Failed;
            info.error = Some(message.clone());
            info.step
        };
        self.publish(JobEvent::Status {
            status: JobStatus::Failed,
            step,
            message: Some(message),
            checkpoint: None,
        });
    }
}
