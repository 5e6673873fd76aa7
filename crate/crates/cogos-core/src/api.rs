//! Wire types shared by the HTTP service and its clients.

use serde::{Deserialize, Serialize};

use crate::config::TaskAssignment;
use crate::eval::EvalReport;
use crate::step::parse_step;
use crate::transcript::{RunOutcome, StepResult, StepStatus, Transcript, TranscriptEntry};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
    pub kind: ErrorKind,
}

/// Coarse failure class, used by clients to map onto the exit-code
/// contract (config errors exit 2, backend errors exit 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Backend,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    /// Path to a run config on the server's filesystem.
    pub config_path: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDto {
    pub index: usize,
    pub step: String,
    pub result: StepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptDto {
    pub robot_id: String,
    pub task: String,
    pub outcome: RunOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub entries: Vec<EntryDto>,
}

impl From<&Transcript> for TranscriptDto {
    fn from(t: &Transcript) -> TranscriptDto {
        TranscriptDto {
            robot_id: t.robot_id.clone(),
            task: t.task.clone(),
            outcome: t.outcome,
            error: t.error.clone(),
            entries: t
                .entries
                .iter()
                .map(|e| EntryDto {
                    index: e.index,
                    step: e.step_text.clone(),
                    result: e.result.clone(),
                })
                .collect(),
        }
    }
}

impl TranscriptDto {
    pub fn to_transcript(&self) -> Transcript {
        Transcript {
            task: self.task.clone(),
            robot_id: self.robot_id.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| TranscriptEntry {
                    index: e.index,
                    step_text: e.step.clone(),
                    kind: parse_step(&e.step).ok().map(|s| s.kind()),
                    result: e.result.clone(),
                })
                .collect(),
            outcome: self.outcome,
            error: self.error.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResponse {
    pub outcome: RunOutcome,
    pub exit_code: i32,
    /// Addressed robot first, then standing robots.
    pub transcripts: Vec<TranscriptDto>,
    pub transcript_paths: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub config_path: String,
    pub suite_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: EvalReport,
    /// Human-readable tables (categories, confusion matrix, ablation).
    pub rendered: String,
    pub report_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreateRequest {
    pub config_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreateResponse {
    pub session_id: String,
    pub robots: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSubmitRequest {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSubmitResponse {
    pub assignments: Vec<TaskAssignment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputSubmitRequest {
    pub text: String,
}

/// One session event; clients long-poll with `after` cursors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: SessionEventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEventBody {
    Step {
        robot_id: String,
        index: usize,
        step: String,
        status: StepStatus,
        payload: String,
        module: String,
    },
    /// A robot is LISTENing on an empty mailbox and waits for the operator.
    InputRequested { robot_id: String },
    TaskDone {
        robot_id: String,
        outcome: RunOutcome,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventsResponse {
    pub events: Vec<SessionEvent>,
    /// Cursor for the next poll.
    pub next_after: u64,
    /// True while any robot loop in the session is still running.
    pub busy: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCloseResponse {
    /// Transcript files written on the server, one per completed task.
    pub saved: Vec<String>,
}
