//! The internal-monologue record: ordered (step, result) pairs per task run.
//!
//! Transcript files are JSONL: a header line, one line per entry in the
//! order steps were taken, and a final outcome line. Files written during a
//! run are append-only, and a written file reloads into a structurally
//! equal `Transcript`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::step::{parse_step, StepKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Success,
    Failure,
    /// Only the ethics gate emits this.
    Refused,
}

/// What a module reported back for one dispatched step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub status: StepStatus,
    pub payload: String,
    /// Module identifier that produced this result.
    pub origin_module: String,
    /// Ground-truth facts the simulator flagged as worth memorizing.
    /// Consumed by the memory module's deterministic mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub facts: Vec<String>,
}

impl StepResult {
    pub fn success(origin: &str, payload: impl Into<String>) -> StepResult {
        StepResult {
            status: StepStatus::Success,
            payload: payload.into(),
            origin_module: origin.to_string(),
            facts: Vec::new(),
        }
    }

    pub fn failure(origin: &str, payload: impl Into<String>) -> StepResult {
        StepResult {
            status: StepStatus::Failure,
            payload: payload.into(),
            origin_module: origin.to_string(),
            facts: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == StepStatus::Success
    }
}

/// One step of the monologue. `step_text` is the canonical step line, or
/// the raw model line when it failed to parse (`kind` is `None` then).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub index: usize,
    pub step_text: String,
    pub kind: Option<StepKind>,
    pub result: StepResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Finished,
    StepLimit,
    BackendError,
    Refused,
}

impl RunOutcome {
    /// Process exit code contract: 0 finished / 3 backend / 4 refused /
    /// 5 step limit (2 is reserved for configuration errors).
    pub fn exit_code(self) -> i32 {
        match self {
            RunOutcome::Finished => 0,
            RunOutcome::BackendError => 3,
            RunOutcome::Refused => 4,
            RunOutcome::StepLimit => 5,
        }
    }
}

/// Record of one task run on one robot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub task: String,
    pub robot_id: String,
    pub entries: Vec<TranscriptEntry>,
    pub outcome: RunOutcome,
    /// Backend error detail when `outcome == BackendError`.
    pub error: Option<String>,
}

impl Transcript {
    /// Entries of the given kind, in order.
    pub fn entries_of_kind(&self, kind: StepKind) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(move |e| e.kind == Some(kind))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&Line::Header {
            task: self.task.clone(),
            robot: self.robot_id.clone(),
        }) .unwrap());
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&Line::from_entry(e)).unwrap());
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Line::Outcome {
            outcome: self.outcome,
            error: self.error.clone(),
        }) .unwrap());
        out.push('\n');
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TranscriptError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| TranscriptError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read_jsonl(path: &Path) -> Result<Transcript, TranscriptError> {
        let file = File::open(path).map_err(|e| TranscriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut header: Option<(String, String)> = None;
        let mut entries = Vec::new();
        let mut outcome: Option<(RunOutcome, Option<String>)> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| TranscriptError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| TranscriptError::Malformed {
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            match parsed {
                Line::Header { task, robot } => header = Some((task, robot)),
                Line::Entry {
                    index,
                    step,
                    result,
                    module,
                } => {
                    let kind = parse_step(&step).ok().map(|s| s.kind());
                    let mut result = result;
                    result.origin_module = module;
                    entries.push(TranscriptEntry {
                        index,
                        step_text: step,
                        kind,
                        result,
                    });
                }
                Line::Outcome { outcome: o, error } => outcome = Some((o, error)),
            }
        }
        let (task, robot_id) = header.ok_or(TranscriptError::MissingHeader)?;
        let (outcome, error) = outcome.ok_or(TranscriptError::MissingOutcome)?;
        Ok(Transcript {
            task,
            robot_id,
            entries,
            outcome,
            error,
        })
    }
}

/// Incremental writer used during a live run; the file stays valid JSONL
/// after every appended line.
pub struct TranscriptWriter {
    out: BufWriter<File>,
}

impl TranscriptWriter {
    pub fn create(path: &Path, task: &str, robot: &str) -> Result<TranscriptWriter, TranscriptError> {
        let file = File::create(path).map_err(|e| TranscriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = TranscriptWriter {
            out: BufWriter::new(file),
        };
        w.write_line(&Line::Header {
            task: task.to_string(),
            robot: robot.to_string(),
        })?;
        Ok(w)
    }

    pub fn append_entry(&mut self, entry: &TranscriptEntry) -> Result<(), TranscriptError> {
        self.write_line(&Line::from_entry(entry))
    }

    pub fn finish(mut self, outcome: RunOutcome, error: Option<String>) -> Result<(), TranscriptError> {
        self.write_line(&Line::Outcome { outcome, error })
    }

    fn write_line(&mut self, line: &Line) -> Result<(), TranscriptError> {
        serde_json::to_writer(&mut self.out, line).map_err(|e| TranscriptError::Malformed {
            line: 0,
            reason: e.to_string(),
        })?;
        self.out.write_all(b"\n").and_then(|_| self.out.flush()).map_err(|e| {
            TranscriptError::Io {
                path: "<transcript>".to_string(),
                source: e,
            }
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header {
        task: String,
        robot: String,
    },
    Entry {
        index: usize,
        step: String,
        result: StepResult,
        module: String,
    },
    Outcome {
        outcome: RunOutcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl Line {
    fn from_entry(e: &TranscriptEntry) -> Line {
        Line::Entry {
            index: e.index,
            step: e.step_text.clone(),
            result: e.result.clone(),
            module: e.result.origin_module.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed transcript line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("transcript file has no header line")]
    MissingHeader,
    #[error("transcript file has no outcome line")]
    MissingOutcome,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Transcript {
        Transcript {
            task: "say hello".to_string(),
            robot_id: "dog".to_string(),
            entries: vec![
                TranscriptEntry {
                    index: 0,
                    step_text: "SAY(\"hello\")".to_string(),
                    kind: Some(StepKind::Say),
                    result: StepResult::success("execution", "said: hello"),
                },
                TranscriptEntry {
                    index: 1,
                    step_text: "FLY(home)".to_string(),
                    kind: None,
                    result: StepResult::failure("parser", "unknown step kind `FLY`"),
                },
                TranscriptEntry {
                    index: 2,
                    step_text: "FINISH".to_string(),
                    kind: Some(StepKind::Finish),
                    result: StepResult::success("orchestrator", ""),
                },
            ],
            outcome: RunOutcome::Finished,
            error: None,
        }
    }

    #[test]
    fn jsonl_round_trip_is_lossless() {
        let t = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.write_jsonl(&path).unwrap();
        let back = Transcript::read_jsonl(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn incremental_writer_matches_batch_output() {
        let t = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut w = TranscriptWriter::create(&path, &t.task, &t.robot_id).unwrap();
        for e in &t.entries {
            w.append_entry(e).unwrap();
        }
        w.finish(t.outcome, None).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), t.to_jsonl());
    }

    #[test]
    fn facts_survive_persistence() {
        let mut t = sample();
        t.entries[0].result.facts = vec!["the user likes juice".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.write_jsonl(&path).unwrap();
        assert_eq!(Transcript::read_jsonl(&path).unwrap(), t);
    }

    #[test]
    fn exit_codes_follow_contract() {
        assert_eq!(RunOutcome::Finished.exit_code(), 0);
        assert_eq!(RunOutcome::BackendError.exit_code(), 3);
        assert_eq!(RunOutcome::Refused.exit_code(), 4);
        assert_eq!(RunOutcome::StepLimit.exit_code(), 5);
    }
}
