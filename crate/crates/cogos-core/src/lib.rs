//! Modular cognitive-robot kernel.
//!
//! A behavior backend generates typed steps one line at a time; the
//! orchestrator parses, validates, and dispatches them to pluggable
//! modules — perception, long-term memory, behavior patterns, an ethics
//! gate, and on-robot execution over simulated platforms — accumulating an
//! internal monologue until FINISH. Robots cooperate over a verbal bus
//! (SAY/LISTEN) while sharing one simulated world.
//!
//! Everything is deterministic under scripted backends: identical configs
//! produce byte-identical transcripts, prompts, and evaluation reports.

pub mod api;
pub mod backend;
pub mod bus;
pub mod config;
pub mod eval;
pub mod exec;
pub mod orchestrator;
pub mod perception;
pub mod profile;
pub mod rag;
pub mod step;
pub mod transcript;
pub mod vector;
pub mod world;

pub use backend::{CompletionBackend, CompletionRequest, ScriptedBackend};
pub use bus::Bus;
pub use config::{RunConfig, Session, TaskAssignment};
pub use orchestrator::{ModuleRegistry, Orchestrator, RunLimits};
pub use profile::RobotProfile;
pub use step::{parse_step, render_step, validate_step, BehaviorStep, StepKind};
pub use transcript::{RunOutcome, StepResult, Transcript};
pub use world::World;
