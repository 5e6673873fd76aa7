//! Behavior next-step generation: the loop that assembles prompts from
//! module contributions, queries the behavior backend, parses and
//! dispatches steps, and accumulates the monologue until FINISH or a
//! limit.
//!
//! The prompt template is a fixed set of section headers in a fixed
//! order; optional sections vanish entirely (header included) when their
//! module is disabled or contributed nothing, so ablating a module
//! changes prompts only by removing its section. Parse and validation
//! failures are not fatal: the error text is fed back as the step's
//! result, giving the model a self-correction channel.

use std::sync::Arc;
use std::time::Duration;

use tokio::sync::mpsc;

use crate::backend::{CompletionBackend, CompletionRequest};
use crate::exec::SimExecutor;
use crate::perception::PerceptionModule;
use crate::profile::RobotProfile;
use crate::rag::{EthicsDecision, EthicsModule, MemoryModule, PatternModule};
use crate::step::{parse_step, validate_step, BehaviorStep, StepCategory, StepKind};
use crate::transcript::{RunOutcome, StepResult, StepStatus, Transcript, TranscriptEntry};

pub const ORCHESTRATOR_MODULE: &str = "orchestrator";
pub const PARSER_MODULE: &str = "parser";
pub const VALIDATOR_MODULE: &str = "validator";
pub const ETHICS_MODULE: &str = "ethics";

pub const DEFAULT_PREAMBLE: &str = "You are the behavior engine of a robot. Decide the single \
                                    next step that makes progress on the task. Output exactly \
                                    one step line and nothing else.";

const CAPABILITIES_HEADER: &str = "# Capabilities";
const ETHICS_HEADER: &str = "# Ethical recommendations";
const MEMORIES_HEADER: &str = "# Recalled memories";
const PATTERNS_HEADER: &str = "# Behavior examples";
const TASK_HEADER: &str = "# Task";
const HISTORY_HEADER: &str = "# History";
const NEXT_STEP_CUE: &str = "Next step:";
const EMPTY_HISTORY: &str = "(no steps yet)";

/// Loop bounds and decoding settings for one run.
#[derive(Debug, Clone)]
pub struct RunLimits {
    pub max_steps: usize,
    pub listen_timeout: Duration,
    /// Memories recalled per task.
    pub recall_k: usize,
    /// Behavior examples injected per task (1 = one-shot).
    pub patterns_n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RunLimits {
    fn default() -> RunLimits {
        RunLimits {
            max_steps: 50,
            listen_timeout: Duration::from_secs(10),
            recall_k: 3,
            patterns_n: 1,
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

/// Enabled modules for one robot's loop. Behavior and execution are the
/// two that must always be present; everything else can be absent.
pub struct ModuleRegistry {
    pub behavior: Arc<dyn CompletionBackend>,
    pub execution: Arc<SimExecutor>,
    pub env_analysis: Option<Arc<PerceptionModule>>,
    pub object_qa: Option<Arc<PerceptionModule>>,
    pub localization: Option<Arc<PerceptionModule>>,
    pub memory: Option<Arc<MemoryModule>>,
    pub patterns: Option<Arc<PatternModule>>,
    pub ethics: Option<Arc<EthicsModule>>,
}

impl ModuleRegistry {
    pub fn minimal(behavior: Arc<dyn CompletionBackend>, execution: Arc<SimExecutor>) -> Self {
        ModuleRegistry {
            behavior,
            execution,
            env_analysis: None,
            object_qa: None,
            localization: None,
            memory: None,
            patterns: None,
            ethics: None,
        }
    }

    /// Enables all three perception roles with one handler.
    pub fn with_perception(mut self, perception: Arc<PerceptionModule>) -> Self {
        self.env_analysis = Some(perception.clone());
        self.object_qa = Some(perception.clone());
        self.localization = Some(perception);
        self
    }

    fn perception_handler(&self, kind: StepKind) -> (&'static str, Option<&Arc<PerceptionModule>>) {
        match kind {
            StepKind::DescribeView => ("env_analysis", self.env_analysis.as_ref()),
            StepKind::QuestionView => ("object_qa", self.object_qa.as_ref()),
            _ => ("localization", self.localization.as_ref()),
        }
    }
}

/// Everything the prompt is assembled from. Optional sections are `None`
/// iff their module is disabled.
#[derive(Debug, Clone)]
pub struct PromptContext<'a> {
    pub system_preamble: &'a str,
    pub capabilities: String,
    pub ethical_recommendations: Option<Vec<String>>,
    pub recalled_memories: Option<Vec<String>>,
    pub pattern_examples: Option<Vec<String>>,
    pub task: &'a str,
    pub history: &'a [TranscriptEntry],
}

/// Renders the capabilities section body for a profile.
pub fn capabilities_text(profile: &RobotProfile) -> String {
    let mut out = format!(
        "Platform: {}\nActions: {}",
        profile.platform_name,
        profile.action_names().join(", ")
    );
    if !profile.capabilities_note.is_empty() {
        out.push('\n');
        out.push_str(&profile.capabilities_note);
    }
    out
}

/// Deterministic prompt assembly: fixed section order, byte-identical
/// output for identical contexts, empty optional sections omitted
/// entirely including their headers.
pub fn assemble_prompt(ctx: &PromptContext<'_>) -> String {
    let mut sections: Vec<String> = Vec::new();
    sections.push(ctx.system_preamble.to_string());
    sections.push(format!("{CAPABILITIES_HEADER}\n{}", ctx.capabilities));

    if let Some(recommendations) = &ctx.ethical_recommendations {
        if !recommendations.is_empty() {
            let body: Vec<String> = recommendations.iter().map(|r| format!("- {r}")).collect();
            sections.push(format!("{ETHICS_HEADER}\n{}", body.join("\n")));
        }
    }
    if let Some(memories) = &ctx.recalled_memories {
        if !memories.is_empty() {
            let body: Vec<String> = memories.iter().map(|m| format!("- {m}")).collect();
            sections.push(format!("{MEMORIES_HEADER}\n{}", body.join("\n")));
        }
    }
    if let Some(examples) = &ctx.pattern_examples {
        if !examples.is_empty() {
            sections.push(format!("{PATTERNS_HEADER}\n{}", examples.join("\n\n")));
        }
    }

    sections.push(format!("{TASK_HEADER}\n{}", ctx.task));
    sections.push(format!("{HISTORY_HEADER}\n{}", history_text(ctx.history)));
    sections.push(NEXT_STEP_CUE.to_string());
    sections.join("\n\n")
}

fn history_text(history: &[TranscriptEntry]) -> String {
    if history.is_empty() {
        return EMPTY_HISTORY.to_string();
    }
    history
        .iter()
        .map(|entry| {
            let status = match entry.result.status {
                StepStatus::Success => "success",
                StepStatus::Failure => "failure",
                StepStatus::Refused => "refused",
            };
            if entry.result.payload.is_empty() {
                format!("{}. {} -> {}", entry.index + 1, entry.step_text, status)
            } else {
                format!(
                    "{}. {} -> {}: {}",
                    entry.index + 1,
                    entry.step_text,
                    status,
                    entry.result.payload
                )
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Live progress events, consumed by the operator console and service
/// sessions.
#[derive(Debug, Clone)]
pub enum RunEvent {
    Step {
        robot_id: String,
        entry: TranscriptEntry,
    },
    Done {
        robot_id: String,
        outcome: RunOutcome,
    },
}

pub type EventSink = mpsc::UnboundedSender<RunEvent>;

/// Captured prompts from a traced run, in loop order.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub prompts: Vec<String>,
}

/// One robot's behavior loop. Strictly sequential per robot; run several
/// orchestrators concurrently for multi-robot scenarios.
pub struct Orchestrator {
    profile: RobotProfile,
    registry: ModuleRegistry,
    limits: RunLimits,
    preamble: String,
    events: Option<EventSink>,
}

impl Orchestrator {
    pub fn new(profile: RobotProfile, registry: ModuleRegistry, limits: RunLimits) -> Orchestrator {
        Orchestrator {
            profile,
            registry,
            limits,
            preamble: DEFAULT_PREAMBLE.to_string(),
            events: None,
        }
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Orchestrator {
        self.preamble = preamble.into();
        self
    }

    pub fn with_events(mut self, events: EventSink) -> Orchestrator {
        self.events = Some(events);
        self
    }

    pub fn profile(&self) -> &RobotProfile {
        &self.profile
    }

    fn tag(&self, role: &str) -> String {
        format!("{}/{role}", self.profile.robot_id)
    }

    fn emit(&self, event: RunEvent) {
        if let Some(sink) = &self.events {
            let _ = sink.send(event);
        }
    }

    pub async fn run(&self, task: &str) -> Transcript {
        self.run_traced(task).await.0
    }

    /// Runs the loop, also returning every assembled prompt (for golden
    /// and ablation checks).
    pub async fn run_traced(&self, task: &str) -> (Transcript, RunTrace) {
        let robot_id = self.profile.robot_id.clone();
        let mut transcript = Transcript {
            task: task.to_string(),
            robot_id: robot_id.clone(),
            entries: Vec::new(),
            outcome: RunOutcome::StepLimit,
            error: None,
        };
        let mut trace = RunTrace::default();

        // Pre-task consultations happen exactly once, immediately after
        // receiving the task; their outputs are cached into the context.
        let ethical_recommendations = match &self.registry.ethics {
            None => None,
            Some(ethics) => {
                let verdict = ethics.review(task, &self.tag("ethics")).await;
                if verdict.decision == EthicsDecision::Refuse {
                    self.record_refusal(&mut transcript, &verdict).await;
                    self.emit(RunEvent::Done {
                        robot_id,
                        outcome: transcript.outcome,
                    });
                    return (transcript, trace);
                }
                Some(verdict.recommendations)
            }
        };
        let recalled_memories = match &self.registry.memory {
            None => None,
            Some(memory) => Some(
                memory
                    .recall(task, self.limits.recall_k, &self.tag("memory"))
                    .await
                    .into_iter()
                    .map(|item| item.text)
                    .collect::<Vec<String>>(),
            ),
        };
        let pattern_examples = self.registry.patterns.as_ref().map(|patterns| {
            patterns
                .retrieve(task, self.limits.patterns_n)
                .iter()
                .map(|p| p.prompt_text())
                .collect::<Vec<String>>()
        });

        let capabilities = capabilities_text(&self.profile);
        while transcript.entries.len() < self.limits.max_steps {
            let prompt = assemble_prompt(&PromptContext {
                system_preamble: &self.preamble,
                capabilities: capabilities.clone(),
                ethical_recommendations: ethical_recommendations.clone(),
                recalled_memories: recalled_memories.clone(),
                pattern_examples: pattern_examples.clone(),
                task,
                history: &transcript.entries,
            });
            trace.prompts.push(prompt.clone());

            let mut request = CompletionRequest::text(prompt, self.tag("behavior"));
            request.temperature = self.limits.temperature;
            request.max_tokens = self.limits.max_tokens;
            let completion = match self.registry.behavior.complete(&request).await {
                Ok(completion) => completion,
                Err(e) => {
                    transcript.outcome = RunOutcome::BackendError;
                    transcript.error = Some(e.to_string());
                    self.emit(RunEvent::Done {
                        robot_id: transcript.robot_id.clone(),
                        outcome: transcript.outcome,
                    });
                    return (transcript, trace);
                }
            };

            let line = completion
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or("")
                .to_string();

            let (entry, finish) = self.dispatch_line(&line, task, transcript.entries.len()).await;
            let finished = finish;
            self.emit(RunEvent::Step {
                robot_id: transcript.robot_id.clone(),
                entry: entry.clone(),
            });
            transcript.entries.push(entry);
            if finished {
                transcript.outcome = RunOutcome::Finished;
                break;
            }
        }

        self.emit(RunEvent::Done {
            robot_id: transcript.robot_id.clone(),
            outcome: transcript.outcome,
        });
        (transcript, trace)
    }

    /// Parses, validates, and dispatches one model line. Returns the
    /// transcript entry and whether the loop is done.
    async fn dispatch_line(&self, line: &str, task: &str, index: usize) -> (TranscriptEntry, bool) {
        let step = match parse_step(line) {
            Ok(step) => step,
            Err(e) => {
                // Parse failures feed back as results; the loop continues.
                return (
                    TranscriptEntry {
                        index,
                        step_text: line.to_string(),
                        kind: None,
                        result: StepResult::failure(PARSER_MODULE, e.to_string()),
                    },
                    false,
                );
            }
        };
        let step_text = step.canonical();
        if let Err(violation) = validate_step(&step, &self.profile) {
            return (
                TranscriptEntry {
                    index,
                    step_text,
                    kind: Some(step.kind()),
                    result: StepResult::failure(VALIDATOR_MODULE, violation.to_string()),
                },
                false,
            );
        }

        let (result, finish) = self.dispatch_step(&step).await;
        if result.is_success() {
            if let Some(memory) = &self.registry.memory {
                memory
                    .memorize(&result, task, index, &step_text, &self.tag("memory"))
                    .await;
            }
        }
        (
            TranscriptEntry {
                index,
                step_text,
                kind: Some(step.kind()),
                result,
            },
            finish,
        )
    }

    /// Routes a validated step to its module.
    async fn dispatch_step(&self, step: &BehaviorStep) -> (StepResult, bool) {
        match step.kind() {
            StepKind::Finish => (StepResult::success(ORCHESTRATOR_MODULE, ""), true),
            // Recorded, no module invoked.
            StepKind::Thought => (StepResult::success(ORCHESTRATOR_MODULE, ""), false),
            kind if kind.category() == StepCategory::Perception => {
                let (role, handler) = self.registry.perception_handler(kind);
                match handler {
                    None => (
                        StepResult::failure(
                            ORCHESTRATOR_MODULE,
                            format!("no handler: module `{role}` is disabled"),
                        ),
                        false,
                    ),
                    Some(perception) => (
                        perception
                            .handle(step, self.registry.execution.world(), &self.profile.robot_id)
                            .await,
                        false,
                    ),
                }
            }
            _ => (
                self.registry
                    .execution
                    .execute(step, &self.profile.robot_id)
                    .await,
                false,
            ),
        }
    }

    /// Refusal path: the robot vocalizes the refusal (one SAY, no physical
    /// steps beyond it) and the run terminates with outcome `refused`.
    async fn record_refusal(
        &self,
        transcript: &mut Transcript,
        verdict: &crate::rag::EthicsVerdict,
    ) {
        let reason = if verdict.recommendations.is_empty() {
            format!("cited rules: {}", verdict.cited_rules.join(", "))
        } else {
            verdict.recommendations.join(" ")
        };
        let text = format!("I must refuse this task. {reason}");
        let say = BehaviorStep::new(StepKind::Say, [text]).expect("refusal SAY is well-formed");
        if self.profile.actions.contains(&StepKind::Say) {
            // Vocalize on the bus; the gate verdict, not the SAY outcome,
            // is what the transcript records.
            let _ = self.registry.execution.execute(&say, &self.profile.robot_id).await;
        }
        let entry = TranscriptEntry {
            index: 0,
            step_text: say.canonical(),
            kind: Some(StepKind::Say),
            result: StepResult {
                status: StepStatus::Refused,
                payload: format!(
                    "refused; cited rules: {}",
                    verdict.cited_rules.join(", ")
                ),
                origin_module: ETHICS_MODULE.to_string(),
                facts: Vec::new(),
            },
        };
        self.emit(RunEvent::Step {
            robot_id: self.profile.robot_id.clone(),
            entry: entry.clone(),
        });
        transcript.entries.push(entry);
        transcript.outcome = RunOutcome::Refused;
    }
}
