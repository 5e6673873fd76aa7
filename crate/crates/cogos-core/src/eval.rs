//! Evaluation harness: runs suites of cases, judges success with
//! declarative predicates over the final world and transcripts (never by
//! string-matching model output), and aggregates per-category rates.
//!
//! Ethics suites additionally produce a 2x2 confusion matrix of actual
//! (task violates the rules or not) against predicted (run refused or
//! not). `--ablate <module>` reruns the whole suite with one module
//! disabled and reports the per-category deltas.
//!
//! Reports contain no timestamps: with scripted backends two runs of the
//! same suite produce byte-identical report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ModuleMask, RunConfig, Session};
use crate::step::{StepCategory, StepKind};
use crate::transcript::{RunOutcome, StepStatus, Transcript};
use crate::world::{Placement, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Reasoning,
    HumanRecognition,
    SymbolUnderstanding,
    Ethics,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Reasoning => "Reasoning",
            Category::HumanRecognition => "HumanRecognition",
            Category::SymbolUnderstanding => "SymbolUnderstanding",
            Category::Ethics => "Ethics",
        }
    }
}

/// Declarative success predicate over the final world and transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    /// The addressed robot's run outcome.
    Outcome { equals: RunOutcome },
    /// Object ended up carried by this user.
    CarriedByUser { object: u64, user: String },
    /// Object ended up resting at this place.
    ObjectAt { object: u64, place: String },
    RobotAt { robot: String, place: String },
    /// Some transcript contains a step of this kind (optionally scoped to
    /// one robot).
    TranscriptContainsKind {
        kind: StepKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        robot: Option<String>,
    },
    /// Some step of this kind executed successfully. Distinguishes a
    /// module answering from a disabled module's no-handler failure.
    StepSucceeded { kind: StepKind },
    /// No physical step ever executed successfully (refusals hold this).
    NoPhysicalSteps,
}

impl Predicate {
    fn holds(&self, world: &World, primary: &Transcript, all: &[Transcript]) -> bool {
        match self {
            Predicate::Outcome { equals } => primary.outcome == *equals,
            Predicate::CarriedByUser { object, user } => world
                .objects()
                .get(object)
                .is_some_and(|o| o.location == Placement::User { user: user.clone() }),
            Predicate::ObjectAt { object, place } => world
                .objects()
                .get(object)
                .is_some_and(|o| o.location == Placement::Place { name: place.clone() }),
            Predicate::RobotAt { robot, place } => {
                world.robot(robot).is_some_and(|r| r.location == *place)
            }
            Predicate::TranscriptContainsKind { kind, robot } => all
                .iter()
                .filter(|t| robot.as_ref().is_none_or(|r| t.robot_id == *r))
                .any(|t| t.entries.iter().any(|e| e.kind == Some(*kind))),
            Predicate::StepSucceeded { kind } => all.iter().any(|t| {
                t.entries
                    .iter()
                    .any(|e| e.kind == Some(*kind) && e.result.status == StepStatus::Success)
            }),
            Predicate::NoPhysicalSteps => all.iter().all(|t| {
                t.entries.iter().all(|e| {
                    !(e.kind.is_some_and(|k| k.category() == StepCategory::Physical)
                        && e.result.status == StepStatus::Success)
                })
            }),
        }
    }
}

/// One evaluation case: a task, its category, an optional world override,
/// and the predicates that define success.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub task: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<String>,
    /// Ground truth for the ethics confusion matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violates_ethics: Option<bool>,
    pub checker: Vec<Predicate>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("suite io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed suite at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown module `{0}` (expected one of memory, patterns, ethics, perception)")]
    UnknownModule(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn load_suite(path: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let data = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cases = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut case: EvalCase = serde_json::from_str(line).map_err(|e| EvalError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(world) = &mut case.world {
            if world.is_relative() {
                *world = base.join(&world);
            }
        }
        cases.push(case);
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub category: Category,
    pub passed: bool,
    pub outcome: Option<RunOutcome>,
    /// Set when the case could not run at all (counted as a failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryStats {
    pub passed: usize,
    pub total: usize,
    pub rate: f64,
}

/// Actual (rows) x predicted (columns), Negative = no violation /
/// performed, Positive = violation / refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub compliant_performed: usize,
    pub compliant_refused: usize,
    pub violating_performed: usize,
    pub violating_refused: usize,
}

impl ConfusionMatrix {
    /// Renders the matrix in the usual actual/predicted table layout.
    pub fn table_text(&self) -> String {
        let mut out = String::new();
        out.push_str("                          Predicted Behavior\n");
        out.push_str("                          Negative    Positive\n");
        out.push_str(&format!(
            "Actual     Negative     {:>10}  {:>10}\n",
            self.compliant_performed, self.compliant_refused
        ));
        out.push_str(&format!(
            "Behavior   Positive     {:>10}  {:>10}\n",
            self.violating_performed, self.violating_refused
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub module: String,
    pub baseline: BTreeMap<String, CategoryStats>,
    pub ablated: BTreeMap<String, CategoryStats>,
    /// ablated rate minus baseline rate, per category.
    pub delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: String,
    pub cases: Vec<CaseResult>,
    pub categories: BTreeMap<String, CategoryStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationReport>,
}

impl EvalReport {
    /// Human-readable table: one line per category, plus the confusion
    /// matrix and ablation deltas when present.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("suite: {}\n", self.suite));
        out.push_str("category              passed  total   rate\n");
        for (name, stats) in &self.categories {
            out.push_str(&format!(
                "{name:<20} {:>7} {:>6} {:>5.0}%\n",
                stats.passed,
                stats.total,
                stats.rate * 100.0
            ));
        }
        if let Some(confusion) = &self.confusion {
            out.push('\n');
            out.push_str(&confusion.table_text());
        }
        if let Some(ablation) = &self.ablation {
            out.push_str(&format!("\nablation: without `{}`\n", ablation.module));
            out.push_str("category              baseline  ablated  delta\n");
            for (name, delta) in &ablation.delta {
                let baseline = ablation.baseline.get(name).copied().unwrap_or_default();
                let ablated = ablation.ablated.get(name).copied().unwrap_or_default();
                out.push_str(&format!(
                    "{name:<20} {:>8.0}% {:>7.0}% {:>+6.0}%\n",
                    baseline.rate * 100.0,
                    ablated.rate * 100.0,
                    delta * 100.0
                ));
            }
        }
        out
    }
}

async fn run_case(config: &RunConfig, case: &EvalCase) -> CaseResult {
    let world_file = case.world.as_deref().unwrap_or(&config.world.file);
    // A case that cannot even build counts as a failure, never an abort.
    let session = match Session::build_with_world_file(config, world_file, None) {
        Ok(session) => session,
        Err(e) => {
            return CaseResult {
                case_id: case.case_id.clone(),
                category: case.category,
                passed: false,
                outcome: None,
                error: Some(e.to_string()),
            }
        }
    };
    let assignments = match session.assignments(&case.task, case.robot.as_deref()) {
        Ok(assignments) => assignments,
        Err(e) => {
            return CaseResult {
                case_id: case.case_id.clone(),
                category: case.category,
                passed: false,
                outcome: None,
                error: Some(e.to_string()),
            }
        }
    };
    let transcripts = session.run_assignments(&assignments).await;
    let primary = &transcripts[0];
    let world = session.world.lock().await;
    let passed = case
        .checker
        .iter()
        .all(|p| p.holds(&world, primary, &transcripts));
    CaseResult {
        case_id: case.case_id.clone(),
        category: case.category,
        passed,
        outcome: Some(primary.outcome),
        error: None,
    }
}

fn category_stats(results: &[CaseResult]) -> BTreeMap<String, CategoryStats> {
    let mut stats: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for result in results {
        let entry = stats.entry(result.category.name().to_string()).or_default();
        entry.total += 1;
        if result.passed {
            entry.passed += 1;
        }
    }
    for entry in stats.values_mut() {
        entry.rate = entry.passed as f64 / entry.total as f64;
    }
    stats
}

fn confusion_matrix(cases: &[EvalCase], results: &[CaseResult]) -> Option<ConfusionMatrix> {
    let mut matrix = ConfusionMatrix::default();
    let mut any = false;
    for (case, result) in cases.iter().zip(results) {
        let Some(violates) = case.violates_ethics else {
            continue;
        };
        any = true;
        let refused = result.outcome == Some(RunOutcome::Refused);
        match (violates, refused) {
            (false, false) => matrix.compliant_performed += 1,
            (false, true) => matrix.compliant_refused += 1,
            (true, false) => matrix.violating_performed += 1,
            (true, true) => matrix.violating_refused += 1,
        }
    }
    any.then_some(matrix)
}

/// Runs a suite against a config; `ablate` names one of the optional
/// modules to disable for a comparison pass.
pub async fn run_suite(
    config: &RunConfig,
    suite_path: &Path,
    ablate: Option<&str>,
) -> Result<EvalReport, EvalError> {
    if let Some(module) = ablate {
        if !ModuleMask::NAMES.contains(&module) {
            return Err(EvalError::UnknownModule(module.to_string()));
        }
    }
    let cases = load_suite(suite_path)?;
    let mut results = Vec::new();
    for case in &cases {
        results.push(run_case(config, case).await);
    }
    let categories = category_stats(&results);
    let confusion = confusion_matrix(&cases, &results);

    let ablation = match ablate {
        None => None,
        Some(module) => {
            let mut ablated_config = config.clone();
            ablated_config.modules = ablated_config.modules.without(module);
            let mut ablated_results = Vec::new();
            for case in &cases {
                ablated_results.push(run_case(&ablated_config, case).await);
            }
            let ablated = category_stats(&ablated_results);
            let mut delta = BTreeMap::new();
            for (name, baseline_stats) in &categories {
                let ablated_rate = ablated.get(name).map(|s| s.rate).unwrap_or(0.0);
                delta.insert(name.clone(), ablated_rate - baseline_stats.rate);
            }
            Some(AblationReport {
                module: module.to_string(),
                baseline: categories.clone(),
                ablated,
                delta,
            })
        }
    };

    Ok(EvalReport {
        suite: suite_path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| suite_path.display().to_string()),
        cases: results,
        categories,
        confusion,
        ablation,
    })
}
