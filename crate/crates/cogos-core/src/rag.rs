//! The three retrieval-augmented cognitive modules: long-term memory
//! (memorize/recall), behavior-pattern preparation (one-shot examples for
//! the prompt), and ethical-instruction preparation with a gate verdict.
//!
//! All three retrieve through [`VectorStore`]; the pattern and rule
//! databases are pre-formed (imported from JSONL, then closed for
//! writing), while the memory database grows during runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{CompletionBackend, CompletionRequest};
use crate::step::{parse_step, StepKind};
use crate::transcript::StepResult;
use crate::vector::{StoreError, VectorStore};

pub type SharedStore = Arc<RwLock<VectorStore>>;

pub fn shared(store: VectorStore) -> SharedStore {
    Arc::new(RwLock::new(store))
}

/// Atomicity cap for one memory item.
pub const MAX_MEMORY_ITEM_CHARS: usize = 500;
/// At most this many facts are stored per successful step.
pub const MAX_FACTS_PER_STEP: usize = 3;
/// Rules retrieved per task for the ethics gate.
pub const DEFAULT_RULES_PER_TASK: usize = 10;
/// Sentinel rule id cited when the judge cannot produce a usable verdict.
pub const JUDGE_UNPARSEABLE: &str = "JUDGE_UNPARSEABLE";

// ---------------------------------------------------------------------------
// Memory
// ---------------------------------------------------------------------------

/// One atomic remembered fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub text: String,
    pub source_task: String,
    pub source_step: usize,
    /// Logical timestamp: the record id in the memory database.
    pub stored_at: u64,
}

/// Long-term memory: extracts facts from step results and recalls them for
/// new tasks. Without an extraction backend it runs in deterministic mode,
/// storing only facts the simulator flagged as ground truth.
pub struct MemoryModule {
    store: SharedStore,
    extractor: Option<Arc<dyn CompletionBackend>>,
    dropped: AtomicUsize,
}

impl MemoryModule {
    pub fn new(store: SharedStore, extractor: Option<Arc<dyn CompletionBackend>>) -> MemoryModule {
        MemoryModule {
            store,
            extractor,
            dropped: AtomicUsize::new(0),
        }
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    /// Count of extracted facts dropped for violating memory-item limits.
    pub fn dropped_fact_count(&self) -> usize {
        self.dropped.load(Ordering::SeqCst)
    }

    /// Top-k stored items relevant to the task, optionally filtered
    /// through the extraction backend. Returned texts are injected
    /// verbatim into the behavior prompt.
    pub async fn recall(&self, task: &str, k: usize, tag: &str) -> Vec<MemoryItem> {
        if k == 0 {
            return Vec::new();
        }
        let candidates: Vec<MemoryItem> = {
            let store = self.store.read().unwrap();
            store
                .query_top_k(task, k)
                .into_iter()
                .map(|(record, _)| MemoryItem {
                    text: record.text.clone(),
                    source_task: record.metadata.get("task").cloned().unwrap_or_default(),
                    source_step: record
                        .metadata
                        .get("step")
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(0),
                    stored_at: record.id,
                })
                .collect()
        };
        let Some(extractor) = &self.extractor else {
            return candidates;
        };
        if candidates.is_empty() {
            return candidates;
        }
        let listing: String = candidates
            .iter()
            .map(|m| format!("- {}\n", m.text))
            .collect();
        let prompt = format!(
            "Task: {task}\n\nCandidate memories:\n{listing}\n\
             List the memories useful for this task, one per line, or NONE."
        );
        match extractor.complete(&CompletionRequest::text(prompt, tag)).await {
            Ok(output) => {
                let selected = response_lines(&output);
                candidates
                    .into_iter()
                    .filter(|m| selected.iter().any(|line| line == &m.text))
                    .collect()
            }
            // Recall is an aid, not a gate: on extractor trouble fall back
            // to the raw similarity hits.
            Err(_) => candidates,
        }
    }

    /// Extracts 0..=3 atomic facts from a successful step result and
    /// stores them. Failed results store nothing.
    pub async fn memorize(
        &self,
        result: &StepResult,
        task: &str,
        step_index: usize,
        step_text: &str,
        tag: &str,
    ) -> Vec<MemoryItem> {
        if !result.is_success() {
            return Vec::new();
        }
        let facts: Vec<String> = match &self.extractor {
            Some(extractor) => {
                let prompt = format!(
                    "Extract up to {MAX_FACTS_PER_STEP} short facts worth remembering from this \
                     step result, one per line, or NONE.\n\nStep: {step_text}\nResult: {payload}",
                    payload = result.payload
                );
                match extractor.complete(&CompletionRequest::text(prompt, tag)).await {
                    Ok(output) => response_lines(&output),
                    Err(_) => Vec::new(),
                }
            }
            // Deterministic mode: only ground-truth flagged facts.
            None => result.facts.clone(),
        };

        let mut stored = Vec::new();
        for fact in facts.into_iter() {
            if stored.len() == MAX_FACTS_PER_STEP {
                break;
            }
            let fact = fact.trim().to_string();
            if fact.is_empty() || fact.chars().count() > MAX_MEMORY_ITEM_CHARS {
                self.dropped.fetch_add(1, Ordering::SeqCst);
                continue;
            }
            let mut metadata = BTreeMap::new();
            metadata.insert("task".to_string(), task.to_string());
            metadata.insert("step".to_string(), step_index.to_string());
            let id = {
                let mut store = self.store.write().unwrap();
                match store.insert(fact.clone(), metadata) {
                    Ok(id) => id,
                    Err(_) => {
                        self.dropped.fetch_add(1, Ordering::SeqCst);
                        continue;
                    }
                }
            };
            stored.push(MemoryItem {
                text: fact,
                source_task: task.to_string(),
                source_step: step_index,
                stored_at: id,
            });
        }
        stored
    }
}

/// Non-empty trimmed lines of a backend reply; a lone `NONE` means none.
fn response_lines(output: &str) -> Vec<String> {
    let lines: Vec<String> = output
        .lines()
        .map(|l| l.trim().trim_start_matches("- ").to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() == 1 && lines[0].eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    lines
}

// ---------------------------------------------------------------------------
// Behavior patterns
// ---------------------------------------------------------------------------

/// A stored one-shot example: a task and the canonical step lines that
/// solved it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorPattern {
    pub task_text: String,
    pub steps: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("pattern `{task}`: {reason}")]
    InvalidPattern { task: String, reason: String },
    #[error("rule `{rule_id}`: {reason}")]
    InvalidRule { rule_id: String, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl BehaviorPattern {
    /// Validates that every step line parses and the example ends with
    /// FINISH.
    pub fn validate(&self) -> Result<(), RagError> {
        if self.steps.is_empty() {
            return Err(RagError::InvalidPattern {
                task: self.task_text.clone(),
                reason: "no steps".to_string(),
            });
        }
        for line in &self.steps {
            let step = parse_step(line).map_err(|e| RagError::InvalidPattern {
                task: self.task_text.clone(),
                reason: format!("step `{line}`: {e}"),
            })?;
            let _ = step;
        }
        let last = parse_step(self.steps.last().unwrap()).expect("validated above");
        if last.kind() != StepKind::Finish {
            return Err(RagError::InvalidPattern {
                task: self.task_text.clone(),
                reason: "pattern must end with FINISH".to_string(),
            });
        }
        Ok(())
    }

    /// Prompt rendering: the example task followed by its step lines.
    pub fn prompt_text(&self) -> String {
        format!("Task: {}\n{}", self.task_text, self.steps.join("\n"))
    }
}

/// One-shot behavior example preparation.
pub struct PatternModule {
    store: SharedStore,
}

impl PatternModule {
    pub fn new(store: SharedStore) -> PatternModule {
        PatternModule { store }
    }

    /// Builds the pattern database from JSONL lines of
    /// `{"task_text": ..., "steps": [...], "tags": [...]}` and closes it
    /// for writing: new behaviors are added by editing the file, not by
    /// retraining anything.
    pub fn load_jsonl(store: SharedStore, path: &Path) -> Result<PatternModule, RagError> {
        let data = std::fs::read_to_string(path).map_err(|e| {
            RagError::Store(StoreError::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?;
        {
            let mut store = store.write().unwrap();
            for (i, line) in data.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let pattern: BehaviorPattern =
                    serde_json::from_str(line).map_err(|e| {
                        RagError::Store(StoreError::Import {
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    })?;
                pattern.validate()?;
                insert_pattern(&mut store, &pattern)?;
            }
            store.close_for_writing();
        }
        Ok(PatternModule { store })
    }

    /// Top-n patterns by task similarity (n = 1 gives one-shot behavior).
    pub fn retrieve(&self, task: &str, n: usize) -> Vec<BehaviorPattern> {
        let store = self.store.read().unwrap();
        store
            .query_top_k(task, n)
            .into_iter()
            .filter_map(|(record, _)| {
                let steps: Vec<String> = record
                    .metadata
                    .get("steps")?
                    .lines()
                    .map(str::to_string)
                    .collect();
                let tags = record
                    .metadata
                    .get("tags")
                    .map(|t| t.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
                    .unwrap_or_default();
                Some(BehaviorPattern {
                    task_text: record.text.clone(),
                    steps,
                    tags,
                })
            })
            .collect()
    }
}

fn insert_pattern(store: &mut VectorStore, pattern: &BehaviorPattern) -> Result<(), RagError> {
    let mut metadata = BTreeMap::new();
    metadata.insert("steps".to_string(), pattern.steps.join("\n"));
    metadata.insert("tags".to_string(), pattern.tags.join(","));
    store.insert(pattern.task_text.clone(), metadata)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ethics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EthicalRule {
    pub rule_id: String,
    pub statement: String,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EthicsDecision {
    Proceed,
    Refuse,
}

/// Gate verdict: proceed (optionally with recommendations that go into the
/// prompt) or refuse (always citing at least one rule).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EthicsVerdict {
    pub decision: EthicsDecision,
    pub recommendations: Vec<String>,
    pub cited_rules: Vec<String>,
}

impl EthicsVerdict {
    pub fn proceed_clean() -> EthicsVerdict {
        EthicsVerdict {
            decision: EthicsDecision::Proceed,
            recommendations: Vec::new(),
            cited_rules: Vec::new(),
        }
    }

    fn fail_closed(reason: String) -> EthicsVerdict {
        EthicsVerdict {
            decision: EthicsDecision::Refuse,
            recommendations: vec![reason],
            cited_rules: vec![JUDGE_UNPARSEABLE.to_string()],
        }
    }
}

/// Pre-task ethical review: retrieves the applicable rules and asks a
/// judge backend for a verdict. Any judge failure fails closed (refuse).
pub struct EthicsModule {
    store: SharedStore,
    judge: Arc<dyn CompletionBackend>,
    rules_per_task: usize,
}

impl EthicsModule {
    pub fn new(store: SharedStore, judge: Arc<dyn CompletionBackend>) -> EthicsModule {
        EthicsModule {
            store,
            judge,
            rules_per_task: DEFAULT_RULES_PER_TASK,
        }
    }

    pub fn with_rules_per_task(mut self, k: usize) -> EthicsModule {
        self.rules_per_task = k;
        self
    }

    /// Builds the rule database from JSONL lines of
    /// `{"rule_id": ..., "statement": ..., "category": ...}`.
    pub fn load_rules_jsonl(store: &SharedStore, path: &Path) -> Result<usize, RagError> {
        let data = std::fs::read_to_string(path).map_err(|e| {
            RagError::Store(StoreError::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?;
        let mut seen = std::collections::BTreeSet::new();
        let mut count = 0;
        let mut store = store.write().unwrap();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: EthicalRule = serde_json::from_str(line).map_err(|e| {
                RagError::Store(StoreError::Import {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })?;
            if !seen.insert(rule.rule_id.clone()) {
                return Err(RagError::InvalidRule {
                    rule_id: rule.rule_id,
                    reason: format!("duplicate rule id at line {}", i + 1),
                });
            }
            let mut metadata = BTreeMap::new();
            metadata.insert("rule_id".to_string(), rule.rule_id.clone());
            metadata.insert("category".to_string(), rule.category.clone());
            store.insert(rule.statement, metadata)?;
            count += 1;
        }
        store.close_for_writing();
        Ok(count)
    }

    /// Rules most applicable to a task, most similar first.
    pub fn applicable_rules(&self, task: &str) -> Vec<EthicalRule> {
        let store = self.store.read().unwrap();
        store
            .query_top_k(task, self.rules_per_task)
            .into_iter()
            .map(|(record, _)| EthicalRule {
                rule_id: record
                    .metadata
                    .get("rule_id")
                    .cloned()
                    .unwrap_or_else(|| format!("rule_{}", record.id)),
                statement: record.text.clone(),
                category: record.metadata.get("category").cloned().unwrap_or_default(),
            })
            .collect()
    }

    /// Reviews a task. An empty rule database proceeds without consulting
    /// the judge at all.
    pub async fn review(&self, task: &str, tag: &str) -> EthicsVerdict {
        let rules = self.applicable_rules(task);
        if rules.is_empty() {
            return EthicsVerdict::proceed_clean();
        }
        let listing: String = rules
            .iter()
            .map(|r| format!("- [{}] {}\n", r.rule_id, r.statement))
            .collect();
        let prompt = format!(
            "You review a robot task against ethical rules.\n\nRules:\n{listing}\n\
             Task: {task}\n\n\
             Reply with:\nDECISION: PROCEED or REFUSE\n\
             CITE: <rule id> (one line per applicable rule)\n\
             RECOMMEND: <short instruction> (one line per recommendation)"
        );
        let output = match self.judge.complete(&CompletionRequest::text(prompt, tag)).await {
            Ok(output) => output,
            Err(e) => {
                return EthicsVerdict::fail_closed(format!("ethics judge unavailable: {e}"));
            }
        };
        match parse_verdict(&output) {
            Some(verdict) => verdict,
            None => EthicsVerdict::fail_closed(
                "ethics judge output could not be parsed; refusing to proceed".to_string(),
            ),
        }
    }
}

fn parse_verdict(output: &str) -> Option<EthicsVerdict> {
    let mut decision = None;
    let mut cited_rules = Vec::new();
    let mut recommendations = Vec::new();
    for line in output.lines() {
        let line = line.trim();
        if let Some(value) = line.strip_prefix("DECISION:") {
            decision = match value.trim().to_uppercase().as_str() {
                "PROCEED" => Some(EthicsDecision::Proceed),
                "REFUSE" => Some(EthicsDecision::Refuse),
                _ => return None,
            };
        } else if let Some(value) = line.strip_prefix("CITE:") {
            let value = value.trim();
            if !value.is_empty() {
                cited_rules.push(value.to_string());
            }
        } else if let Some(value) = line.strip_prefix("RECOMMEND:") {
            let value = value.trim();
            if !value.is_empty() {
                recommendations.push(value.to_string());
            }
        }
    }
    let decision = decision?;
    if decision == EthicsDecision::Refuse && cited_rules.is_empty() {
        // A refusal must cite something; treat as unusable output.
        return None;
    }
    Some(EthicsVerdict {
        decision,
        recommendations,
        cited_rules,
    })
}
