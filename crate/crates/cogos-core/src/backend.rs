//! Completion backends behind one interface: deterministic scripted
//! doubles for tests and a chat-completion-style HTTP client for real
//! models.
//!
//! Every remote call can be captured to a script file (record-and-replay),
//! so a real-model session converts directly into a regression fixture.
//! Script files are JSONL, one entry per line; an entry matches by exact
//! request hash, by ordered turn index, or by prompt substring, optionally
//! scoped to one backend tag.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Opaque raster payload for vision-capable backends. No image processing
/// happens here; only the digest is interpreted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

impl ImagePayload {
    pub fn digest_hex(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub image: Option<ImagePayload>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Routing/scoping identifier, e.g. `quadruped/behavior`.
    pub backend_tag: String,
}

impl CompletionRequest {
    pub fn text(prompt: impl Into<String>, backend_tag: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            image: None,
            // Deterministic decoding by default; config overrides.
            temperature: 0.0,
            max_tokens: 512,
            backend_tag: backend_tag.into(),
        }
    }

    pub fn with_image(mut self, image: ImagePayload) -> CompletionRequest {
        self.image = Some(image);
        self
    }

    /// Request digest: sha256 of the prompt, folding in the image digest
    /// when present. This is what exact-hash script entries key on.
    pub fn digest_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.prompt.as_bytes());
        if let Some(image) = &self.image {
            hasher.update([0u8]);
            hasher.update(image.digest_hex().as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("no script entry matched (tag `{tag}`, turn {turn}, digest {digest})")]
    ScriptMiss {
        tag: String,
        turn: u64,
        digest: String,
    },
    #[error("ambiguous script entries: lines {lines:?} all match the request")]
    AmbiguousMatch { lines: Vec<usize> },
    #[error("remote backend error: {reason}")]
    Remote {
        reason: String,
        status: Option<u16>,
    },
    #[error("backend call budget of {budget} exhausted")]
    BudgetExceeded { budget: u32 },
    #[error("backend `{backend}` is not vision-capable")]
    NotVisionCapable { backend: String },
    #[error("recording failed: {reason}")]
    Recording { reason: String },
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    /// As `complete`, for requests carrying an image.
    async fn complete_vision(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if !self.vision_capable() {
            return Err(BackendError::NotVisionCapable {
                backend: self.name().to_string(),
            });
        }
        self.complete(request).await
    }

    fn vision_capable(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Matcher {
    /// Fires on the n-th request (0-based) carrying the entry's tag.
    Turn { index: u64 },
    /// Fires when the request digest equals `sha256`.
    Hash { sha256: String },
    /// Fires when the prompt contains `needle`.
    Substring { needle: String },
    /// Fires on the n-th request (0-based, per tag) whose prompt contains
    /// `needle`. Lets one script hold a step sequence per task.
    SubstringTurn { needle: String, index: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
    /// Restricts the entry to one backend tag; absent = any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("ambiguous matchers: {detail}")]
    AmbiguousMatchers { detail: String },
}

/// Deterministic test double: identical request sequences yield identical
/// response sequences. Turn counters are kept per backend tag, so one
/// script can drive several robots without interleaving hazards.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    entries: Vec<(usize, ScriptEntry)>,
    counters: Mutex<Counters>,
}

/// Turn bookkeeping, per backend tag and per (tag, needle).
#[derive(Debug, Default)]
struct Counters {
    turns: BTreeMap<String, u64>,
    needle_turns: BTreeMap<(String, String), u64>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, entries: Vec<ScriptEntry>) -> Result<ScriptedBackend, ScriptError> {
        let entries: Vec<(usize, ScriptEntry)> =
            entries.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect();
        Self::validate(&entries)?;
        Ok(ScriptedBackend {
            name: name.into(),
            entries,
            counters: Mutex::new(Counters::default()),
        })
    }

    /// Loads and validates a JSONL script. An empty file is a valid
    /// backend on which every request misses.
    pub fn load(path: &Path) -> Result<ScriptedBackend, ScriptError> {
        let data = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut entries = Vec::new();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| ScriptError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push((i + 1, entry));
        }
        Self::validate(&entries)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "script".to_string());
        Ok(ScriptedBackend {
            name,
            entries,
            counters: Mutex::new(Counters::default()),
        })
    }

    /// Convenience: one turn-indexed response per element, in order.
    pub fn from_turns<S: Into<String>>(
        name: &str,
        responses: impl IntoIterator<Item = S>,
    ) -> ScriptedBackend {
        let entries = responses
            .into_iter()
            .enumerate()
            .map(|(i, r)| ScriptEntry {
                matcher: Matcher::Turn { index: i as u64 },
                response: r.into(),
                tag: None,
            })
            .collect();
        ScriptedBackend::new(name, entries).expect("turn scripts cannot be ambiguous")
    }

    /// Static ambiguity checks: duplicate turn indexes, duplicate hashes,
    /// and substring needles where one contains the other, within
    /// overlapping tag scopes.
    fn validate(entries: &[(usize, ScriptEntry)]) -> Result<(), ScriptError> {
        fn scopes_overlap(a: &Option<String>, b: &Option<String>) -> bool {
            match (a, b) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
        }
        for (i, (line_a, a)) in entries.iter().enumerate() {
            for (line_b, b) in entries.iter().skip(i + 1) {
                if !scopes_overlap(&a.tag, &b.tag) {
                    continue;
                }
                let conflict = match (&a.matcher, &b.matcher) {
                    (Matcher::Turn { index: x }, Matcher::Turn { index: y }) => x == y,
                    (Matcher::Hash { sha256: x }, Matcher::Hash { sha256: y }) => x == y,
                    (Matcher::Substring { needle: x }, Matcher::Substring { needle: y }) => {
                        x.contains(y.as_str()) || y.contains(x.as_str())
                    }
                    (
                        Matcher::SubstringTurn { needle: x, index: i },
                        Matcher::SubstringTurn { needle: y, index: j },
                    ) => i == j && (x.contains(y.as_str()) || y.contains(x.as_str())),
                    _ => false,
                };
                if conflict {
                    return Err(ScriptError::AmbiguousMatchers {
                        detail: format!("lines {line_a} and {line_b} can match the same request"),
                    });
                }
            }
        }
        Ok(())
    }

    fn tag_matches(entry: &ScriptEntry, request: &CompletionRequest) -> bool {
        entry.tag.is_none() || entry.tag.as_deref() == Some(&request.backend_tag)
    }

    /// Matching precedence: exact hash, then turn index, then per-needle
    /// turn, then plain substring. Two substring-family entries firing at
    /// once is reported, never guessed at.
    fn find_response(
        &self,
        request: &CompletionRequest,
        turn: u64,
        needle_turns: &BTreeMap<String, u64>,
    ) -> Result<String, BackendError> {
        let digest = request.digest_hex();

        for (_, entry) in &self.entries {
            if Self::tag_matches(entry, request) {
                if let Matcher::Hash { sha256 } = &entry.matcher {
                    if *sha256 == digest {
                        return Ok(entry.response.clone());
                    }
                }
            }
        }
        for (_, entry) in &self.entries {
            if Self::tag_matches(entry, request) {
                if let Matcher::Turn { index } = &entry.matcher {
                    if *index == turn {
                        return Ok(entry.response.clone());
                    }
                }
            }
        }
        let needle_hits: Vec<(usize, &ScriptEntry)> = self
            .entries
            .iter()
            .filter(|(_, e)| Self::tag_matches(e, request))
            .filter(|(_, e)| match &e.matcher {
                Matcher::SubstringTurn { needle, index } => {
                    needle_turns.get(needle.as_str()) == Some(index)
                }
                _ => false,
            })
            .map(|(line, e)| (*line, e))
            .collect();
        match needle_hits.as_slice() {
            [] => {}
            [(_, entry)] => return Ok(entry.response.clone()),
            many => {
                return Err(BackendError::AmbiguousMatch {
                    lines: many.iter().map(|(line, _)| *line).collect(),
                })
            }
        }
        let substring_hits: Vec<(usize, &ScriptEntry)> = self
            .entries
            .iter()
            .filter(|(_, e)| Self::tag_matches(e, request))
            .filter(|(_, e)| match &e.matcher {
                Matcher::Substring { needle } => request.prompt.contains(needle.as_str()),
                _ => false,
            })
            .map(|(line, e)| (*line, e))
            .collect();
        match substring_hits.as_slice() {
            [] => Err(BackendError::ScriptMiss {
                tag: request.backend_tag.clone(),
                turn,
                digest,
            }),
            [(_, entry)] => Ok(entry.response.clone()),
            many => Err(BackendError::AmbiguousMatch {
                lines: many.iter().map(|(line, _)| *line).collect(),
            }),
        }
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        // Take all turn numbers under one lock so concurrent robots keep
        // per-tag turn order.
        let (turn, needle_turns) = {
            let mut counters = self.counters.lock().unwrap();
            let counter = counters.turns.entry(request.backend_tag.clone()).or_insert(0);
            let turn = *counter;
            *counter += 1;

            // Advance every needle that occurs in this prompt, whether or
            // not its entry ends up winning; sequences stay in lockstep
            // with the requests that mention them.
            let mut present: BTreeMap<String, u64> = BTreeMap::new();
            for (_, entry) in &self.entries {
                if let Matcher::SubstringTurn { needle, .. } = &entry.matcher {
                    if Self::tag_matches(entry, request)
                        && !present.contains_key(needle.as_str())
                        && request.prompt.contains(needle.as_str())
                    {
                        let key = (request.backend_tag.clone(), needle.clone());
                        let count = counters.needle_turns.entry(key).or_insert(0);
                        present.insert(needle.clone(), *count);
                        *count += 1;
                    }
                }
            }
            (turn, present)
        };
        self.find_response(request, turn, &needle_turns)
    }

    fn vision_capable(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        &self.name
    }
}

// ---------------------------------------------------------------------------
// Recording wrapper
// ---------------------------------------------------------------------------

/// Captures every successful completion as an exact-hash script entry, so
/// replaying the file through a [`ScriptedBackend`] reproduces the session.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<std::fs::File>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<RecordingBackend<B>, ScriptError> {
        let file = std::fs::File::create(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(RecordingBackend {
            inner,
            sink: Mutex::new(file),
        })
    }

    fn record(&self, request: &CompletionRequest, response: &str) -> Result<(), BackendError> {
        let entry = ScriptEntry {
            matcher: Matcher::Hash {
                sha256: request.digest_hex(),
            },
            response: response.to_string(),
            tag: Some(request.backend_tag.clone()),
        };
        let line = serde_json::to_string(&entry).expect("script entries serialize");
        let mut sink = self.sink.lock().unwrap();
        writeln!(sink, "{line}").map_err(|e| BackendError::Recording {
            reason: e.to_string(),
        })
    }
}

#[async_trait]
impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request).await?;
        self.record(request, &response)?;
        Ok(response)
    }

    async fn complete_vision(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.complete_vision(request).await?;
        self.record(request, &response)?;
        Ok(response)
    }

    fn vision_capable(&self) -> bool {
        self.inner.vision_capable()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completion client
// ---------------------------------------------------------------------------

pub const BACKEND_URL_ENV: &str = "COGOS_BACKEND_URL";
pub const BACKEND_KEY_ENV: &str = "COGOS_BACKEND_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full endpoint URL. Falls back to `COGOS_BACKEND_URL`.
    #[serde(default)]
    pub url: Option<String>,
    pub model: String,
    /// Bearer token. Falls back to `COGOS_BACKEND_KEY`.
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub vision: bool,
    /// Hard cap on calls per backend instance; `None` = unlimited.
    #[serde(default)]
    pub call_budget: Option<u32>,
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_base_ms() -> u64 {
    250
}

fn default_timeout_ms() -> u64 {
    60_000
}

pub struct RemoteBackend {
    config: RemoteConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::Client,
    calls: AtomicU32,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<RemoteBackend, BackendError> {
        let url = config
            .url
            .clone()
            .or_else(|| std::env::var(BACKEND_URL_ENV).ok())
            .ok_or_else(|| BackendError::Remote {
                reason: format!("no endpoint URL (set `url` or {BACKEND_URL_ENV})"),
                status: None,
            })?;
        let api_key = config
            .api_key
            .clone()
            .or_else(|| std::env::var(BACKEND_KEY_ENV).ok());
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Remote {
                reason: e.to_string(),
                status: None,
            })?;
        Ok(RemoteBackend {
            config,
            url,
            api_key,
            client,
            calls: AtomicU32::new(0),
        })
    }

    fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let content = match &request.image {
            None => serde_json::json!(request.prompt),
            Some(image) => {
                let b64 = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
                serde_json::json!([
                    { "type": "text", "text": request.prompt },
                    { "type": "image_url",
                      "image_url": { "url": format!("data:{};base64,{}", image.media_type, b64) } },
                ])
            }
        };
        serde_json::json!({
            "model": self.config.model,
            "messages": [ { "role": "user", "content": content } ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    async fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, BackendError)> {
        let mut builder = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| {
            (
                true,
                BackendError::Remote {
                    reason: format!("transport: {e}"),
                    status: None,
                },
            )
        })?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok());
            let mut err = BackendError::Remote {
                reason: format!("status {status}"),
                status: Some(status.as_u16()),
            };
            if let (Some(secs), BackendError::Remote { reason, .. }) = (retry_after, &mut err) {
                reason.push_str(&format!(" (retry-after {secs}s)"));
            }
            return Err((retryable, err));
        }
        let value: serde_json::Value = response.json().await.map_err(|e| {
            (
                false,
                BackendError::Remote {
                    reason: format!("invalid response body: {e}"),
                    status: None,
                },
            )
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or((
                false,
                BackendError::Remote {
                    reason: "response has no choices[0].message.content".to_string(),
                    status: None,
                },
            ))
    }
}

#[async_trait]
impl CompletionBackend for RemoteBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if let Some(budget) = self.config.call_budget {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= budget {
                return Err(BackendError::BudgetExceeded { budget });
            }
        }
        let body = self.request_body(request);
        let mut last_err = None;
        // Total attempts are bounded by 1 + max_retries.
        for attempt in 0..=self.config.max_retries {
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    last_err = Some(err);
                    if !retryable || attempt == self.config.max_retries {
                        break;
                    }
                    let backoff = self.config.retry_base_ms.saturating_mul(1 << attempt.min(8));
                    tokio::time::sleep(Duration::from_millis(backoff)).await;
                }
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }

    fn vision_capable(&self) -> bool {
        self.config.vision
    }

    fn name(&self) -> &str {
        &self.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, tag: &str) -> CompletionRequest {
        CompletionRequest::text(prompt, tag)
    }

    #[tokio::test]
    async fn turn_script_replies_in_order_then_misses() {
        let backend = ScriptedBackend::from_turns("t", ["SAY(\"hi\")", "FINISH"]);
        assert_eq!(backend.complete(&req("a", "r")).await.unwrap(), "SAY(\"hi\")");
        assert_eq!(backend.complete(&req("b", "r")).await.unwrap(), "FINISH");
        let err = backend.complete(&req("c", "r")).await.unwrap_err();
        match err {
            BackendError::ScriptMiss { tag, turn, digest } => {
                assert_eq!(tag, "r");
                assert_eq!(turn, 2);
                assert_eq!(digest.len(), 64);
            }
            other => panic!("expected ScriptMiss, got {other}"),
        }
    }

    #[tokio::test]
    async fn turn_counters_are_scoped_per_tag() {
        let backend = ScriptedBackend::new(
            "t",
            vec![
                ScriptEntry {
                    matcher: Matcher::Turn { index: 0 },
                    response: "for dog".to_string(),
                    tag: Some("dog/behavior".to_string()),
                },
                ScriptEntry {
                    matcher: Matcher::Turn { index: 0 },
                    response: "for arm".to_string(),
                    tag: Some("arm/behavior".to_string()),
                },
            ],
        )
        .unwrap();
        assert_eq!(
            backend.complete(&req("x", "arm/behavior")).await.unwrap(),
            "for arm"
        );
        assert_eq!(
            backend.complete(&req("x", "dog/behavior")).await.unwrap(),
            "for dog"
        );
    }

    #[tokio::test]
    async fn empty_script_always_misses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let backend = ScriptedBackend::load(&path).unwrap();
        assert!(matches!(
            backend.complete(&req("anything", "r")).await,
            Err(BackendError::ScriptMiss { .. })
        ));
    }

    #[test]
    fn duplicate_hash_entries_are_ambiguous_at_load() {
        let entry = |resp: &str| ScriptEntry {
            matcher: Matcher::Hash {
                sha256: "ab".repeat(32),
            },
            response: resp.to_string(),
            tag: None,
        };
        let err = ScriptedBackend::new("t", vec![entry("a"), entry("b")]).unwrap_err();
        assert!(matches!(err, ScriptError::AmbiguousMatchers { .. }));
    }

    #[tokio::test]
    async fn nested_substring_needles_are_ambiguous_at_load() {
        let sub = |needle: &str| ScriptEntry {
            matcher: Matcher::Substring {
                needle: needle.to_string(),
            },
            response: "r".to_string(),
            tag: None,
        };
        let err = ScriptedBackend::new("t", vec![sub("red can"), sub("can")]).unwrap_err();
        assert!(matches!(err, ScriptError::AmbiguousMatchers { .. }));
        // Disjoint needles are fine statically...
        let backend = ScriptedBackend::new("t", vec![sub("red"), sub("blue")]).unwrap();
        // ...but a request matching both is reported, not guessed at.
        let err = backend.complete(&req("red and blue", "r")).await.unwrap_err();
        assert!(matches!(err, BackendError::AmbiguousMatch { .. }));
    }

    #[tokio::test]
    async fn hash_beats_turn_beats_substring() {
        let request = req("please DESCRIBE the table", "r");
        let backend = ScriptedBackend::new(
            "t",
            vec![
                ScriptEntry {
                    matcher: Matcher::Substring {
                        needle: "DESCRIBE".to_string(),
                    },
                    response: "sub".to_string(),
                    tag: None,
                },
                ScriptEntry {
                    matcher: Matcher::Turn { index: 0 },
                    response: "turn".to_string(),
                    tag: None,
                },
                ScriptEntry {
                    matcher: Matcher::Hash {
                        sha256: request.digest_hex(),
                    },
                    response: "hash".to_string(),
                    tag: None,
                },
            ],
        )
        .unwrap();
        assert_eq!(backend.complete(&request).await.unwrap(), "hash");
        // Turn 1: the hash and turn-0 entries no longer match.
        assert_eq!(
            backend.complete(&req("now DESCRIBE the shelf", "r")).await.unwrap(),
            "sub"
        );
    }

    #[tokio::test]
    async fn vision_entries_key_on_prompt_and_image_digest() {
        let image = ImagePayload {
            bytes: vec![1, 2, 3, 4],
            media_type: "image/png".to_string(),
        };
        let request = req("what is on the table?", "r").with_image(image.clone());
        let backend = ScriptedBackend::new(
            "t",
            vec![ScriptEntry {
                matcher: Matcher::Hash {
                    sha256: request.digest_hex(),
                },
                response: "a red can".to_string(),
                tag: None,
            }],
        )
        .unwrap();
        assert_eq!(
            backend.complete_vision(&request).await.unwrap(),
            "a red can"
        );
        // Same prompt, different image: miss.
        let other = req("what is on the table?", "r").with_image(ImagePayload {
            bytes: vec![9, 9],
            media_type: "image/png".to_string(),
        });
        assert!(matches!(
            backend.complete_vision(&other).await,
            Err(BackendError::ScriptMiss { .. })
        ));
    }

    #[tokio::test]
    async fn substring_turn_advances_per_needle() {
        let entry = |needle: &str, index: u64, response: &str| ScriptEntry {
            matcher: Matcher::SubstringTurn {
                needle: needle.to_string(),
                index,
            },
            response: response.to_string(),
            tag: None,
        };
        let backend = ScriptedBackend::new(
            "suite",
            vec![
                entry("bring the can", 0, "GO_TO(kitchen)"),
                entry("bring the can", 1, "FINISH"),
                entry("dance now", 0, "DANCE"),
                entry("dance now", 1, "FINISH"),
            ],
        )
        .unwrap();
        // Two interleaved task sequences, each advancing independently.
        assert_eq!(
            backend.complete(&req("task: bring the can", "r")).await.unwrap(),
            "GO_TO(kitchen)"
        );
        assert_eq!(backend.complete(&req("task: dance now", "r")).await.unwrap(), "DANCE");
        assert_eq!(
            backend.complete(&req("task: bring the can (history...)", "r")).await.unwrap(),
            "FINISH"
        );
        assert_eq!(backend.complete(&req("task: dance now ...", "r")).await.unwrap(), "FINISH");
        // Exhausted sequence: miss.
        assert!(matches!(
            backend.complete(&req("task: dance now ...", "r")).await,
            Err(BackendError::ScriptMiss { .. })
        ));
        // Same (needle, index) twice is ambiguous at load.
        assert!(matches!(
            ScriptedBackend::new("x", vec![entry("a b", 0, "1"), entry("a", 0, "2")]),
            Err(ScriptError::AmbiguousMatchers { .. })
        ));
    }

    #[tokio::test]
    async fn recording_then_replaying_reproduces_responses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recorded.jsonl");
        let requests = [req("first prompt", "dog/behavior"), req("second prompt", "dog/behavior")];
        {
            let recorder = RecordingBackend::create(
                ScriptedBackend::from_turns("inner", ["one", "two"]),
                &path,
            )
            .unwrap();
            assert_eq!(recorder.complete(&requests[0]).await.unwrap(), "one");
            assert_eq!(recorder.complete(&requests[1]).await.unwrap(), "two");
        }
        let replay = ScriptedBackend::load(&path).unwrap();
        assert_eq!(replay.complete(&requests[0]).await.unwrap(), "one");
        assert_eq!(replay.complete(&requests[1]).await.unwrap(), "two");
    }

    #[tokio::test]
    async fn remote_without_vision_rejects_image_requests() {
        let backend = RemoteBackend::new(RemoteConfig {
            url: Some("http://127.0.0.1:1/unused".to_string()),
            model: "m".to_string(),
            api_key: None,
            max_retries: 0,
            retry_base_ms: 1,
            timeout_ms: 100,
            vision: false,
            call_budget: None,
        })
        .unwrap();
        let request = req("look", "r").with_image(ImagePayload {
            bytes: vec![0],
            media_type: "image/png".to_string(),
        });
        assert!(matches!(
            backend.complete_vision(&request).await,
            Err(BackendError::NotVisionCapable { .. })
        ));
    }
}
