//! Handlers for the three camera-backed kinds: free-form view description,
//! concise object question answering, and object localization.
//!
//! In simulation the handlers are answered by a ground-truth oracle over a
//! world snapshot. The oracle deliberately understands only a closed
//! question grammar and says "unknown" for anything else, so the test
//! double is never smarter than a real vision model would be. In real mode
//! the handlers forward to a vision backend and parse its output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest, ImagePayload};
use crate::world::{Snapshot, VisibleObject};

/// Synthetic camera geometry used for simulated localization.
pub const SIM_IMAGE_WIDTH: u32 = 640;
pub const SIM_IMAGE_HEIGHT: u32 = 480;

/// Pixel box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl BoundingBox {
    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max <= self.image_width
            && self.y_max <= self.image_height
    }
}

/// A found object: a task-scoped reference usable by later steps
/// (`TAKE`, `GO_TO`), its label, and where it sits in the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedObject {
    pub object_ref: String,
    pub label: String,
    pub bounds: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("no visible object matches `{target}`")]
    NotFound { target: String },
}

/// Words that carry no matching signal in queries.
const STOPWORDS: [&str; 30] = [
    "a", "an", "the", "is", "are", "there", "of", "in", "on", "at", "to", "and", "or", "it",
    "its", "this", "that", "what", "which", "how", "many", "much", "object", "objects", "thing",
    "things", "you", "see", "do", "here",
];

/// Lowercase and strip a plural-ish trailing `s` so "cans" matches "can".
fn normalize_token(token: &str) -> String {
    let lower = token.to_lowercase();
    if lower.len() > 3 && lower.ends_with('s') {
        lower[..lower.len() - 1].to_string()
    } else {
        lower
    }
}

fn query_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !STOPWORDS.contains(&t.to_lowercase().as_str()))
        .map(normalize_token)
        .collect()
}

/// Tokens an object can be matched on: its label plus attribute values.
/// The presentation-only `placement` attribute is excluded so place names
/// do not read as objects.
fn object_tokens(object: &VisibleObject) -> Vec<String> {
    let mut tokens = Vec::new();
    tokens.extend(
        object
            .label
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(normalize_token),
    );
    for (key, value) in &object.attributes {
        if key == "placement" {
            continue;
        }
        tokens.extend(
            value
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(normalize_token),
        );
    }
    tokens
}

/// An object matches a description iff every description token appears
/// among the object's tokens.
fn matches_all(description: &[String], object: &VisibleObject) -> bool {
    let tokens = object_tokens(object);
    description.iter().all(|t| tokens.contains(t))
}

fn matching_objects<'a>(description: &[String], snapshot: &'a Snapshot) -> Vec<&'a VisibleObject> {
    snapshot
        .objects
        .iter()
        .filter(|o| matches_all(description, o))
        .collect()
}

// ---------------------------------------------------------------------------
// Simulation oracle
// ---------------------------------------------------------------------------

fn article(label: &str) -> &'static str {
    match label.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a') | Some('e') | Some('i') | Some('o') | Some('u') => "an",
        _ => "a",
    }
}

/// Deterministic free-form description of the visible scene, composed from
/// objects sorted by id. The question is not interpreted: the oracle
/// describes what is actually there.
pub fn describe_view_sim(_question: &str, snapshot: &Snapshot) -> String {
    let mut out = String::new();
    if snapshot.objects.is_empty() {
        out.push_str("You see nothing notable.");
    } else {
        let phrases: Vec<String> = snapshot
            .objects
            .iter()
            .map(|o| {
                let placement = match (&o.held_by, o.attributes.get("placement")) {
                    (Some(carrier), _) => format!("carried by {carrier}"),
                    (None, Some(p)) => p.clone(),
                    (None, None) => format!("in the {}", snapshot.place),
                };
                format!("{} {} {}", article(&o.label), o.label, placement)
            })
            .collect();
        out.push_str(&format!("You see: {}.", phrases.join("; ")));
    }
    if !snapshot.users.is_empty() {
        out.push_str(&format!(" Also here: {}.", snapshot.users.join(", ")));
    }
    out
}

/// Concise answers over a closed question grammar:
/// presence (`is there ...?`), count (`how many ...?`), and attribute
/// selection (`which ... is ...?`). Anything else is "unknown" — the
/// oracle never guesses.
pub fn question_view_sim(question: &str, snapshot: &Snapshot) -> String {
    let trimmed = question.trim().trim_end_matches(['?', '.', '!']).trim();
    let lower = trimmed.to_lowercase();

    if let Some(rest) = lower
        .strip_prefix("is there ")
        .or_else(|| lower.strip_prefix("are there "))
    {
        let description = query_tokens(rest);
        if description.is_empty() {
            return "unknown".to_string();
        }
        return if matching_objects(&description, snapshot).is_empty() {
            "no".to_string()
        } else {
            "yes".to_string()
        };
    }

    if let Some(rest) = lower.strip_prefix("how many ") {
        let description = query_tokens(rest);
        if description.is_empty() {
            return "unknown".to_string();
        }
        return matching_objects(&description, snapshot).len().to_string();
    }

    if let Some(rest) = lower.strip_prefix("which ") {
        let description = query_tokens(rest);
        if description.is_empty() {
            return "unknown".to_string();
        }
        return match matching_objects(&description, snapshot).first() {
            Some(object) => object.label.clone(),
            None => "unknown".to_string(),
        };
    }

    "unknown".to_string()
}

/// Best-matching visible object for a name or brief description. Every
/// description token must match; ties resolve to the lowest object id.
pub fn search_view_sim(target: &str, snapshot: &Snapshot) -> Result<LocatedObject, SearchError> {
    let description = query_tokens(target);
    if description.is_empty() {
        return Err(SearchError::NotFound {
            target: target.to_string(),
        });
    }
    let matches = matching_objects(&description, snapshot);
    let Some(object) = matches.first() else {
        return Err(SearchError::NotFound {
            target: target.to_string(),
        });
    };
    let position = snapshot
        .objects
        .iter()
        .position(|o| o.id == object.id)
        .expect("matched object is in the snapshot");
    Ok(LocatedObject {
        object_ref: format!("obj:{}", object.id),
        label: object.label.clone(),
        bounds: sim_box(position),
    })
}

/// Deterministic grid slot for the k-th visible object.
fn sim_box(position: usize) -> BoundingBox {
    let col = (position % 4) as u32;
    let row = ((position / 4) % 4) as u32;
    let x_min = 40 + col * 150;
    let y_min = 40 + row * 100;
    BoundingBox {
        x_min,
        y_min,
        x_max: x_min + 120,
        y_max: y_min + 80,
        image_width: SIM_IMAGE_WIDTH,
        image_height: SIM_IMAGE_HEIGHT,
    }
}

// ---------------------------------------------------------------------------
// Vision-backend mode
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum VisionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("could not parse localization output: {raw}")]
    Unparseable { raw: String },
    #[error("could not read image dimensions: {reason}")]
    BadImage { reason: String },
}

fn vision_request(prompt: String, image: ImagePayload, tag: &str) -> CompletionRequest {
    CompletionRequest::text(prompt, tag).with_image(image)
}

/// Real mode: the vision backend's answer is returned verbatim.
pub async fn describe_view_vision(
    backend: &dyn CompletionBackend,
    question: &str,
    image: ImagePayload,
    tag: &str,
) -> Result<String, VisionError> {
    let request = vision_request(question.to_string(), image, tag);
    Ok(backend.complete_vision(&request).await?)
}

pub async fn question_view_vision(
    backend: &dyn CompletionBackend,
    question: &str,
    image: ImagePayload,
    tag: &str,
) -> Result<String, VisionError> {
    let request = vision_request(question.to_string(), image, tag);
    Ok(backend.complete_vision(&request).await?)
}

/// Real mode localization. The backend is expected to answer with
/// `<box>x_min,y_min,x_max,y_max</box>`; anything else is handed back
/// unparsed so the behavior loop can self-correct.
pub async fn search_view_vision(
    backend: &dyn CompletionBackend,
    target: &str,
    image: ImagePayload,
    tag: &str,
) -> Result<LocatedObject, VisionError> {
    let (width, height) = image_dimensions(&image)?;
    let prompt = format!(
        "Locate this object in the image: {target}. \
         Reply with <box>x_min,y_min,x_max,y_max</box> in pixel coordinates."
    );
    let request = vision_request(prompt, image, tag);
    let raw = backend.complete_vision(&request).await?;
    let bounds = parse_box(&raw, width, height).ok_or(VisionError::Unparseable { raw })?;
    Ok(LocatedObject {
        object_ref: format!(
            "vbox:{},{},{},{}",
            bounds.x_min, bounds.y_min, bounds.x_max, bounds.y_max
        ),
        label: target.to_string(),
        bounds,
    })
}

fn image_dimensions(image: &ImagePayload) -> Result<(u32, u32), VisionError> {
    image::ImageReader::new(std::io::Cursor::new(&image.bytes))
        .with_guessed_format()
        .map_err(|e| VisionError::BadImage {
            reason: e.to_string(),
        })?
        .into_dimensions()
        .map_err(|e| VisionError::BadImage {
            reason: e.to_string(),
        })
}

fn parse_box(raw: &str, image_width: u32, image_height: u32) -> Option<BoundingBox> {
    let start = raw.find("<box>")? + "<box>".len();
    let end = raw[start..].find("</box>")? + start;
    let coords: Vec<u32> = raw[start..end]
        .split(',')
        .map(|c| c.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .ok()?;
    let [x_min, y_min, x_max, y_max] = coords.as_slice() else {
        return None;
    };
    let bounds = BoundingBox {
        x_min: *x_min,
        y_min: *y_min,
        x_max: *x_max,
        y_max: *y_max,
        image_width,
        image_height,
    };
    bounds.is_valid().then_some(bounds)
}

// ---------------------------------------------------------------------------
// Step-level module
// ---------------------------------------------------------------------------

pub const ENV_ANALYSIS_MODULE: &str = "env_analysis";
pub const OBJECT_QA_MODULE: &str = "object_qa";
pub const LOCALIZATION_MODULE: &str = "localization";

use std::sync::Arc;

use crate::step::{BehaviorStep, StepKind};
use crate::transcript::StepResult;
use crate::world::SharedWorld;

pub enum PerceptionMode {
    /// Ground-truth oracle over world snapshots.
    Sim,
    /// Vision backend answering over the location's camera image.
    Vision(Arc<dyn CompletionBackend>),
}

/// Handler for the three perception kinds, dispatched by the behavior loop.
pub struct PerceptionModule {
    mode: PerceptionMode,
}

impl PerceptionModule {
    pub fn sim() -> PerceptionModule {
        PerceptionModule {
            mode: PerceptionMode::Sim,
        }
    }

    pub fn vision(backend: Arc<dyn CompletionBackend>) -> PerceptionModule {
        PerceptionModule {
            mode: PerceptionMode::Vision(backend),
        }
    }

    fn module_for(kind: StepKind) -> &'static str {
        match kind {
            StepKind::DescribeView => ENV_ANALYSIS_MODULE,
            StepKind::QuestionView => OBJECT_QA_MODULE,
            _ => LOCALIZATION_MODULE,
        }
    }

    pub async fn handle(
        &self,
        step: &BehaviorStep,
        world: &SharedWorld,
        robot_id: &str,
    ) -> StepResult {
        let module = Self::module_for(step.kind());
        let argument = step.arg(0);
        match &self.mode {
            PerceptionMode::Sim => {
                let snapshot = {
                    let world = world.lock().await;
                    world.snapshot(robot_id)
                };
                let Some(snapshot) = snapshot else {
                    return StepResult::failure(
                        module,
                        format!("robot `{robot_id}` is not in this world"),
                    );
                };
                match step.kind() {
                    StepKind::DescribeView => {
                        StepResult::success(module, describe_view_sim(argument, &snapshot))
                    }
                    StepKind::QuestionView => {
                        StepResult::success(module, question_view_sim(argument, &snapshot))
                    }
                    _ => match search_view_sim(argument, &snapshot) {
                        Ok(found) => StepResult::success(module, found_payload(&found)),
                        Err(e) => StepResult::failure(module, e.to_string()),
                    },
                }
            }
            PerceptionMode::Vision(backend) => {
                let image = {
                    let world = world.lock().await;
                    world.image_for_robot(robot_id)
                };
                let Some(path) = image else {
                    return StepResult::failure(module, "no camera image at this location");
                };
                let bytes = match std::fs::read(&path) {
                    Ok(bytes) => bytes,
                    Err(e) => {
                        return StepResult::failure(
                            module,
                            format!("camera image unreadable ({}): {e}", path.display()),
                        )
                    }
                };
                let image = ImagePayload {
                    bytes,
                    media_type: media_type_for(&path),
                };
                let tag = format!("{robot_id}/vision");
                let outcome = match step.kind() {
                    StepKind::DescribeView => {
                        describe_view_vision(backend.as_ref(), argument, image, &tag).await
                    }
                    StepKind::QuestionView => {
                        question_view_vision(backend.as_ref(), argument, image, &tag).await
                    }
                    _ => {
                        return match search_view_vision(backend.as_ref(), argument, image, &tag)
                            .await
                        {
                            Ok(found) => StepResult::success(module, found_payload(&found)),
                            Err(e) => StepResult::failure(module, e.to_string()),
                        }
                    }
                };
                match outcome {
                    Ok(text) => StepResult::success(module, text),
                    Err(e) => StepResult::failure(module, e.to_string()),
                }
            }
        }
    }
}

/// How a located object is reported back into the monologue; the reference
/// is what later TAKE/GO_TO steps use.
fn found_payload(found: &LocatedObject) -> String {
    format!(
        "found {} at {} (box {},{},{},{})",
        found.label,
        found.object_ref,
        found.bounds.x_min,
        found.bounds.y_min,
        found.bounds.x_max,
        found.bounds.y_max
    )
}

fn media_type_for(path: &std::path::Path) -> String {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jpg") | Some("jpeg") => "image/jpeg".to_string(),
        _ => "image/png".to_string(),
    }
}
