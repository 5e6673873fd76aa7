//! Behavior-step grammar: the typed unit every module exchanges.
//!
//! A step is one line of model output. The grammar is line-based
//! `NAME(arg, ...)` with double-quoted strings and backslash escapes,
//! except `THOUGHT`, which takes free text after a colon. The canonical
//! form always quotes arguments, so `render` output is stable and
//! `parse(render(s)) == s` for every valid step.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::RobotProfile;

/// Closed set of step kinds. Profiles restrict this set, never extend it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepKind {
    Say,
    Listen,
    GoTo,
    Sit,
    Up,
    Turn,
    Follow,
    Tilt,
    Dance,
    GoUser,
    Take,
    PutIn,
    GiveToUser,
    DescribeView,
    QuestionView,
    SearchView,
    Thought,
    Finish,
}

/// Which module family handles a kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepCategory {
    Physical,
    Perception,
    Meta,
}

/// All kinds, in declaration order (physical, perception, meta).
pub const ALL_KINDS: [StepKind; 18] = [
    StepKind::Say,
    StepKind::Listen,
    StepKind::GoTo,
    StepKind::Sit,
    StepKind::Up,
    StepKind::Turn,
    StepKind::Follow,
    StepKind::Tilt,
    StepKind::Dance,
    StepKind::GoUser,
    StepKind::Take,
    StepKind::PutIn,
    StepKind::GiveToUser,
    StepKind::DescribeView,
    StepKind::QuestionView,
    StepKind::SearchView,
    StepKind::Thought,
    StepKind::Finish,
];

/// The 13 kinds executed on a robot body.
pub const PHYSICAL_KINDS: [StepKind; 13] = [
    StepKind::Say,
    StepKind::Listen,
    StepKind::GoTo,
    StepKind::Sit,
    StepKind::Up,
    StepKind::Turn,
    StepKind::Follow,
    StepKind::Tilt,
    StepKind::Dance,
    StepKind::GoUser,
    StepKind::Take,
    StepKind::PutIn,
    StepKind::GiveToUser,
];

/// The 3 camera-backed kinds.
pub const PERCEPTION_KINDS: [StepKind; 3] = [
    StepKind::DescribeView,
    StepKind::QuestionView,
    StepKind::SearchView,
];

/// Kinds that move the robot body through space. A static platform
/// (e.g. a bench-mounted arm) excludes exactly these.
pub const LOCOMOTION_KINDS: [StepKind; 6] = [
    StepKind::GoTo,
    StepKind::Sit,
    StepKind::Up,
    StepKind::Follow,
    StepKind::Dance,
    StepKind::GoUser,
];

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Say => "SAY",
            StepKind::Listen => "LISTEN",
            StepKind::GoTo => "GO_TO",
            StepKind::Sit => "SIT",
            StepKind::Up => "UP",
            StepKind::Turn => "TURN",
            StepKind::Follow => "FOLLOW",
            StepKind::Tilt => "TILT",
            StepKind::Dance => "DANCE",
            StepKind::GoUser => "GO_USER",
            StepKind::Take => "TAKE",
            StepKind::PutIn => "PUT_IN",
            StepKind::GiveToUser => "GIVE_TO_USER",
            StepKind::DescribeView => "DESCRIBE_VIEW",
            StepKind::QuestionView => "QUESTION_VIEW",
            StepKind::SearchView => "SEARCH_VIEW",
            StepKind::Thought => "THOUGHT",
            StepKind::Finish => "FINISH",
        }
    }

    /// Case-sensitive lookup; anything else is outside the closed set.
    pub fn from_name(name: &str) -> Option<StepKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }

    /// Declared argument count per kind.
    pub fn arity(self) -> usize {
        match self {
            StepKind::Say
            | StepKind::GoTo
            | StepKind::Turn
            | StepKind::Follow
            | StepKind::Tilt
            | StepKind::Take
            | StepKind::DescribeView
            | StepKind::QuestionView
            | StepKind::SearchView
            | StepKind::Thought => 1,
            StepKind::PutIn => 2,
            StepKind::Listen
            | StepKind::Sit
            | StepKind::Up
            | StepKind::Dance
            | StepKind::GoUser
            | StepKind::GiveToUser
            | StepKind::Finish => 0,
        }
    }

    pub fn category(self) -> StepCategory {
        match self {
            StepKind::Thought | StepKind::Finish => StepCategory::Meta,
            StepKind::DescribeView | StepKind::QuestionView | StepKind::SearchView => {
                StepCategory::Perception
            }
            _ => StepCategory::Physical,
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for StepKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for StepKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        StepKind::from_name(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown step kind `{s}`")))
    }
}

/// One typed step of the internal monologue.
///
/// Equality and hashing cover `kind` and `args` only; `raw` records the
/// source line the step was parsed from (or the canonical form for
/// programmatically built steps) and is provenance, not identity.
#[derive(Debug, Clone)]
pub struct BehaviorStep {
    kind: StepKind,
    args: Vec<String>,
    raw: String,
}

impl PartialEq for BehaviorStep {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.args == other.args
    }
}

impl Eq for BehaviorStep {}

impl std::hash::Hash for BehaviorStep {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.args.hash(state);
    }
}

impl BehaviorStep {
    /// Builds a step, enforcing the kind's arity and the THOUGHT text rules.
    pub fn new<I, S>(kind: StepKind, args: I) -> Result<BehaviorStep, StepParseError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let args: Vec<String> = args.into_iter().map(Into::into).collect();
        if args.len() != kind.arity() {
            return Err(StepParseError::ArityMismatch {
                kind: kind.name().to_string(),
                expected: kind.arity(),
                got: args.len(),
            });
        }
        if kind == StepKind::Thought {
            let text = &args[0];
            if text.trim() != text || text.is_empty() {
                return Err(StepParseError::MalformedSyntax {
                    reason: "THOUGHT text must be non-empty and trimmed".to_string(),
                });
            }
            if text.contains('\n') || text.contains('\r') {
                return Err(StepParseError::MalformedSyntax {
                    reason: "THOUGHT text may not span lines".to_string(),
                });
            }
        }
        let mut step = BehaviorStep {
            kind,
            args,
            raw: String::new(),
        };
        step.raw = step.canonical();
        Ok(step)
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn args(&self) -> &[String] {
        &self.args
    }

    pub fn arg(&self, index: usize) -> &str {
        &self.args[index]
    }

    /// Original source line (trimmed), as handed to the parser.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Canonical text form: `KIND` for arity 0, `KIND("a", "b")` otherwise,
    /// `THOUGHT: text` for thoughts. Arguments are always quoted.
    pub fn canonical(&self) -> String {
        render_step(self)
    }
}

impl fmt::Display for BehaviorStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Parse failures. These are fed back into the behavior loop as step
/// results, so the messages are written for a model to read.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepParseError {
    #[error("unknown step kind `{name}`")]
    UnknownKind { name: String },
    #[error("{kind} takes {expected} argument(s), got {got}")]
    ArityMismatch {
        kind: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed step: {reason}")]
    MalformedSyntax { reason: String },
}

fn malformed(reason: impl Into<String>) -> StepParseError {
    StepParseError::MalformedSyntax {
        reason: reason.into(),
    }
}

/// Parses one line of model output into a step.
///
/// Whitespace around delimiters is ignored. Quoted arguments may contain
/// commas, parentheses, and escaped quotes; bare arguments run to the next
/// comma or closing parenthesis. Trailing text after a well-formed step is
/// an error rather than being ignored.
pub fn parse_step(line: &str) -> Result<BehaviorStep, StepParseError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(malformed("empty line"));
    }

    let name_end = line
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(line.len());
    let name = &line[..name_end];
    if name.is_empty() {
        return Err(malformed(format!(
            "expected a step name, found `{}`",
            first_char(line)
        )));
    }
    let kind = StepKind::from_name(name).ok_or_else(|| StepParseError::UnknownKind {
        name: name.to_string(),
    })?;
    let rest = line[name_end..].trim_start();

    if kind == StepKind::Thought {
        let Some(text) = rest.strip_prefix(':') else {
            if rest.starts_with('(') {
                return Err(malformed("THOUGHT uses `THOUGHT: text`, not parentheses"));
            }
            return Err(StepParseError::ArityMismatch {
                kind: "THOUGHT".to_string(),
                expected: 1,
                got: 0,
            });
        };
        let text = text.trim();
        if text.is_empty() {
            return Err(StepParseError::ArityMismatch {
                kind: "THOUGHT".to_string(),
                expected: 1,
                got: 0,
            });
        }
        return Ok(BehaviorStep {
            kind,
            args: vec![text.to_string()],
            raw: line.to_string(),
        });
    }

    let args = if rest.is_empty() {
        Vec::new()
    } else if let Some(inner) = rest.strip_prefix('(') {
        parse_arg_list(inner)?
    } else {
        return Err(malformed(format!(
            "unexpected text after {name}: `{rest}`"
        )));
    };

    if args.len() != kind.arity() {
        return Err(StepParseError::ArityMismatch {
            kind: name.to_string(),
            expected: kind.arity(),
            got: args.len(),
        });
    }

    Ok(BehaviorStep {
        kind,
        args,
        raw: line.to_string(),
    })
}

fn first_char(s: &str) -> String {
    s.chars().next().map(|c| c.to_string()).unwrap_or_default()
}

/// Parses `a, "b, c"(...)` up to and including the closing parenthesis,
/// then requires end of line.
fn parse_arg_list(mut rest: &str) -> Result<Vec<String>, StepParseError> {
    let mut args = Vec::new();
    rest = rest.trim_start();

    // Empty argument list: `KIND()`.
    if let Some(after) = rest.strip_prefix(')') {
        require_line_end(after)?;
        return Ok(args);
    }

    loop {
        rest = rest.trim_start();
        let (arg, after) = if rest.starts_with('"') {
            parse_quoted(&rest[1..])?
        } else {
            parse_bare(rest)?
        };
        args.push(arg);
        rest = after.trim_start();
        if let Some(after) = rest.strip_prefix(',') {
            rest = after;
            continue;
        }
        if let Some(after) = rest.strip_prefix(')') {
            require_line_end(after)?;
            return Ok(args);
        }
        if rest.is_empty() {
            return Err(malformed("unclosed parenthesis"));
        }
        return Err(malformed(format!(
            "expected `,` or `)` after argument, found `{}`",
            first_char(rest)
        )));
    }
}

fn require_line_end(rest: &str) -> Result<(), StepParseError> {
    if rest.trim().is_empty() {
        Ok(())
    } else {
        Err(malformed(format!(
            "trailing text after step: `{}`",
            rest.trim()
        )))
    }
}

/// Double-quoted argument body (opening quote already consumed).
fn parse_quoted(rest: &str) -> Result<(String, &str), StepParseError> {
    let mut value = String::new();
    let mut chars = rest.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((value, &rest[i + 1..])),
            '\\' => match chars.next() {
                Some((_, '"')) => value.push('"'),
                Some((_, '\\')) => value.push('\\'),
                Some((_, 'n')) => value.push('\n'),
                Some((_, 't')) => value.push('\t'),
                Some((_, other)) => {
                    return Err(malformed(format!("invalid escape `\\{other}`")));
                }
                None => return Err(malformed("dangling backslash in quoted argument")),
            },
            _ => value.push(c),
        }
    }
    Err(malformed("unbalanced quote"))
}

/// Bare argument: runs to the next top-level `,` or `)`. May contain
/// internal spaces but no quotes, parentheses, or backslashes.
fn parse_bare(rest: &str) -> Result<(String, &str), StepParseError> {
    let end = rest
        .find(|c| c == ',' || c == ')')
        .ok_or_else(|| malformed("unclosed parenthesis"))?;
    let token = &rest[..end];
    if let Some(bad) = token.chars().find(|&c| c == '"' || c == '(' || c == '\\') {
        return Err(malformed(format!(
            "`{bad}` not allowed in a bare argument; quote the argument"
        )));
    }
    let token = token.trim();
    if token.is_empty() {
        return Err(malformed("empty argument"));
    }
    Ok((token.to_string(), &rest[end..]))
}

/// Emits the canonical text form of a step.
pub fn render_step(step: &BehaviorStep) -> String {
    match step.kind {
        StepKind::Thought => format!("THOUGHT: {}", step.args[0]),
        _ if step.args.is_empty() => step.kind.name().to_string(),
        _ => {
            let quoted: Vec<String> = step.args.iter().map(|a| quote_arg(a)).collect();
            format!("{}({})", step.kind.name(), quoted.join(", "))
        }
    }
}

fn quote_arg(arg: &str) -> String {
    let mut out = String::with_capacity(arg.len() + 2);
    out.push('"');
    for c in arg.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// A step a platform cannot perform.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action {kind} is not available on platform `{robot_id}`")]
pub struct StepViolation {
    pub kind: StepKind,
    pub robot_id: String,
}

/// Checks a step against a platform profile: meta and perception kinds are
/// always valid, physical kinds must be in the profile's action list.
pub fn validate_step(step: &BehaviorStep, profile: &RobotProfile) -> Result<(), StepViolation> {
    match step.kind.category() {
        StepCategory::Meta | StepCategory::Perception => Ok(()),
        StepCategory::Physical => {
            if profile.actions.contains(&step.kind) {
                Ok(())
            } else {
                Err(StepViolation {
                    kind: step.kind,
                    robot_id: profile.robot_id.clone(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::RobotProfile;
    use proptest::prelude::*;

    fn step(kind: StepKind, args: &[&str]) -> BehaviorStep {
        BehaviorStep::new(kind, args.iter().map(|s| s.to_string())).unwrap()
    }

    #[test]
    fn parses_single_bare_argument() {
        let s = parse_step("GO_TO(kitchen)").unwrap();
        assert_eq!(s.kind(), StepKind::GoTo);
        assert_eq!(s.args(), ["kitchen"]);
        assert_eq!(s.raw(), "GO_TO(kitchen)");
    }

    #[test]
    fn parses_zero_arity_bare_and_with_parens() {
        assert_eq!(parse_step("FINISH").unwrap(), step(StepKind::Finish, &[]));
        assert_eq!(parse_step("FINISH()").unwrap(), step(StepKind::Finish, &[]));
        assert_eq!(parse_step("FINISH( )").unwrap(), step(StepKind::Finish, &[]));
    }

    #[test]
    fn parses_thought_colon_form() {
        let s = parse_step("THOUGHT: the juice is probably on the table").unwrap();
        assert_eq!(s.kind(), StepKind::Thought);
        assert_eq!(s.args(), ["the juice is probably on the table"]);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(
            parse_step("FLY(home)"),
            Err(StepParseError::UnknownKind { name }) if name == "FLY"
        ));
        // Case-sensitive: lowercase names are outside the closed set.
        assert!(matches!(
            parse_step("finish"),
            Err(StepParseError::UnknownKind { .. })
        ));
    }

    #[test]
    fn arity_is_enforced() {
        assert!(matches!(
            parse_step("FINISH(now)"),
            Err(StepParseError::ArityMismatch { expected: 0, got: 1, .. })
        ));
        assert!(matches!(
            parse_step("PUT_IN(can)"),
            Err(StepParseError::ArityMismatch { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            parse_step("SAY()"),
            Err(StepParseError::ArityMismatch { expected: 1, got: 0, .. })
        ));
        assert!(matches!(
            parse_step("THOUGHT:"),
            Err(StepParseError::ArityMismatch { .. })
        ));
        assert!(matches!(
            parse_step("THOUGHT"),
            Err(StepParseError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn whitespace_around_delimiters_is_ignored() {
        assert_eq!(
            parse_step("  GO_TO ( kitchen )  ").unwrap(),
            step(StepKind::GoTo, &["kitchen"])
        );
        assert_eq!(
            parse_step(r#"PUT_IN( "juice can" ,  basket )"#).unwrap(),
            step(StepKind::PutIn, &["juice can", "basket"])
        );
    }

    #[test]
    fn quoted_arguments_may_contain_delimiters() {
        let s = parse_step(r#"SEARCH_VIEW("a red, shiny (metal) can")"#).unwrap();
        assert_eq!(s.args(), ["a red, shiny (metal) can"]);
        let s = parse_step(r#"SAY("she said \"hi\" and left\\")"#).unwrap();
        assert_eq!(s.args(), [r#"she said "hi" and left\"#]);
    }

    #[test]
    fn bare_arguments_may_contain_spaces() {
        let s = parse_step("SEARCH_VIEW(orange juice can)").unwrap();
        assert_eq!(s.args(), ["orange juice can"]);
    }

    #[test]
    fn malformed_inputs_are_typed_errors() {
        for bad in [
            "",
            "SAY(\"unterminated",
            "SAY(a\"b)",
            "SAY(vec(1))",
            "GO_TO(kitchen) extra",
            "FINISH now",
            "SAY(\"x\" y)",
            "PUT_IN(a,,b)",
            "SAY(",
            "SAY(a",
            "SAY(\"bad \\q escape\")",
            "THOUGHT(parens)",
            "GO_TO: colon",
            "(hello)",
        ] {
            assert!(
                matches!(parse_step(bad), Err(StepParseError::MalformedSyntax { .. })),
                "expected MalformedSyntax for {bad:?}, got {:?}",
                parse_step(bad)
            );
        }
    }

    #[test]
    fn render_matches_canonical_forms() {
        assert_eq!(step(StepKind::Finish, &[]).canonical(), "FINISH");
        assert_eq!(
            step(StepKind::PutIn, &["orange juice can", "basket"]).canonical(),
            r#"PUT_IN("orange juice can", "basket")"#
        );
        assert_eq!(
            step(StepKind::Thought, &["check the table"]).canonical(),
            "THOUGHT: check the table"
        );
        assert_eq!(step(StepKind::Say, &["hello"]).canonical(), r#"SAY("hello")"#);
    }

    #[test]
    fn closed_set_is_complete_and_exclusive() {
        for kind in ALL_KINDS {
            let args: Vec<String> = (0..kind.arity()).map(|i| format!("a{i}")).collect();
            let s = BehaviorStep::new(kind, args).unwrap();
            assert_eq!(parse_step(&s.canonical()).unwrap(), s);
        }
        assert_eq!(PHYSICAL_KINDS.len(), 13);
        assert_eq!(PERCEPTION_KINDS.len(), 3);
        for name in ["JUMP", "go_to", "Finish", "SAY_", "_SAY"] {
            assert!(parse_step(&format!("{name}(x)")).is_err(), "{name}");
        }
    }

    #[test]
    fn validate_against_profiles() {
        let quadruped = RobotProfile::quadruped("dog");
        let arm = RobotProfile::arm("arm");
        let go = step(StepKind::GoTo, &["table"]);
        assert!(validate_step(&go, &quadruped).is_ok());
        let violation = validate_step(&go, &arm).unwrap_err();
        assert_eq!(violation.kind, StepKind::GoTo);
        assert_eq!(violation.robot_id, "arm");
        // Meta and perception kinds are valid on every platform.
        assert!(validate_step(&step(StepKind::Finish, &[]), &arm).is_ok());
        assert!(validate_step(&step(StepKind::QuestionView, &["is it red?"]), &arm).is_ok());
        assert!(validate_step(&step(StepKind::Take, &["obj:1"]), &arm).is_ok());
    }

    prop_compose! {
        fn arb_thought_text()(s in "[a-zA-Z0-9 ,.()\"'!?-]{1,60}") -> String {
            let t = s.trim().to_string();
            if t.is_empty() { "x".to_string() } else { t }
        }
    }

    fn arb_step() -> impl Strategy<Value = BehaviorStep> {
        (0..ALL_KINDS.len()).prop_flat_map(|i| {
            let kind = ALL_KINDS[i];
            if kind == StepKind::Thought {
                arb_thought_text()
                    .prop_map(move |t| BehaviorStep::new(kind, [t]).unwrap())
                    .boxed()
            } else {
                proptest::collection::vec(".{0,40}", kind.arity())
                    .prop_map(move |args| BehaviorStep::new(kind, args).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_holds_for_all_valid_steps(s in arb_step()) {
            let rendered = s.canonical();
            let reparsed = parse_step(&rendered).unwrap();
            prop_assert_eq!(&reparsed, &s);
        }

        #[test]
        fn canonicalization_is_idempotent(line in ".{0,80}") {
            if let Ok(step) = parse_step(&line) {
                let once = render_step(&step);
                let twice = render_step(&parse_step(&once).unwrap());
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn parser_is_total(line in any::<String>()) {
            // Must return a step or a typed error, never panic.
            let _ = parse_step(&line);
        }
    }
}
