use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Evidence, Stage, SubGoalPlan, TransitionDecision};
use crate::memory::RolloutSummary;
use crate::sim::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    NoActions,
    NoDecision,
    AmbiguousDecision,
    NoSubgoals,
    EmptySummary,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("{stage:?} response unparseable ({kind:?})")]
pub struct ParseError {
    pub stage: Stage,
    pub kind: ParseErrorKind,
    pub raw: String,
}

impl ParseError {
    fn new(stage: Stage, kind: ParseErrorKind, raw: &str) -> Self {
        Self {
            stage,
            kind,
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    InstructionSemantics,
    VbSttbAnalysis,
    AnchorTraversal,
    Actions,
    Decision,
    Subgoal,
    Summary,
}

fn normalize_key(raw: &str) -> String {
    let mut out = String::new();
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_uppercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn field_of(key: &str) -> Option<Field> {
    let key = normalize_key(key);
    // subgoal keys may carry a number; field order decides, not the number
    let key = match key.trim_end_matches(|c: char| c.is_ascii_digit()).strip_suffix('_') {
        Some(stem) if stem == "SUBGOAL" || stem == "SUB_GOAL" => stem,
        _ => key.as_str(),
    };
    Some(match key {
        "INSTRUCTION_SEMANTICS" => Field::InstructionSemantics,
        "VB_STTB_ANALYSIS" => Field::VbSttbAnalysis,
        "ANCHOR_TRAVERSAL" => Field::AnchorTraversal,
        "ACTIONS" | "ACTION" => Field::Actions,
        "DECISION" => Field::Decision,
        "SUBGOAL" | "SUB_GOAL" => Field::Subgoal,
        "SUMMARY" => Field::Summary,
        _ => return None,
    })
}

/// Splits a response into recognised `FIELD: value` entries. Lines that do
/// not open a known field continue the previous one.
fn fields(text: &str) -> Vec<(Field, String)> {
    let mut out: Vec<(Field, String)> = Vec::new();
    let mut open = false;
    for line in text.lines() {
        let opened = line.split_once(':').and_then(|(head, rest)| {
            // tolerate list markers, numbering and markdown emphasis
            let key = head.trim_start_matches(|c: char| !c.is_ascii_alphabetic());
            if key.is_empty() || key.len() > 40 {
                return None;
            }
            field_of(key).map(|f| (f, rest.trim_start_matches('*').trim().to_string()))
        });
        match opened {
            Some(entry) => {
                out.push(entry);
                open = true;
            }
            None if open => {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    open = false;
                } else if let Some((_, value)) = out.last_mut() {
                    if !value.is_empty() {
                        value.push('\n');
                    }
                    value.push_str(trimmed);
                }
            }
            None => {}
        }
    }
    out
}

fn last_field(entries: &[(Field, String)], field: Field) -> Option<&str> {
    entries
        .iter()
        .rev()
        .find(|(f, v)| *f == field && !v.trim().is_empty())
        .map(|(_, v)| v.as_str())
}

fn evidence(entries: &[(Field, String)], raw: &str) -> Evidence {
    let get = |f| last_field(entries, f).map(|s| s.trim().to_string());
    Evidence {
        instruction_semantics: get(Field::InstructionSemantics),
        vb_sttb_analysis: get(Field::VbSttbAnalysis),
        anchor_traversal: get(Field::AnchorTraversal),
        raw: raw.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReply {
    pub evidence: Evidence,
    /// Non-empty, at most the action budget, cut after the first stop.
    pub actions: Vec<Action>,
    pub early_stop: bool,
}

static ACTION_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:(?:move|go)[\s_-]+)?forwards?\b|\bturn[\s_-]*(?:left|right)\b|\bstop\b")
        .expect("static regex")
});

fn action_from_token(token: &str) -> Option<Action> {
    let t: String = token
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect();
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    match t.as_str() {
        "forward" | "forwards" | "move forward" | "go forward" => Some(Action::Forward),
        "turn left" | "turnleft" | "left" => Some(Action::TurnLeft),
        "turn right" | "turnright" | "right" => Some(Action::TurnRight),
        "stop" => Some(Action::Stop),
        _ => None,
    }
}

/// Actions from an ACTIONS field: separators are commas, semicolons,
/// newlines and arrows. A chunk that is not a bare action name contributes
/// whatever action phrases it contains; unknown chunks are skipped.
fn actions_from_field(value: &str) -> Vec<Action> {
    value
        .split([',', ';', '\n', '|'])
        .flat_map(|chunk| chunk.split("->"))
        .flat_map(|chunk| chunk.split(" then "))
        .flat_map(|tok| {
            let tok = tok
                .trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*'))
                .trim_matches(|c: char| matches!(c, '[' | ']' | '{' | '}' | '"' | '\'' | '`' | '.' | '*' | ' '));
            match action_from_token(tok) {
                Some(a) => vec![a],
                None => actions_from_text(tok),
            }
        })
        .collect()
}

fn actions_from_text(text: &str) -> Vec<Action> {
    ACTION_TOKEN
        .find_iter(text)
        .filter_map(|m| action_from_token(m.as_str()))
        .collect()
}

pub fn parse_execution_response(text: &str, max_actions: usize) -> Result<ExecutionReply, ParseError> {
    let entries = fields(text);
    let mut actions = match last_field(&entries, Field::Actions) {
        Some(value) => actions_from_field(value),
        None => actions_from_text(text),
    };
    if let Some(i) = actions.iter().position(|a| *a == Action::Stop) {
        actions.truncate(i + 1);
    }
    actions.truncate(max_actions.max(1));
    if actions.is_empty() {
        return Err(ParseError::new(Stage::Execution, ParseErrorKind::NoActions, text));
    }
    let early_stop = actions.last() == Some(&Action::Stop);
    Ok(ExecutionReply {
        evidence: evidence(&entries, text),
        actions,
        early_stop,
    })
}

static DECISION_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(continue|switch)\b").expect("static regex"));

fn decision_word(s: &str) -> TransitionDecision {
    if s.eq_ignore_ascii_case("switch") {
        TransitionDecision::Switch
    } else {
        TransitionDecision::Continue
    }
}

static NEGATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:not|no|never|don['’]?t|do\s+not|shouldn['’]?t|cannot|can['’]?t)\s+(?:\w+\s+){0,2}$")
        .expect("static regex")
});

/// First keyword in a DECISION value that is not negated within the three
/// words before it; punctuation ends a negation's reach. A value holding only negated keywords of one kind means
/// the other kind.
fn field_decision(value: &str) -> Option<TransitionDecision> {
    let mut negated = None;
    for m in DECISION_WORD.find_iter(value) {
        let word = decision_word(m.as_str());
        if !NEGATION.is_match(&value[..m.start()]) {
            return Some(word);
        }
        match negated {
            None => negated = Some(word),
            Some(w) if w != word => return None,
            Some(_) => {}
        }
    }
    negated.map(|w| match w {
        TransitionDecision::Continue => TransitionDecision::Switch,
        TransitionDecision::Switch => TransitionDecision::Continue,
    })
}

/// The DECISION field wins; its first non-negated keyword is the verdict. Without a
/// usable field, exactly one of the two keywords must occur in the text.
pub fn parse_transition_response(text: &str) -> Result<(Evidence, TransitionDecision), ParseError> {
    let entries = fields(text);
    if let Some(verdict) = last_field(&entries, Field::Decision).and_then(field_decision) {
        return Ok((evidence(&entries, text), verdict));
    }
    let mut seen_continue = false;
    let mut seen_switch = false;
    for m in DECISION_WORD.find_iter(text) {
        match decision_word(m.as_str()) {
            TransitionDecision::Continue => seen_continue = true,
            TransitionDecision::Switch => seen_switch = true,
        }
    }
    let verdict = match (seen_continue, seen_switch) {
        (true, false) => TransitionDecision::Continue,
        (false, true) => TransitionDecision::Switch,
        (true, true) => {
            return Err(ParseError::new(
                Stage::Transition,
                ParseErrorKind::AmbiguousDecision,
                text,
            ))
        }
        (false, false) => {
            return Err(ParseError::new(Stage::Transition, ParseErrorKind::NoDecision, text))
        }
    };
    Ok((evidence(&entries, text), verdict))
}

static INLINE_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|\s)\(?\d{1,2}[.)]\s+").expect("static regex"));
static LEADING_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*•>]+\s*|\(?\d{1,2}[.):]\s*)+").expect("static regex"));

fn clean_subgoal(s: &str) -> String {
    let s = LEADING_MARKER.replace(s.trim(), "");
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '`')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// SUBGOAL fields in order; otherwise a numbered list, inline or one per
/// line.
pub fn parse_subgoals(text: &str) -> Result<SubGoalPlan, ParseError> {
    let entries = fields(text);
    let from_fields: Vec<String> = entries
        .iter()
        .filter(|(f, _)| *f == Field::Subgoal)
        .map(|(_, v)| clean_subgoal(v))
        .filter(|s| !s.is_empty())
        .collect();
    if let Some(plan) = SubGoalPlan::new(from_fields) {
        return Ok(plan);
    }

    let markers: Vec<_> = INLINE_NUMBER.find_iter(text).collect();
    if !markers.is_empty() {
        let mut items = Vec::new();
        for (i, m) in markers.iter().enumerate() {
            let end = markers.get(i + 1).map_or(text.len(), |n| n.start());
            let item = clean_subgoal(&text[m.end()..end]);
            if !item.is_empty() {
                items.push(item);
            }
        }
        if let Some(plan) = SubGoalPlan::new(items) {
            return Ok(plan);
        }
    }
    Err(ParseError::new(Stage::Decomposition, ParseErrorKind::NoSubgoals, text))
}

/// SUMMARY field, or the whole trimmed text when the field is missing.
pub fn parse_summary_response(text: &str, actions: Vec<Action>) -> Result<RolloutSummary, ParseError> {
    let entries = fields(text);
    let has_field = entries.iter().any(|(f, _)| *f == Field::Summary);
    let body = match last_field(&entries, Field::Summary) {
        Some(v) => v.trim(),
        None if has_field => "",
        None => text.trim(),
    };
    if body.is_empty() {
        return Err(ParseError::new(Stage::Summary, ParseErrorKind::EmptySummary, text));
    }
    RolloutSummary::new(body, actions)
        .map_err(|_| ParseError::new(Stage::Summary, ParseErrorKind::EmptySummary, text))
}
