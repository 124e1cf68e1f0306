//! Response parsers against committed fixture corpora and templated
//! round trips.

use std::path::PathBuf;

use proptest::prelude::*;
use serde::Deserialize;
use stagenav_core::evidence::{
    parse_execution_response, parse_subgoals, parse_summary_response, parse_transition_response,
    ParseErrorKind, TransitionDecision,
};
use stagenav_core::sim::Action;

fn fixture<T: for<'de> Deserialize<'de>>(name: &str) -> T {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/parse")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExecutionExpect {
    Ok { actions: Vec<Action>, early_stop: bool },
    Err { error: ParseErrorKind },
}

#[derive(Deserialize)]
struct ExecutionCase {
    name: String,
    text: String,
    max_actions: usize,
    expect: ExecutionExpect,
}

#[test]
fn execution_malformation_corpus() {
    let cases: Vec<ExecutionCase> = fixture("execution_malformed.json");
    assert_eq!(cases.len(), 50);
    let mut failures = Vec::new();
    for c in &cases {
        let got = parse_execution_response(&c.text, c.max_actions);
        let ok = match (&got, &c.expect) {
            (Ok(r), ExecutionExpect::Ok { actions, early_stop }) => {
                r.actions == *actions && r.early_stop == *early_stop && r.evidence.raw == c.text
            }
            (Err(e), ExecutionExpect::Err { error }) => e.kind == *error && e.raw == c.text,
            _ => false,
        };
        if !ok {
            failures.push(format!("{}: {got:?}", c.name));
        }
    }
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
}

#[derive(Deserialize)]
struct TransitionCase {
    name: String,
    text: String,
    /// `continue`, `switch` or a parse error kind.
    expect: String,
}

#[test]
fn decision_field_takes_priority_over_prose() {
    let cases: Vec<TransitionCase> = fixture("transition_adversarial.json");
    let mut failures = Vec::new();
    for c in &cases {
        let got = match parse_transition_response(&c.text) {
            Ok((_, d)) => d.as_str().to_string(),
            Err(e) => serde_json::to_value(e.kind).unwrap().as_str().unwrap().to_string(),
        };
        if got != c.expect {
            failures.push(format!("{}: expected {}, got {got}", c.name, c.expect));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[derive(Deserialize)]
struct DecompositionCase {
    name: String,
    text: String,
    expect: Vec<String>,
}

#[test]
fn decomposition_malformation_corpus_recovers_every_plan() {
    let cases: Vec<DecompositionCase> = fixture("decomposition_malformed.json");
    assert_eq!(cases.len(), 50);
    let mut failures = Vec::new();
    for c in &cases {
        match parse_subgoals(&c.text) {
            Ok(plan) if plan.subgoals() == c.expect.as_slice() => {}
            other => failures.push(format!("{}: {other:?}", c.name)),
        }
    }
    let recovered = cases.len() - failures.len();
    println!("decomposition recovery: {recovered}/{}", cases.len());
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

const EVIDENCE_VARIANTS: [&str; 4] = [
    "",
    "INSTRUCTION_SEMANTICS: walk past the sofa\nVB_STTB_ANALYSIS: moved four metres\nANCHOR_TRAVERSAL: sofa behind\n",
    "Instruction semantics: continue until the sofa, then switch to the door\nVB/STTB analysis: unclear\nAnchor traversal: maybe\n",
    "I considered whether to continue or to switch.\n\n",
];

fn transition_templates(word: &str) -> Vec<String> {
    let other = if word == "switch" { "continue" } else { "switch" };
    let upper = word.to_ascii_uppercase();
    vec![
        format!("DECISION: {word}"),
        format!("DECISION: {upper}"),
        format!("decision: {word}"),
        format!("**DECISION**: {word}"),
        format!("- Decision: {word}."),
        format!("DECISION: \"{word}\""),
        format!("DECISION:\n{word}"),
        format!("DECISION: {word} (rather than {other})"),
        format!("DECISION: do not {other}; {word}"),
        format!("DECISION: {word}\nNote: some would {other} here."),
        format!("DECISION: {other}\nDECISION: {word}"),
    ]
}

#[test]
fn templated_transition_responses_round_trip() {
    let mut total = 0;
    for decision in [TransitionDecision::Continue, TransitionDecision::Switch] {
        for evidence in EVIDENCE_VARIANTS {
            for body in transition_templates(decision.as_str()) {
                let text = format!("{evidence}{body}");
                let (_, got) = parse_transition_response(&text).unwrap_or_else(|e| panic!("{text:?}: {e}"));
                assert_eq!(got, decision, "{text:?}");
                total += 1;
            }
        }
    }
    assert_eq!(total, 2 * EVIDENCE_VARIANTS.len() * 11);
}

fn render_action(a: Action, style: usize) -> String {
    let base = a.as_str();
    match style % 4 {
        0 => base.to_string(),
        1 => base.replace('_', " "),
        2 => base.to_ascii_uppercase(),
        _ => format!("\"{base}\""),
    }
}

fn expected_actions(seq: &[Action], max_actions: usize) -> Vec<Action> {
    let mut out: Vec<Action> = Vec::new();
    for &a in seq.iter().take(max_actions) {
        out.push(a);
        if a == Action::Stop {
            break;
        }
    }
    out
}

proptest! {
    #[test]
    fn templated_execution_responses_round_trip(
        seq in prop::collection::vec(prop::sample::select(Action::ALL.to_vec()), 1..7),
        max_actions in 1usize..6,
        style in 0usize..4,
        sep in prop::sample::select(vec![", ", "; ", " -> ", "\n", " | ", " then "]),
        evidence in 0usize..EVIDENCE_VARIANTS.len(),
    ) {
        let list = seq.iter().map(|&a| render_action(a, style)).collect::<Vec<_>>().join(sep);
        let text = format!("{}ACTIONS: {list}", EVIDENCE_VARIANTS[evidence]);
        let reply = parse_execution_response(&text, max_actions).unwrap();
        let expected = expected_actions(&seq, max_actions);
        prop_assert_eq!(&reply.actions, &expected);
        prop_assert_eq!(reply.early_stop, expected.last() == Some(&Action::Stop));
    }

    #[test]
    fn parsers_are_total(text in "(?s).{0,300}", max_actions in 1usize..5) {
        match parse_execution_response(&text, max_actions) {
            Ok(r) => {
                prop_assert!(!r.actions.is_empty() && r.actions.len() <= max_actions);
                let stop_at = r.actions.iter().position(|a| *a == Action::Stop);
                prop_assert!(stop_at.is_none_or(|i| i + 1 == r.actions.len()));
                prop_assert_eq!(r.early_stop, stop_at.is_some());
            }
            Err(e) => prop_assert_eq!(e.kind, ParseErrorKind::NoActions),
        }
        match parse_transition_response(&text) {
            Ok(_) => {}
            Err(e) => prop_assert!(matches!(e.kind, ParseErrorKind::NoDecision | ParseErrorKind::AmbiguousDecision)),
        }
        match parse_subgoals(&text) {
            Ok(plan) => prop_assert!(!plan.is_empty() && plan.subgoals().iter().all(|s| !s.trim().is_empty())),
            Err(e) => prop_assert_eq!(e.kind, ParseErrorKind::NoSubgoals),
        }
        match parse_summary_response(&text, vec![Action::Forward]) {
            Ok(s) => prop_assert!(!s.text().trim().is_empty()),
            Err(e) => prop_assert_eq!(e.kind, ParseErrorKind::EmptySummary),
        }
    }

    #[test]
    fn parsers_survive_field_shaped_noise(
        lines in prop::collection::vec(
            (prop::sample::select(vec!["ACTIONS", "DECISION", "SUBGOAL 2", "SUMMARY", "ANCHOR_TRAVERSAL", "**Decision**", "x"]),
             "[ a-zA-Z_,;:>|\\-\\.0-9\"]{0,40}"),
            0..8),
    ) {
        let text = lines.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n");
        let _ = parse_execution_response(&text, 4);
        let _ = parse_transition_response(&text);
        let _ = parse_subgoals(&text);
        let _ = parse_summary_response(&text, vec![]);
    }
}
