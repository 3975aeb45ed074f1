//! Metrics: exact/partial accuracy for tool instances, exact-match accuracy
//! for math, and the three-way error categorization of failed runs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{canonical_call_key, FunctionCall, OodInstance};
use crate::pipelines::PipelineRun;
use crate::toolcall;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("gold call list is empty")]
    EmptyGold,
    #[error("no \\boxed{{}} answer and no numeral in the response")]
    NoAnswer,
    #[error("cannot aggregate an empty score list")]
    EmptyScores,
    #[error("run for method {method:?} has no demo-selection trace; error category undefined")]
    NoDemoTrace { method: String },
}

/// Two-tier score for one tool instance: full credit for matching the gold
/// call multiset, half credit for a partial match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolScore {
    pub exact: f64,
    pub partial: f64,
}

/// Why a failed run went wrong, judged from the demos it generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    IrrelevantDemos,
    RelevantIncorrectDemos,
    RelevantCorrectDemos,
}

fn key_counts(calls: &[FunctionCall]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for call in calls {
        *counts.entry(canonical_call_key(call)).or_insert(0) += 1;
    }
    counts
}

/// Compares response and gold calls as multisets of canonical call keys.
///
/// exact = 1 iff the multisets are equal. partial = 1 on exact match, 0.5 on
/// a non-empty intersection short of equality (missing calls, or extras
/// alongside matches), 0 on a disjoint response.
pub fn score_tool(
    response: &[FunctionCall],
    gold: &[FunctionCall],
) -> Result<ToolScore, ScoringError> {
    if gold.is_empty() {
        return Err(ScoringError::EmptyGold);
    }
    let response_counts = key_counts(response);
    let gold_counts = key_counts(gold);
    if response_counts == gold_counts {
        return Ok(ToolScore { exact: 1.0, partial: 1.0 });
    }
    let overlap = gold_counts
        .iter()
        .any(|(key, _)| response_counts.contains_key(key));
    Ok(ToolScore {
        exact: 0.0,
        partial: if overlap { 0.5 } else { 0.0 },
    })
}

static NUMERAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").unwrap());
static THOUSANDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^-?\d{1,3}(?:,\d{3})+(?:\.\d+)?$").unwrap());

/// Normalizes an answer: trims whitespace, strips trailing periods and `$`
/// delimiters, collapses internal whitespace, and removes thousands commas
/// from pure numerals.
pub fn normalize_answer(answer: &str) -> String {
    let mut text = answer.to_string();
    loop {
        let before = text.clone();
        text = text.trim().trim_end_matches('.').trim_matches('$').to_string();
        if text == before {
            break;
        }
    }
    let mut text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if THOUSANDS.is_match(&text) {
        text.retain(|c| c != ',');
    }
    text
}

/// Returns the normalized contents of the last balanced `\boxed{...}` in the
/// text, falling back to the last numeral when no box is present.
pub fn extract_boxed_answer(text: &str) -> Result<String, ScoringError> {
    const NEEDLE: &str = "\\boxed{";
    let mut starts = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find(NEEDLE) {
        starts.push(from + rel);
        from += rel + 1;
    }
    for &start in starts.iter().rev() {
        if let Some(content) = balanced_brace_contents(text, start + NEEDLE.len() - 1) {
            return Ok(normalize_answer(content));
        }
    }
    if let Some(m) = NUMERAL.find_iter(text).last() {
        return Ok(normalize_answer(m.as_str()));
    }
    Err(ScoringError::NoAnswer)
}

/// `open` indexes a `{`; returns the contents up to its matching `}`.
fn balanced_brace_contents(text: &str, open: usize) -> Option<&str> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes.get(open), Some(&b'{'));
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open + 1..i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// True when the two normalized answers match, textually or — when both
/// parse as decimal numbers — numerically. No symbolic equivalence.
pub fn answers_equal(extracted: &str, gold: &str) -> bool {
    if extracted == gold {
        return true;
    }
    match (extracted.parse::<f64>(), gold.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MathScore {
    pub correct: bool,
    /// Set when the response contained neither a boxed answer nor a numeral;
    /// the score is 0.
    pub no_answer: bool,
}

impl MathScore {
    pub fn score(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Exact-match scoring of a math response against the normalized gold answer.
pub fn score_math(response_text: &str, gold_answer: &str) -> MathScore {
    match extract_boxed_answer(response_text) {
        Ok(extracted) => MathScore {
            correct: answers_equal(&extracted, &normalize_answer(gold_answer)),
            no_answer: false,
        },
        Err(_) => MathScore { correct: false, no_answer: true },
    }
}

/// Categorizes a failed (exact = 0) run by the demos it selected:
/// demos that never touch a required sub-API are irrelevant; demos that touch
/// one but fail validation are relevant-but-incorrect; otherwise the demos
/// were fine and the failure lies elsewhere.
pub fn classify_error(
    run: &PipelineRun,
    instance: &OodInstance,
) -> Result<ErrorCategory, ScoringError> {
    let demos = run
        .selected_demos
        .as_ref()
        .ok_or_else(|| ScoringError::NoDemoTrace { method: run.method.clone() })?;
    let required: BTreeSet<String> = instance
        .gold_calls
        .iter()
        .map(|c| c.name_lower())
        .collect();

    let mut any_relevant = false;
    let mut relevant_invalid = false;
    for demo in demos {
        let hits_required = demo
            .parsed_calls
            .as_ref()
            .map(|calls| calls.iter().any(|c| required.contains(&c.name_lower())))
            .unwrap_or(false);
        if hits_required {
            any_relevant = true;
            let report = toolcall::validate_text(&demo.answer_text, &instance.tool);
            if !report.all_ok() {
                relevant_invalid = true;
            }
        }
    }

    Ok(if !any_relevant {
        ErrorCategory::IrrelevantDemos
    } else if relevant_invalid {
        ErrorCategory::RelevantIncorrectDemos
    } else {
        ErrorCategory::RelevantCorrectDemos
    })
}

/// Accuracy summary over a set of scored instances, as percentages to one
/// decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub exact_acc: f64,
    pub partial_acc: f64,
    pub n: usize,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn aggregate(scores: &[ToolScore]) -> Result<Aggregate, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    let n = scores.len() as f64;
    let exact: f64 = scores.iter().map(|s| s.exact).sum::<f64>() / n;
    let partial: f64 = scores.iter().map(|s| s.partial).sum::<f64>() / n;
    Ok(Aggregate {
        exact_acc: round1(exact * 100.0),
        partial_acc: round1(partial * 100.0),
        n: scores.len(),
    })
}

/// One line of the per-instance score report (JSON-Lines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub method: String,
    pub exact: f64,
    pub partial: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_answer: bool,
}
