//! Parsing and validation of model-emitted function-call text.
//!
//! The grammar (documented in `docs/call_grammar.ebnf`) covers the
//! `["function_name(parameter=value)"]` answer format plus the deviations
//! models actually produce: bare calls outside a list, unquoted bareword
//! values, prose around the list. The parser is total — arbitrary input
//! yields zero or more calls plus diagnostics, never a panic.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FunctionCall, ParamValue, ToolSpec};

#[derive(Debug, Error)]
pub enum ToolcallError {
    #[error("not a single function call: {0}")]
    NotASingleCall(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Recoverable oddity; parsing continued.
    Note,
    /// The candidate call was dropped.
    Fatal,
}

/// A parser message anchored to a byte span of the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub span: (usize, usize),
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn note(span: (usize, usize), message: impl Into<String>) -> Self {
        Diagnostic { span, severity: Severity::Note, message: message.into() }
    }

    fn fatal(span: (usize, usize), message: impl Into<String>) -> Self {
        Diagnostic { span, severity: Severity::Fatal, message: message.into() }
    }
}

/// Result of scanning a piece of model output for function calls.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub calls: Vec<FunctionCall>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutcome {
    pub fn has_fatal(&self) -> bool {
        self.diagnostics.iter().any(|d| d.severity == Severity::Fatal)
    }
}

/// Extracts function calls from arbitrary model output.
///
/// The first bracketed block that denotes a call list (or an explicitly empty
/// list) wins; otherwise the whole text is scanned for bare `NAME(...)`
/// expressions. Calls with unbalanced quotes or parens are dropped
/// individually with a fatal diagnostic; surrounding prose is ignored with a
/// note.
pub fn parse_call_list(text: &str) -> ParseOutcome {
    let bytes = text.as_bytes();

    // The whole input as exactly one call (the serializer's own shape). This
    // takes precedence so brackets inside string values cannot masquerade as
    // a call list.
    if let Some((call, notes)) = parse_whole_as_single(text) {
        return ParseOutcome { calls: vec![call], diagnostics: notes };
    }

    let mut empty_list: Option<ParseOutcome> = None;
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('[') {
        let open = search_from + rel;
        if let Some(outcome) = parse_bracket_block(text, open) {
            if !outcome.calls.is_empty() {
                return outcome;
            }
            // an explicitly empty list counts only if no call turns up later
            empty_list.get_or_insert(outcome);
        }
        search_from = open + 1;
    }

    // No call-bearing list; scan for bare calls.
    let mut outcome = ParseOutcome::default();
    let mut i = 0;
    while i < bytes.len() {
        if is_ident_start(bytes[i]) && (i == 0 || !is_ident_continue(bytes[i - 1])) {
            let ident_end = scan_ident(bytes, i);
            let after_ws = skip_ws(bytes, ident_end);
            if after_ws < bytes.len() && bytes[after_ws] == b'(' {
                match parse_call(text, i) {
                    Ok(parsed) => {
                        outcome.calls.push(parsed.call);
                        outcome.diagnostics.extend(parsed.notes);
                        i = parsed.next;
                        continue;
                    }
                    Err((diag, next)) => {
                        outcome.diagnostics.push(diag);
                        i = next.max(i + 1);
                        continue;
                    }
                }
            }
            i = ident_end;
            continue;
        }
        i += 1;
    }

    if outcome.calls.is_empty() {
        if let Some(empty) = empty_list {
            return empty;
        }
        if !outcome.has_fatal() {
            outcome
                .diagnostics
                .push(Diagnostic::fatal((0, text.len()), "no function calls found"));
        }
    } else {
        note_surrounding_junk(text, &mut outcome, None);
    }
    outcome
}

/// Parses one call string like `DISTANCE(start="Beijing", target="Shanghai")`.
/// The whole input (modulo surrounding whitespace and an optional wrapping
/// quote pair) must be a single call.
pub fn parse_single_call(text: &str) -> Result<FunctionCall, ToolcallError> {
    parse_whole_as_single(text)
        .map(|(call, _)| call)
        .ok_or_else(|| ToolcallError::NotASingleCall(text.chars().take(80).collect()))
}

fn parse_whole_as_single(text: &str) -> Option<(FunctionCall, Vec<Diagnostic>)> {
    let bytes = text.as_bytes();
    let mut start = skip_ws(bytes, 0);
    let mut end = bytes.len();
    while end > start && (bytes[end - 1] as char).is_ascii_whitespace() {
        end -= 1;
    }
    // tolerate one layer of wrapping quotes, the list-element form
    if end - start >= 2
        && (bytes[start] == b'"' || bytes[start] == b'\'')
        && bytes[end - 1] == bytes[start]
    {
        start += 1;
        end -= 1;
    }
    if start >= end || !is_ident_start(bytes[start]) {
        return None;
    }
    let parsed = parse_call(text, start).ok()?;
    if skip_ws(bytes, parsed.next) < end {
        return None;
    }
    Some((parsed.call, parsed.notes))
}

/// Renders a call back to text, preserving the original argument order.
/// `parse_call_list(serialize_call(c))` yields `[c]`.
pub fn serialize_call(call: &FunctionCall) -> String {
    call.to_string()
}

fn parse_bracket_block(text: &str, open: usize) -> Option<ParseOutcome> {
    let bytes = text.as_bytes();
    let mut outcome = ParseOutcome::default();
    let mut i = open + 1;
    let mut closed = None;

    while i < bytes.len() {
        i = skip_ws(bytes, i);
        if i >= bytes.len() {
            break;
        }
        match bytes[i] {
            b']' => {
                closed = Some(i);
                break;
            }
            b',' => {
                i += 1;
            }
            b'"' | b'\'' => {
                let quote = bytes[i];
                let inner = skip_ws(bytes, i + 1);
                if inner < bytes.len() && is_ident_start(bytes[inner]) {
                    match parse_call(text, inner) {
                        Ok(parsed) => {
                            outcome.calls.push(parsed.call);
                            outcome.diagnostics.extend(parsed.notes);
                            let mut after = skip_ws(bytes, parsed.next);
                            if after < bytes.len() && bytes[after] == quote {
                                after += 1;
                            } else {
                                outcome.diagnostics.push(Diagnostic::note(
                                    (i, parsed.next),
                                    "call string wrapper quote not closed",
                                ));
                            }
                            i = after;
                        }
                        Err((diag, next)) => {
                            outcome.diagnostics.push(diag);
                            i = next.max(i + 1);
                        }
                    }
                } else {
                    // a quoted element that is not a call; skip the string
                    match scan_quoted(bytes, i) {
                        Some(end) => {
                            outcome.diagnostics.push(Diagnostic::note(
                                (i, end),
                                "non-call list element ignored",
                            ));
                            i = end;
                        }
                        None => {
                            outcome.diagnostics.push(Diagnostic::fatal(
                                (i, bytes.len()),
                                "unterminated string in list",
                            ));
                            i = bytes.len();
                        }
                    }
                }
            }
            b if is_ident_start(b) => match parse_call(text, i) {
                Ok(parsed) => {
                    outcome.calls.push(parsed.call);
                    outcome.diagnostics.extend(parsed.notes);
                    i = parsed.next;
                }
                Err((diag, next)) => {
                    outcome.diagnostics.push(diag);
                    i = next.max(i + 1);
                }
            },
            _ => {
                // not a call list at all (e.g. "[1, 2]" or "[citation]")
                return None;
            }
        }
    }

    match closed {
        Some(close) => {
            let inner = text[open + 1..close].trim();
            if outcome.calls.is_empty() && !inner.is_empty() {
                return None;
            }
            note_surrounding_junk(text, &mut outcome, Some((open, close + 1)));
            Some(outcome)
        }
        None if !outcome.calls.is_empty() => {
            // truncated output; keep what parsed
            outcome
                .diagnostics
                .push(Diagnostic::note((open, text.len()), "call list not closed"));
            Some(outcome)
        }
        None => None,
    }
}

fn note_surrounding_junk(text: &str, outcome: &mut ParseOutcome, block: Option<(usize, usize)>) {
    let junk = match block {
        Some((start, end)) => {
            !text[..start].trim().is_empty() || !text[end..].trim().is_empty()
        }
        None => true,
    };
    if junk && !outcome.calls.is_empty() {
        outcome.diagnostics.push(Diagnostic::note(
            (0, text.len()),
            "text outside the function calls was ignored",
        ));
    }
}

struct ParsedCall {
    call: FunctionCall,
    next: usize,
    notes: Vec<Diagnostic>,
}

fn parse_call(text: &str, start: usize) -> Result<ParsedCall, (Diagnostic, usize)> {
    let bytes = text.as_bytes();
    let name_end = scan_ident(bytes, start);
    let name = &text[start..name_end];

    let mut i = skip_ws(bytes, name_end);
    if i >= bytes.len() || bytes[i] != b'(' {
        return Err((
            Diagnostic::fatal((start, i), format!("expected '(' after {name:?}")),
            name_end,
        ));
    }
    i = skip_ws(bytes, i + 1);

    let mut args: Vec<(String, ParamValue)> = Vec::new();
    let mut notes: Vec<Diagnostic> = Vec::new();

    if i < bytes.len() && bytes[i] == b')' {
        return finish_call(start, name, args, notes, i + 1);
    }

    loop {
        if i >= bytes.len() || !is_ident_start(bytes[i]) {
            return Err((
                Diagnostic::fatal((start, i), "expected parameter name"),
                i,
            ));
        }
        let pname_end = scan_ident(bytes, i);
        let pname = text[i..pname_end].to_string();
        i = skip_ws(bytes, pname_end);
        if i >= bytes.len() || bytes[i] != b'=' {
            return Err((
                Diagnostic::fatal((start, i), format!("expected '=' after parameter {pname:?}")),
                i,
            ));
        }
        i = skip_ws(bytes, i + 1);
        let (value, next, note) = parse_value(text, i).map_err(|d| {
            let end = d.span.1;
            (d, end)
        })?;
        if let Some(n) = note {
            notes.push(n);
        }
        if args.iter().any(|(existing, _)| existing == &pname) {
            return Err((
                Diagnostic::fatal((start, next), format!("duplicate parameter {pname:?}")),
                next,
            ));
        }
        args.push((pname, value));
        i = skip_ws(bytes, next);
        if i < bytes.len() && bytes[i] == b',' {
            i = skip_ws(bytes, i + 1);
            continue;
        }
        if i < bytes.len() && bytes[i] == b')' {
            return finish_call(start, name, args, notes, i + 1);
        }
        return Err((
            Diagnostic::fatal((start, i), "expected ',' or ')' in argument list"),
            i,
        ));
    }
}

fn finish_call(
    start: usize,
    name: &str,
    args: Vec<(String, ParamValue)>,
    notes: Vec<Diagnostic>,
    next: usize,
) -> Result<ParsedCall, (Diagnostic, usize)> {
    match FunctionCall::new(name, args) {
        Ok(call) => Ok(ParsedCall { call, next, notes }),
        Err(e) => Err((
            Diagnostic::fatal((start, next), format!("invalid call: {e}")),
            next,
        )),
    }
}

type ValueResult = Result<(ParamValue, usize, Option<Diagnostic>), Diagnostic>;

fn parse_value(text: &str, start: usize) -> ValueResult {
    let bytes = text.as_bytes();
    if start >= bytes.len() {
        return Err(Diagnostic::fatal((start, start), "missing value"));
    }
    if bytes[start] == b'"' || bytes[start] == b'\'' {
        let quote = bytes[start];
        let mut value = String::new();
        let mut i = start + 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' if i + 1 < bytes.len() => {
                    let escaped = bytes[i + 1];
                    match escaped {
                        b'"' => value.push('"'),
                        b'\'' => value.push('\''),
                        b'\\' => value.push('\\'),
                        b'n' => value.push('\n'),
                        b't' => value.push('\t'),
                        b'r' => value.push('\r'),
                        _ => {
                            // unknown escape: keep both characters
                            value.push('\\');
                            value.push(bytes[i + 1] as char);
                        }
                    }
                    i += 2;
                }
                b if b == quote => {
                    return Ok((ParamValue::Str(value), i + 1, None));
                }
                _ => {
                    // advance one full UTF-8 character
                    let ch_len = utf8_len(bytes[i]);
                    value.push_str(&text[i..(i + ch_len).min(bytes.len())]);
                    i += ch_len;
                }
            }
        }
        return Err(Diagnostic::fatal((start, bytes.len()), "unterminated string"));
    }

    // bareword / number token up to a delimiter
    let mut end = start;
    while end < bytes.len() && !matches!(bytes[end], b',' | b')' | b']' | b'(' | b'\n') {
        end += 1;
    }
    let token_raw = text[start..end].trim_end();
    let token_end = start + token_raw.len();
    let token = token_raw.trim_start();
    if token.is_empty() {
        return Err(Diagnostic::fatal((start, end), "missing value"));
    }

    if token == "true" {
        return Ok((ParamValue::Bool(true), token_end, None));
    }
    if token == "false" {
        return Ok((ParamValue::Bool(false), token_end, None));
    }
    if is_integer_literal(token) {
        if let Ok(v) = token.parse::<i64>() {
            return Ok((ParamValue::Int(v), token_end, None));
        }
        if let Ok(v) = token.parse::<f64>() {
            if let Ok(v) = ParamValue::num(v) {
                let note = Diagnostic::note(
                    (start, token_end),
                    "integer literal out of range, treated as number",
                );
                return Ok((v, token_end, Some(note)));
            }
        }
    }
    if is_decimal_literal(token) {
        if let Ok(v) = token.parse::<f64>() {
            if let Ok(v) = ParamValue::num(v) {
                return Ok((v, token_end, None));
            }
        }
    }
    let note = Diagnostic::note(
        (start, token_end),
        format!("unquoted value {token:?} treated as string"),
    );
    Ok((ParamValue::Str(token.to_string()), token_end, Some(note)))
}

fn is_integer_literal(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn is_decimal_literal(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    match s.split_once('.') {
        Some((int, frac)) => {
            !int.is_empty()
                && !frac.is_empty()
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

/// `start` indexes a quote; returns the index just past the matching close
/// quote, honoring backslash escapes, or None when unterminated.
fn scan_quoted(bytes: &[u8], start: usize) -> Option<usize> {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if i + 1 < bytes.len() => i += 2,
            b if b == quote => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}

fn utf8_len(first: u8) -> usize {
    match first {
        b if b < 0x80 => 1,
        b if b >> 5 == 0b110 => 2,
        b if b >> 4 == 0b1110 => 3,
        b if b >> 3 == 0b11110 => 4,
        _ => 1,
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn scan_ident(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() && is_ident_continue(bytes[i]) {
        i += 1;
    }
    i
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && (bytes[i] as char).is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Per-call verdict of the mechanical checks from the sampling check list:
/// syntax, redundant parameters, and value-passing errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    SyntaxError,
    RedundantParameter,
    MissingRequiredParameter,
    TypeError,
    UnknownFunction,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Ok => "ok",
            Verdict::SyntaxError => "syntax_error",
            Verdict::RedundantParameter => "redundant_parameter",
            Verdict::MissingRequiredParameter => "missing_required_parameter",
            Verdict::TypeError => "type_error",
            Verdict::UnknownFunction => "unknown_function",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallVerdict {
    /// Display form of the call (or the offending snippet for syntax errors).
    pub call: String,
    pub verdict: Verdict,
    pub detail: String,
}

/// One verdict per call, in input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub calls: Vec<CallVerdict>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.calls.iter().all(|c| c.verdict == Verdict::Ok)
    }
}

/// Checks parsed calls against a tool's usage specification. Exactly one
/// verdict per call; when several problems apply the most structural wins
/// (unknown function > redundant > missing required > type error).
pub fn validate_calls(calls: &[FunctionCall], tool: &ToolSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    for call in calls {
        report.calls.push(validate_one(call, tool));
    }
    report
}

/// Validates raw answer text: calls that failed to parse become
/// `syntax_error` entries, parsed calls are checked as usual.
pub fn validate_text(text: &str, tool: &ToolSpec) -> ValidationReport {
    let outcome = parse_call_list(text);
    let mut report = ValidationReport::default();
    for diag in outcome.diagnostics.iter().filter(|d| d.severity == Severity::Fatal) {
        let snippet: String = text
            .get(diag.span.0..diag.span.1)
            .unwrap_or("")
            .chars()
            .take(80)
            .collect();
        report.calls.push(CallVerdict {
            call: snippet,
            verdict: Verdict::SyntaxError,
            detail: diag.message.clone(),
        });
    }
    for call in &outcome.calls {
        report.calls.push(validate_one(call, tool));
    }
    report
}

fn validate_one(call: &FunctionCall, tool: &ToolSpec) -> CallVerdict {
    let display = call.to_string();
    let Some(sub) = tool.sub_api(&call.name) else {
        return CallVerdict {
            call: display,
            verdict: Verdict::UnknownFunction,
            detail: format!("{} is not a sub-API of {}", call.name, tool.api_name),
        };
    };

    // parameter names match case-sensitively, like the canonical call key
    let redundant: Vec<&str> = call
        .args
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| sub.param(n).is_none())
        .collect();
    if !redundant.is_empty() {
        return CallVerdict {
            call: display,
            verdict: Verdict::RedundantParameter,
            detail: format!("not in the specification: {}", redundant.join(", ")),
        };
    }

    let missing: Vec<&str> = sub
        .params
        .iter()
        .filter(|p| p.required && !call.args.iter().any(|(n, _)| n == &p.name))
        .map(|p| p.name.as_str())
        .collect();
    if !missing.is_empty() {
        return CallVerdict {
            call: display,
            verdict: Verdict::MissingRequiredParameter,
            detail: format!("missing required: {}", missing.join(", ")),
        };
    }

    for (name, value) in &call.args {
        let spec = sub.param(name).expect("redundant check passed");
        if !value.matches(spec.value_type) {
            return CallVerdict {
                call: display,
                verdict: Verdict::TypeError,
                detail: format!(
                    "{name} expects {} but got {}",
                    spec.value_type,
                    value.type_name()
                ),
            };
        }
    }

    CallVerdict {
        call: display,
        verdict: Verdict::Ok,
        detail: String::new(),
    }
}
