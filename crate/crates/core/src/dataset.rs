//! Dataset plumbing: rule-based cleaning of raw tool corpora, OOD instance
//! assembly, the cross-subject math demo sampler, corpus statistics, and the
//! JSON/JSON-Lines file formats.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    MathDemoPair, MathInstance, OodInstance, OodInstanceRecord, ParamValue, SubApiSpec, ToolSpec,
    ToolUseCase,
};
use crate::pipelines::Instance;
use crate::prompts::TemplateRegistry;
use crate::toolcall;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("instance {id:?} references unknown tool {tool_ref:?}")]
    UnknownToolRef { id: String, tool_ref: String },
    #[error("instance {id:?} is invalid: {detail}")]
    BadInstance { id: String, detail: String },
    #[error("math problem lacks a {what} label, cannot build the OOD setting")]
    MissingLabel { what: &'static str },
    #[error("pool has {available} level-{level} problems from other subjects, need {needed}")]
    InsufficientPool { level: u8, needed: usize, available: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// Cleaning/lint rule identifiers, as they appear in the log files.
pub mod rules {
    pub const MISSING_KEYS: &str = "missing-keys";
    pub const FORMAT_ERROR: &str = "format-error";
    pub const MIN_1_CALL: &str = "min-1-call";
    pub const MAX_3_CALLS: &str = "max-3-calls";
    pub const SENSITIVE_PARAM: &str = "sensitive-param";
    pub const MIN_3_FUNCTIONS: &str = "min-3-functions";
    pub const MIN_3_CASES: &str = "min-3-cases";
    pub const NO_DISJOINT_TRIPLE: &str = "no-disjoint-triple";
    pub const AMBIGUOUS_PRONOUN: &str = "ambiguous-pronoun";
    pub const UNOBFUSCATED_EMAIL: &str = "unobfuscated-email";

    /// Rules that drop an entry (as opposed to stripping or flagging).
    pub fn is_rejection(rule: &str) -> bool {
        matches!(
            rule,
            MISSING_KEYS | FORMAT_ERROR | MIN_1_CALL | MAX_3_CALLS | MIN_3_FUNCTIONS | MIN_3_CASES
        )
    }
}

/// One row of a rejection/strip/lint log (JSON-Lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub entry_id: String,
    pub rule: String,
    pub detail: String,
}

impl LogEntry {
    fn new(entry_id: impl Into<String>, rule: &str, detail: impl Into<String>) -> Self {
        LogEntry { entry_id: entry_id.into(), rule: rule.to_string(), detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct CleanConfig {
    /// Parameter names stripped from specifications and calls.
    pub sensitive_params: Vec<String>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            sensitive_params: ["api_key", "token", "password", "email"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

#[derive(Debug, Default)]
pub struct CleanOutcome {
    pub tools: Vec<ToolSpec>,
    pub log: Vec<LogEntry>,
}

impl CleanOutcome {
    pub fn rejections(&self) -> usize {
        self.log.iter().filter(|e| rules::is_rejection(&e.rule)).count()
    }
}

/// Applies the rule-based cleaning pass to raw corpus entries: drops entries
/// with missing keys or unparseable call strings, drops cases outside the
/// 1..=3 call range, strips sensitive parameters (case kept), and drops tools
/// left with fewer than 3 cases or 3 sub-APIs. Every action is logged with
/// the violated rule. Cleaning is idempotent.
pub fn clean_tool_corpus(entries: &[Value], cfg: &CleanConfig) -> CleanOutcome {
    let mut outcome = CleanOutcome::default();
    for (idx, raw) in entries.iter().enumerate() {
        clean_one_tool(idx, raw, cfg, &mut outcome);
    }
    outcome
}

fn entry_label(idx: usize, raw: &Value) -> String {
    raw.get("api_name")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("entry-{idx}"))
}

fn clean_one_tool(idx: usize, raw: &Value, cfg: &CleanConfig, outcome: &mut CleanOutcome) {
    let label = entry_label(idx, raw);
    let Some(obj) = raw.as_object() else {
        outcome.log.push(LogEntry::new(label, rules::MISSING_KEYS, "entry is not an object"));
        return;
    };
    let missing: Vec<&str> = ["api_name", "description", "sub_apis", "cases"]
        .into_iter()
        .filter(|k| !obj.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        outcome.log.push(LogEntry::new(
            label,
            rules::MISSING_KEYS,
            format!("missing keys: {}", missing.join(", ")),
        ));
        return;
    }

    let api_name = match obj["api_name"].as_str() {
        Some(name) if !name.is_empty() => name.to_string(),
        _ => {
            outcome.log.push(LogEntry::new(label, rules::MISSING_KEYS, "api_name is not a string"));
            return;
        }
    };
    let Some(description) = obj["description"].as_str() else {
        outcome.log.push(LogEntry::new(
            api_name,
            rules::MISSING_KEYS,
            "description is not a string",
        ));
        return;
    };

    let mut sub_apis: Vec<SubApiSpec> =
        match serde_json::from_value(obj["sub_apis"].clone()) {
            Ok(subs) => subs,
            Err(e) => {
                outcome.log.push(LogEntry::new(
                    api_name,
                    rules::MISSING_KEYS,
                    format!("sub_apis malformed: {e}"),
                ));
                return;
            }
        };
    // strip sensitive parameters from the usage specification
    for sub in &mut sub_apis {
        sub.params.retain(|p| {
            let sensitive = cfg.sensitive_params.iter().any(|s| s == &p.name);
            if sensitive {
                outcome.log.push(LogEntry::new(
                    format!("{api_name}/{}", sub.name),
                    rules::SENSITIVE_PARAM,
                    format!("stripped parameter {:?} from the specification", p.name),
                ));
            }
            !sensitive
        });
    }

    let Some(raw_cases) = obj["cases"].as_array() else {
        outcome.log.push(LogEntry::new(api_name, rules::MISSING_KEYS, "cases is not an array"));
        return;
    };

    let mut cases: Vec<ToolUseCase> = Vec::new();
    for (case_idx, raw_case) in raw_cases.iter().enumerate() {
        let case_id = format!("{api_name}/case-{case_idx}");
        // rejected cases are already logged
        if let Some(case) = clean_one_case(&case_id, raw_case, cfg, &mut outcome.log) {
            cases.push(case);
        }
    }

    if sub_apis.len() < 3 {
        outcome.log.push(LogEntry::new(
            api_name,
            rules::MIN_3_FUNCTIONS,
            format!("{} sub-APIs after cleaning", sub_apis.len()),
        ));
        return;
    }
    if cases.len() < 3 {
        outcome.log.push(LogEntry::new(
            api_name,
            rules::MIN_3_CASES,
            format!("{} cases after cleaning", cases.len()),
        ));
        return;
    }

    let tool = ToolSpec { api_name: api_name.clone(), description: description.to_string(), sub_apis, cases };
    match tool.validate() {
        Ok(()) => outcome.tools.push(tool),
        Err(e) => outcome.log.push(LogEntry::new(api_name, rules::FORMAT_ERROR, e.to_string())),
    }
}

fn clean_one_case(
    case_id: &str,
    raw: &Value,
    cfg: &CleanConfig,
    log: &mut Vec<LogEntry>,
) -> Option<ToolUseCase> {
    let query = match raw.get("query").and_then(Value::as_str) {
        Some(q) if !q.trim().is_empty() => q.to_string(),
        _ => {
            log.push(LogEntry::new(case_id, rules::FORMAT_ERROR, "query missing or empty"));
            return None;
        }
    };
    let Some(raw_calls) = raw.get("calls").and_then(Value::as_array) else {
        log.push(LogEntry::new(case_id, rules::FORMAT_ERROR, "calls missing or not an array"));
        return None;
    };

    let mut calls = Vec::with_capacity(raw_calls.len());
    for raw_call in raw_calls {
        let Some(text) = raw_call.as_str() else {
            log.push(LogEntry::new(case_id, rules::FORMAT_ERROR, "call is not a string"));
            return None;
        };
        match toolcall::parse_single_call(text) {
            Ok(call) => calls.push(call),
            Err(e) => {
                log.push(LogEntry::new(
                    case_id,
                    rules::FORMAT_ERROR,
                    format!("call {text:?} does not parse: {e}"),
                ));
                return None;
            }
        }
    }

    if calls.is_empty() {
        log.push(LogEntry::new(case_id, rules::MIN_1_CALL, "case has no calls"));
        return None;
    }
    if calls.len() > 3 {
        log.push(LogEntry::new(
            case_id,
            rules::MAX_3_CALLS,
            format!("case needs {} calls", calls.len()),
        ));
        return None;
    }

    // strip sensitive arguments; the case is kept
    for call in &mut calls {
        let before = call.args.len();
        call.args.retain(|(name, _)| !cfg.sensitive_params.iter().any(|s| s == name));
        if call.args.len() != before {
            log.push(LogEntry::new(
                case_id,
                rules::SENSITIVE_PARAM,
                format!("stripped sensitive argument(s) from {}", call.name),
            ));
        }
    }

    Some(ToolUseCase { query, calls })
}

/// File-level cleaning entry point. Only an unreadable file is an error;
/// malformed lines become log entries.
pub fn clean_tool_corpus_file(path: &Path, cfg: &CleanConfig) -> Result<CleanOutcome, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut entries = Vec::new();
    let mut outcome = CleanOutcome::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(value) => entries.push(value),
            Err(e) => outcome.log.push(LogEntry::new(
                format!("line-{}", i + 1),
                rules::FORMAT_ERROR,
                format!("not valid JSON: {e}"),
            )),
        }
    }
    let cleaned = clean_tool_corpus(&entries, cfg);
    outcome.tools = cleaned.tools;
    outcome.log.extend(cleaned.log);
    Ok(outcome)
}

/// Builds OOD instances from a cleaned tool: each candidate query case is
/// paired with 3 sampled cases whose sub-API sets are disjoint from the
/// query's. Longer cases (more calls, then longer query text) are preferred
/// as queries. Deterministic under `rng_seed`; impossible queries are
/// skipped with a log entry.
pub fn assemble_ood_instances(
    tool: &Arc<ToolSpec>,
    rng_seed: u64,
) -> (Vec<OodInstance>, Vec<LogEntry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut instances = Vec::new();
    let mut log = Vec::new();

    let mut order: Vec<usize> = (0..tool.cases.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &tool.cases[a];
        let cb = &tool.cases[b];
        cb.calls
            .len()
            .cmp(&ca.calls.len())
            .then(cb.query.len().cmp(&ca.query.len()))
            .then(a.cmp(&b))
    });

    for q_idx in order {
        let query_case = &tool.cases[q_idx];
        let query_names = query_case.sub_api_names();
        let eligible: Vec<usize> = (0..tool.cases.len())
            .filter(|&i| i != q_idx)
            .filter(|&i| {
                tool.cases[i]
                    .sub_api_names()
                    .iter()
                    .all(|n| !query_names.contains(n))
            })
            .collect();
        let entry_id = format!("{}/case-{q_idx}", tool.api_name);
        if eligible.len() < 3 {
            log.push(LogEntry::new(
                entry_id,
                rules::NO_DISJOINT_TRIPLE,
                format!("only {} disjoint cases available", eligible.len()),
            ));
            continue;
        }
        let mut pool = eligible;
        let mut picks = Vec::with_capacity(3);
        for _ in 0..3 {
            let at = rng.gen_range(0..pool.len());
            picks.push(pool.swap_remove(at));
        }
        let seed_demos: Vec<ToolUseCase> =
            picks.iter().map(|&i| tool.cases[i].clone()).collect();
        match OodInstance::new(
            format!("{}-q{q_idx:03}", tool.api_name),
            Arc::clone(tool),
            seed_demos,
            query_case.query.clone(),
            query_case.calls.clone(),
        ) {
            Ok(instance) => instances.push(instance),
            Err(e) => log.push(LogEntry::new(entry_id, rules::FORMAT_ERROR, e.to_string())),
        }
    }
    (instances, log)
}

/// A labeled training problem for the math OOD sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathPoolProblem {
    pub question: String,
    pub solution: String,
    pub subject: String,
    pub level: u8,
}

/// Samples k pool problems with the test problem's level but a different
/// subject. Deterministic under `rng_seed`.
pub fn sample_math_ood_demos(
    test_problem: &MathInstance,
    pool: &[MathPoolProblem],
    k: usize,
    rng_seed: u64,
) -> Result<Vec<MathDemoPair>, DatasetError> {
    let level = test_problem.level.ok_or(DatasetError::MissingLabel { what: "level" })?;
    let subject = test_problem
        .subject
        .as_deref()
        .ok_or(DatasetError::MissingLabel { what: "subject" })?;

    let eligible: Vec<&MathPoolProblem> = pool
        .iter()
        .filter(|p| p.level == level && p.subject != subject)
        .collect();
    if eligible.len() < k {
        return Err(DatasetError::InsufficientPool {
            level,
            needed: k,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut pool_idx: Vec<usize> = (0..eligible.len()).collect();
    let mut demos = Vec::with_capacity(k);
    for _ in 0..k {
        let at = rng.gen_range(0..pool_idx.len());
        let chosen = eligible[pool_idx.swap_remove(at)];
        demos.push(MathDemoPair {
            question: chosen.question.clone(),
            solution: chosen.solution.clone(),
        });
    }
    Ok(demos)
}

/// Corpus statistics: average token counts for queries, demos, and the full
/// few-shot context, to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub size: usize,
    pub avg_query_tokens: f64,
    pub avg_demo_tokens: f64,
    pub avg_context_tokens: f64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn dataset_stats(
    instances: &[Instance],
    registry: &TemplateRegistry,
    estimate: &dyn Fn(&str) -> u64,
) -> Result<DatasetStats, DatasetError> {
    if instances.is_empty() {
        return Err(DatasetError::Empty("instances"));
    }
    let runner = crate::pipelines::Runner::new(registry);
    let mut query_sum = 0u64;
    let mut demo_sum = 0u64;
    let mut demo_count = 0u64;
    let mut context_sum = 0u64;
    for instance in instances {
        query_sum += estimate(instance.query());
        for demo in instance.seed_demos() {
            demo_sum += estimate(&crate::prompts::format_demos(&[demo], instance.kind())
                .expect("single demo formats"));
            demo_count += 1;
        }
        let context = runner
            .few_shot_prompt(instance, None)
            .map_err(|e| DatasetError::BadInstance {
                id: instance.id().to_string(),
                detail: e.to_string(),
            })?;
        context_sum += estimate(&context);
    }
    Ok(DatasetStats {
        size: instances.len(),
        avg_query_tokens: round1(query_sum as f64 / instances.len() as f64),
        avg_demo_tokens: round1(if demo_count == 0 {
            0.0
        } else {
            demo_sum as f64 / demo_count as f64
        }),
        avg_context_tokens: round1(context_sum as f64 / instances.len() as f64),
    })
}

const AMBIGUOUS_PRONOUNS: [&str; 5] = ["today", "tomorrow", "yesterday", "tonight", "my home"];

fn contains_word_ci(text: &str, word: &str) -> bool {
    let hay = text.to_lowercase();
    let mut from = 0;
    while let Some(rel) = hay[from..].find(word) {
        let pos = from + rel;
        let end = pos + word.len();
        let bytes = hay.as_bytes();
        let before_ok = pos == 0 || !bytes[pos - 1].is_ascii_alphanumeric();
        let after_ok = end >= bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return true;
        }
        from = pos + 1;
    }
    false
}

fn flag_email(text: &str) -> Option<String> {
    static EMAIL: std::sync::LazyLock<regex::Regex> = std::sync::LazyLock::new(|| {
        regex::Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap()
    });
    EMAIL
        .find_iter(text)
        .map(|m| m.as_str())
        .find(|addr| {
            let lower = addr.to_lowercase();
            !lower.ends_with("example.com") && !lower.ends_with("example.org")
        })
        .map(str::to_string)
}

/// Flags likely violations of the manual-cleaning rules for human review:
/// ambiguous time/place pronouns in queries and unobfuscated email addresses
/// in queries or call arguments. Inter-call data dependencies cannot be
/// detected mechanically and are not checked.
pub fn lint_instances(instances: &[OodInstance]) -> Vec<LogEntry> {
    let mut log = Vec::new();
    for instance in instances {
        let mut texts: Vec<(String, String)> = vec![("query".into(), instance.query.clone())];
        for (i, demo) in instance.seed_demos.iter().enumerate() {
            texts.push((format!("seed-{i}"), demo.query.clone()));
            for call in &demo.calls {
                for (name, value) in &call.args {
                    if let ParamValue::Str(s) = value {
                        texts.push((format!("seed-{i}/{}.{name}", call.name), s.clone()));
                    }
                }
            }
        }
        for call in &instance.gold_calls {
            for (name, value) in &call.args {
                if let ParamValue::Str(s) = value {
                    texts.push((format!("gold/{}.{name}", call.name), s.clone()));
                }
            }
        }
        for (where_, text) in texts {
            for pronoun in AMBIGUOUS_PRONOUNS {
                if contains_word_ci(&text, pronoun) {
                    log.push(LogEntry::new(
                        format!("{}/{where_}", instance.id),
                        rules::AMBIGUOUS_PRONOUN,
                        format!("{pronoun:?} in {text:?}"),
                    ));
                }
            }
            if let Some(addr) = flag_email(&text) {
                log.push(LogEntry::new(
                    format!("{}/{where_}", instance.id),
                    rules::UNOBFUSCATED_EMAIL,
                    addr,
                ));
            }
        }
    }
    log
}

// ---------------------------------------------------------------------------
// file IO

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        let line = serde_json::to_string(&row).expect("rows serialize");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Loads a cleaned tool corpus (one JSON document per line), validating each
/// tool's invariants.
pub fn load_tools_jsonl(path: &Path) -> Result<Vec<Arc<ToolSpec>>, DatasetError> {
    let rows: Vec<(usize, ToolSpec)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, tool)| {
            tool.validate().map_err(|e| DatasetError::Parse {
                path: path.display().to_string(),
                line,
                detail: e.to_string(),
            })?;
            Ok(Arc::new(tool))
        })
        .collect()
}

pub fn save_tools_jsonl(path: &Path, tools: &[ToolSpec]) -> Result<(), DatasetError> {
    write_jsonl(path, tools)
}

/// Loads OOD instances, resolving tool references against the corpus.
/// Records without an id get `i{line:04}`.
pub fn load_ood_instances(
    path: &Path,
    tools: &[Arc<ToolSpec>],
) -> Result<Vec<OodInstance>, DatasetError> {
    let rows: Vec<(usize, OodInstanceRecord)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, record)| {
            let fallback_id = format!("i{line:04}");
            let id_for_err = record.id.clone().unwrap_or_else(|| fallback_id.clone());
            let tool = tools
                .iter()
                .find(|t| t.api_name == record.tool_ref)
                .ok_or_else(|| DatasetError::UnknownToolRef {
                    id: id_for_err.clone(),
                    tool_ref: record.tool_ref.clone(),
                })?;
            record
                .resolve(Arc::clone(tool), fallback_id)
                .map_err(|e| DatasetError::BadInstance { id: id_for_err, detail: e.to_string() })
        })
        .collect()
}

pub fn save_ood_instances(path: &Path, instances: &[OodInstance]) -> Result<(), DatasetError> {
    write_jsonl(path, instances.iter().map(OodInstanceRecord::from_instance))
}

/// Loads math instances; records without an id get `i{line:04}`.
pub fn load_math_instances(path: &Path) -> Result<Vec<MathInstance>, DatasetError> {
    let rows: Vec<(usize, MathInstance)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, mut instance)| {
            if instance.id.is_empty() {
                instance.id = format!("i{line:04}");
            }
            instance.validate().map_err(|e| DatasetError::Parse {
                path: path.display().to_string(),
                line,
                detail: e.to_string(),
            })?;
            Ok(instance)
        })
        .collect()
}

pub fn load_math_pool(path: &Path) -> Result<Vec<MathPoolProblem>, DatasetError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, p)| p).collect())
}

pub fn save_log(path: &Path, entries: &[LogEntry]) -> Result<(), DatasetError> {
    write_jsonl(path, entries)
}
