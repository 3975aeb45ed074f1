//! Executable prompting strategies.
//!
//! [`Runner::run_self_demos`] implements the four-step workflow — query
//! understanding, query-aware demo generation, best-of-N sampling, response
//! generation — and the other `run_*` methods implement the baselines it is
//! compared against. Every backend call is recorded as a [`StepTrace`] so
//! runs can be audited, replayed, and costed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenRequest, GenResponse};
use crate::model::{call_strings, Demo, DemoKind, FunctionCall, MathInstance, OodInstance};
use crate::prompts::{
    self, demos_section, format_demos, format_numbered_demos, format_specification,
    PromptError, TemplateId, TemplateRegistry,
};
use crate::retrieval::Corpus;
use crate::scoring;
use crate::toolcall;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("backend failure in step {step:?}: {source}")]
    Backend {
        step: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid instance: {0}")]
    BadInstance(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// A test instance of either task kind.
#[derive(Debug, Clone)]
pub enum Instance {
    Tool(OodInstance),
    Math(MathInstance),
}

impl Instance {
    pub fn id(&self) -> &str {
        match self {
            Instance::Tool(i) => &i.id,
            Instance::Math(i) => &i.id,
        }
    }

    pub fn kind(&self) -> DemoKind {
        match self {
            Instance::Tool(_) => DemoKind::Tool,
            Instance::Math(_) => DemoKind::Math,
        }
    }

    pub fn query(&self) -> &str {
        match self {
            Instance::Tool(i) => &i.query,
            Instance::Math(i) => &i.question,
        }
    }

    pub fn seed_demos(&self) -> Vec<Demo> {
        match self {
            Instance::Tool(i) => i.seed_demos.iter().map(Demo::from_case).collect(),
            Instance::Math(i) => i.seed_demos.iter().map(Demo::from_math_pair).collect(),
        }
    }
}

/// Knobs of the self-demonstration workflow: generate N, keep K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDemosConfig {
    pub n_generate: u32,
    pub k_select: u32,
    pub temperature_sample: f64,
    pub temperature_greedy: f64,
    pub kv_reuse: bool,
}

impl Default for SelfDemosConfig {
    fn default() -> Self {
        SelfDemosConfig {
            n_generate: 5,
            k_select: 2,
            temperature_sample: 0.7,
            temperature_greedy: 0.0,
            kv_reuse: false,
        }
    }
}

impl SelfDemosConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k_select < 1 || self.k_select > self.n_generate {
            return Err(PipelineError::BadConfig(format!(
                "k_select must satisfy 1 <= K <= N, got K={} N={}",
                self.k_select, self.n_generate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfIclConfig {
    pub n_demos: u32,
    /// Few-shot variant includes the seed demos; the vanilla variant
    /// generates three pseudo-demos from scratch.
    pub few_shot: bool,
}

impl Default for SelfIclConfig {
    fn default() -> Self {
        SelfIclConfig { n_demos: 2, few_shot: true }
    }
}

impl SelfIclConfig {
    pub fn vanilla() -> Self {
        SelfIclConfig { n_demos: 3, few_shot: false }
    }
}

/// One backend call: the step label, the exact request, and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: String,
    pub request: GenRequest,
    pub response: GenResponse,
}

/// What the run produced, in scoreable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum RunOutcome {
    Tool {
        #[serde(with = "call_strings")]
        calls: Vec<FunctionCall>,
    },
    Math {
        answer: Option<String>,
    },
}

/// Non-semantic metadata. Timestamps live only here so run artifacts stay
/// byte-comparable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
}

/// Full record of one method run over one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub instance_id: String,
    pub method: String,
    pub steps: Vec<StepTrace>,
    /// Demos the method generated and kept, when it is a demo-generating
    /// method; drives error categorization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_demos: Option<Vec<Demo>>,
    pub final_answer_text: String,
    pub outcome: RunOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub meta: RunMeta,
}

/// The prompting methods the run driver knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SelfDemos,
    ZeroShot,
    ZeroShotCot,
    FewShot,
    SelfIcl,
    Analogical,
    SelfConsistency,
    RetrievalBm25,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::SelfDemos,
        Method::ZeroShot,
        Method::ZeroShotCot,
        Method::FewShot,
        Method::SelfIcl,
        Method::Analogical,
        Method::SelfConsistency,
        Method::RetrievalBm25,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SelfDemos => "self-demos",
            Method::ZeroShot => "zero-shot",
            Method::ZeroShotCot => "zero-shot-cot",
            Method::FewShot => "few-shot",
            Method::SelfIcl => "self-icl",
            Method::Analogical => "analogical",
            Method::SelfConsistency => "self-consistency",
            Method::RetrievalBm25 => "retrieval-bm25",
        }
    }

    /// Methods whose runs carry a demo-selection trace.
    pub fn generates_demos(self) -> bool {
        matches!(self, Method::SelfDemos | Method::SelfIcl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method {s:?}; expected one of {}", known.join(", "))
            })
    }
}

/// Stateless strategy executor; share one per worker pool.
pub struct Runner<'a> {
    pub registry: &'a TemplateRegistry,
    pub max_tokens: Option<u32>,
}

/// Collects step traces while issuing backend calls.
struct TraceSession<'a, B: Backend + ?Sized> {
    backend: &'a B,
    instance_id: String,
    max_tokens: Option<u32>,
    steps: Vec<StepTrace>,
    flags: Vec<String>,
}

impl<'a, B: Backend + ?Sized> TraceSession<'a, B> {
    fn new(backend: &'a B, instance_id: &str, max_tokens: Option<u32>) -> Self {
        TraceSession {
            backend,
            instance_id: instance_id.to_string(),
            max_tokens,
            steps: Vec::new(),
            flags: Vec::new(),
        }
    }

    fn call(
        &mut self,
        step: &str,
        prompt: String,
        temperature: f64,
        n: u32,
        sample: Option<u32>,
    ) -> Result<GenResponse, PipelineError> {
        let seed_tag = match sample {
            Some(k) => format!("{}/{step}#{k}", self.instance_id),
            None => format!("{}/{step}", self.instance_id),
        };
        let request = GenRequest {
            prompt,
            temperature,
            n,
            max_tokens: self.max_tokens,
            seed_tag,
        };
        let response = self
            .backend
            .generate(&request)
            .map_err(|source| PipelineError::Backend { step: step.to_string(), source })?;
        self.steps.push(StepTrace {
            step: step.to_string(),
            request,
            response: response.clone(),
        });
        Ok(response)
    }

    fn finish(
        self,
        method: Method,
        selected_demos: Option<Vec<Demo>>,
        final_answer_text: String,
        outcome: RunOutcome,
        extra_flags: Vec<String>,
    ) -> PipelineRun {
        let mut flags = self.flags;
        flags.extend(extra_flags);
        PipelineRun {
            instance_id: self.instance_id,
            method: method.as_str().to_string(),
            steps: self.steps,
            selected_demos,
            final_answer_text,
            outcome,
            flags,
            meta: RunMeta::default(),
        }
    }
}

/// Scoreable outcome of a final completion, plus a no-answer flag for math.
fn outcome_from_text(kind: DemoKind, text: &str) -> (RunOutcome, Vec<String>) {
    match kind {
        DemoKind::Tool => {
            let parsed = toolcall::parse_call_list(text);
            let mut flags = Vec::new();
            if parsed.calls.is_empty() {
                flags.push("final_answer_unparsed".to_string());
            }
            (RunOutcome::Tool { calls: parsed.calls }, flags)
        }
        DemoKind::Math => match scoring::extract_boxed_answer(text) {
            Ok(answer) => (RunOutcome::Math { answer: Some(answer) }, vec![]),
            Err(_) => (
                RunOutcome::Math { answer: None },
                vec!["no_answer".to_string()],
            ),
        },
    }
}

fn baseline_context(instance: &Instance) -> String {
    match instance {
        Instance::Tool(i) => prompts::tool_task_context(&i.tool),
        Instance::Math(_) => prompts::math_task_context().to_string(),
    }
}

fn query_block_for(kind: DemoKind, query: &str) -> String {
    match kind {
        DemoKind::Tool => prompts::tool_query_block(query),
        DemoKind::Math => prompts::math_query_block(query),
    }
}

/// ASCII-case-insensitive substring search; needle must be ASCII.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn find_ci_last(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).rev().find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// First sub-API name mentioned in the understanding, on word boundaries;
/// longer names win position ties so e.g. SEARCH does not shadow SEARCHALL.
fn mentioned_sub_api(understanding: &str, tool: &crate::model::ToolSpec) -> Option<String> {
    let hay = understanding.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut best: Option<(usize, usize, &str)> = None;
    for sub in &tool.sub_apis {
        let mut from = 0;
        while let Some(rel) = find_ci(&understanding[from..], &sub.name) {
            let pos = from + rel;
            let end = pos + sub.name.len();
            let boundary_before = pos == 0 || !is_word(hay[pos - 1]);
            let boundary_after = end >= hay.len() || !is_word(hay[end]);
            if boundary_before && boundary_after {
                let candidate = (pos, sub.name.len(), sub.name.as_str());
                best = match best {
                    Some((bpos, blen, bname)) => {
                        if pos < bpos || (pos == bpos && sub.name.len() > blen) {
                            Some(candidate)
                        } else {
                            Some((bpos, blen, bname))
                        }
                    }
                    None => Some(candidate),
                };
                break;
            }
            from = pos + 1;
        }
    }
    best.map(|(_, _, name)| name.to_string())
}

/// Splits one generated completion into a demo. Tool demos need a
/// `Query:` section and a parseable `Function Calls:` list; math demos need
/// `Question:` and `Answer:` sections.
fn parse_generated_demo(kind: DemoKind, text: &str) -> Option<Demo> {
    match kind {
        DemoKind::Tool => {
            let q_pos = find_ci(text, "query:")?;
            let rest = &text[q_pos + "query:".len()..];
            let marker = ["function calls:", "function call:"]
                .iter()
                .find_map(|m| find_ci(rest, m).map(|pos| (pos, m.len())))?;
            let query = rest[..marker.0].trim();
            let answer_part = &rest[marker.0 + marker.1..];
            let parsed = toolcall::parse_call_list(answer_part);
            if query.is_empty() || parsed.calls.is_empty() {
                return None;
            }
            let rendered: Vec<String> = parsed.calls.iter().map(|c| c.to_string()).collect();
            Some(Demo {
                kind: DemoKind::Tool,
                query: query.to_string(),
                answer_text: format!("[{}]", rendered.join(", ")),
                parsed_calls: Some(parsed.calls),
            })
        }
        DemoKind::Math => {
            let q_pos = find_ci(text, "question:")?;
            let rest = &text[q_pos + "question:".len()..];
            let a_pos = find_ci(rest, "answer:")?;
            let query = rest[..a_pos].trim();
            let answer = rest[a_pos + "answer:".len()..].trim();
            if query.is_empty() || answer.is_empty() {
                return None;
            }
            Some(Demo {
                kind: DemoKind::Math,
                query: query.to_string(),
                answer_text: answer.to_string(),
                parsed_calls: None,
            })
        }
    }
}

/// Parses the `Selection: <x>, <y>` line into 0-based demo indices, keeping
/// the stated order, deduplicated, out-of-range serials dropped.
fn parse_selection(text: &str, available: usize) -> Option<Vec<usize>> {
    let sel_pos = find_ci(text, "selection")?;
    let line = text[sel_pos..].lines().next()?;
    let mut picks: Vec<usize> = Vec::new();
    let mut push = |serial: usize| {
        if serial >= 1 && serial <= available {
            let idx = serial - 1;
            if !picks.contains(&idx) {
                picks.push(idx);
            }
        }
    };
    let angled: Vec<usize> = extract_angled_serials(line);
    if !angled.is_empty() {
        angled.into_iter().for_each(&mut push);
    } else {
        for token in line.split(|c: char| !c.is_ascii_digit()) {
            if let Ok(serial) = token.parse::<usize>() {
                push(serial);
            }
        }
    }
    if picks.is_empty() {
        None
    } else {
        Some(picks)
    }
}

fn extract_angled_serials(line: &str) -> Vec<usize> {
    let mut serials = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'>' {
                if let Ok(serial) = line[i + 1..j].parse::<usize>() {
                    serials.push(serial);
                }
                i = j;
            }
        }
        i += 1;
    }
    serials
}

impl<'a> Runner<'a> {
    pub fn new(registry: &'a TemplateRegistry) -> Self {
        Runner { registry, max_tokens: None }
    }

    /// The four-step workflow: understand the query, generate N candidate
    /// demos conditioned on the understanding and seed demos, keep the best
    /// K by prompted selection, then answer with seeds followed by the kept
    /// demos.
    pub fn run_self_demos(
        &self,
        instance: &Instance,
        cfg: &SelfDemosConfig,
        backend: &dyn Backend,
    ) -> Result<PipelineRun, PipelineError> {
        cfg.validate()?;
        let kind = instance.kind();
        let seeds = instance.seed_demos();
        if let Instance::Tool(i) = instance {
            if i.seed_demos.len() != 3 {
                return Err(PipelineError::BadInstance(format!(
                    "tool instance {} must carry exactly 3 seed demos",
                    i.id
                )));
            }
        }
        if seeds.is_empty() {
            return Err(PipelineError::BadInstance(format!(
                "instance {} has no seed demos",
                instance.id()
            )));
        }
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        let seed_text = format_demos(&seeds, kind)?;

        // Step 1: query understanding (greedy).
        let understand_prompt = match instance {
            Instance::Tool(i) => self.registry.render(
                TemplateId::ToolUnderstand,
                &[
                    ("tool_name", i.tool.api_name.as_str()),
                    ("description", i.tool.description.as_str()),
                    ("specification", &format_specification(&i.tool)),
                    ("query", &i.query),
                ],
            )?,
            Instance::Math(i) => self
                .registry
                .render(TemplateId::MathUnderstand, &[("question", i.question.as_str())])?,
        };
        let understanding = session
            .call("understand", understand_prompt, cfg.temperature_greedy, 1, None)?
            .completions[0]
            .clone();

        // Step 2: query-aware demo generation at sampling temperature.
        let gen_prompt = match instance {
            Instance::Tool(i) => {
                let target = match mentioned_sub_api(&understanding, &i.tool) {
                    Some(name) => name,
                    None => {
                        session.flags.push("understanding_names_no_sub_api".to_string());
                        understanding.trim().to_string()
                    }
                };
                self.registry.render(
                    TemplateId::ToolGen,
                    &[
                        ("tool_name", i.tool.api_name.as_str()),
                        ("description", i.tool.description.as_str()),
                        ("specification", &format_specification(&i.tool)),
                        ("seed_demos", &seed_text),
                        ("function_mentioned_in_step1", &target),
                    ],
                )?
            }
            Instance::Math(i) => self.registry.render(
                TemplateId::MathGen,
                &[
                    ("question", i.question.as_str()),
                    ("understanding", &understanding),
                    ("seed_demos", &seed_text),
                ],
            )?,
        };
        let completions: Vec<String> = if cfg.kv_reuse {
            session
                .call(
                    "demo_gen",
                    gen_prompt,
                    cfg.temperature_sample,
                    cfg.n_generate,
                    None,
                )?
                .completions
        } else {
            let mut completions = Vec::with_capacity(cfg.n_generate as usize);
            for k in 0..cfg.n_generate {
                let response = session.call(
                    "demo_gen",
                    gen_prompt.clone(),
                    cfg.temperature_sample,
                    1,
                    Some(k),
                )?;
                completions.push(response.completions[0].clone());
            }
            completions
        };
        let mut generated: Vec<Demo> = Vec::new();
        for (i, completion) in completions.iter().enumerate() {
            match parse_generated_demo(kind, completion) {
                Some(demo) => generated.push(demo),
                None => session.flags.push(format!("demo_parse_failed:{}", i + 1)),
            }
        }

        // Step 3: best-of-N selection (greedy); skipped when nothing parsed.
        let selected: Vec<Demo> = if generated.is_empty() {
            session.flags.push("all_generated_demos_dropped".to_string());
            Vec::new()
        } else {
            let numbered = format_numbered_demos(&generated, kind)?;
            let sample_prompt = match instance {
                Instance::Tool(i) => self.registry.render(
                    TemplateId::ToolSample,
                    &[
                        ("tool_name", i.tool.api_name.as_str()),
                        ("description", i.tool.description.as_str()),
                        ("specification", &format_specification(&i.tool)),
                        ("generated_demos", &numbered),
                    ],
                )?,
                Instance::Math(i) => self.registry.render(
                    TemplateId::MathSample,
                    &[
                        ("question", i.question.as_str()),
                        ("generated_demos", &numbered),
                    ],
                )?,
            };
            let selection_text = session
                .call("sample", sample_prompt, cfg.temperature_greedy, 1, None)?
                .completions[0]
                .clone();
            match parse_selection(&selection_text, generated.len()) {
                Some(picks) => picks
                    .into_iter()
                    .take(cfg.k_select as usize)
                    .map(|i| generated[i].clone())
                    .collect(),
                None => {
                    // deterministic fallback: keep the first K in order
                    session.flags.push("selection_fallback_first_k".to_string());
                    generated
                        .iter()
                        .take(cfg.k_select as usize)
                        .cloned()
                        .collect()
                }
            }
        };

        // Step 4: respond with seed demos first, then the kept demos.
        let selected_text = if selected.is_empty() {
            String::new()
        } else {
            format_demos(&selected, kind)?
        };
        let respond_prompt = match instance {
            Instance::Tool(i) => self.registry.render(
                TemplateId::ToolRespond,
                &[
                    ("tool_name", i.tool.api_name.as_str()),
                    ("description", i.tool.description.as_str()),
                    ("specification", &format_specification(&i.tool)),
                    ("seed_demos", &seed_text),
                    ("selected_demos", &selected_text),
                    ("query", &i.query),
                ],
            )?,
            Instance::Math(i) => self.registry.render(
                TemplateId::MathRespond,
                &[
                    ("seed_demos", &seed_text),
                    ("selected_demos", &selected_text),
                    ("question", i.question.as_str()),
                ],
            )?,
        };
        let final_text = session
            .call("respond", respond_prompt, cfg.temperature_greedy, 1, None)?
            .completions[0]
            .clone();
        let (outcome, flags) = outcome_from_text(kind, &final_text);
        Ok(session.finish(Method::SelfDemos, Some(selected), final_text, outcome, flags))
    }

    /// Single greedy call with the task context and no demos; `cot` appends
    /// the step-by-step trigger.
    pub fn run_zero_shot(
        &self,
        instance: &Instance,
        backend: &dyn Backend,
        cot: bool,
    ) -> Result<PipelineRun, PipelineError> {
        let template = if cot { TemplateId::ZeroShotCot } else { TemplateId::ZeroShot };
        let method = if cot { Method::ZeroShotCot } else { Method::ZeroShot };
        let prompt = self.registry.render(
            template,
            &[
                ("context", &baseline_context(instance)),
                ("query_block", &query_block_for(instance.kind(), instance.query())),
            ],
        )?;
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        let final_text = session.call("answer", prompt, 0.0, 1, None)?.completions[0].clone();
        let (outcome, flags) = outcome_from_text(instance.kind(), &final_text);
        Ok(session.finish(method, None, final_text, outcome, flags))
    }

    /// Single greedy call with the fixed seed demos ahead of the query.
    pub fn run_few_shot(
        &self,
        instance: &Instance,
        backend: &dyn Backend,
    ) -> Result<PipelineRun, PipelineError> {
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        let prompt = self.few_shot_prompt(instance, None)?;
        let final_text = session.call("answer", prompt, 0.0, 1, None)?.completions[0].clone();
        let (outcome, flags) = outcome_from_text(instance.kind(), &final_text);
        Ok(session.finish(Method::FewShot, None, final_text, outcome, flags))
    }

    /// The few-shot prompt, optionally with extra demos appended after the
    /// seeds (seed demos always come first).
    pub fn few_shot_prompt(
        &self,
        instance: &Instance,
        extra_demos: Option<&[Demo]>,
    ) -> Result<String, PipelineError> {
        let mut demos = instance.seed_demos();
        if demos.is_empty() {
            return Err(PipelineError::BadInstance(format!(
                "instance {} has no seed demos",
                instance.id()
            )));
        }
        if let Some(extra) = extra_demos {
            demos.extend(extra.iter().cloned());
        }
        Ok(self.registry.render(
            TemplateId::FewShot,
            &[
                ("context", &baseline_context(instance)),
                ("seed_demos", &format_demos(&demos, instance.kind())?),
                ("query_block", &query_block_for(instance.kind(), instance.query())),
            ],
        )?)
    }

    /// Pseudo-input generation, one labeling call per pseudo-input, then a
    /// few-shot answer over seed + pseudo demos: 1 + n_demos + 1 calls.
    pub fn run_self_icl(
        &self,
        instance: &Instance,
        cfg: &SelfIclConfig,
        backend: &dyn Backend,
    ) -> Result<PipelineRun, PipelineError> {
        if cfg.n_demos < 1 {
            return Err(PipelineError::BadConfig("n_demos must be >= 1".into()));
        }
        let kind = instance.kind();
        let seeds = instance.seed_demos();
        if cfg.few_shot && seeds.is_empty() {
            return Err(PipelineError::BadInstance(format!(
                "few-shot self-icl needs seed demos on instance {}",
                instance.id()
            )));
        }
        let context = baseline_context(instance);
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);

        let seed_text = if cfg.few_shot {
            Some(format_demos(&seeds, kind)?)
        } else {
            None
        };
        let inputs_prompt = self.registry.render(
            TemplateId::SelfIclInputs,
            &[
                ("context", &context),
                ("demos_block", &demos_section(seed_text.as_deref())),
                ("query", instance.query()),
                ("n_demos", &cfg.n_demos.to_string()),
            ],
        )?;
        let inputs_text = session
            .call("pseudo_inputs", inputs_prompt, 0.0, 1, None)?
            .completions[0]
            .clone();
        let pseudo_inputs = parse_numbered_lines(&inputs_text, cfg.n_demos as usize);

        if pseudo_inputs.is_empty() {
            // unusable pseudo-input list: degrade to plain few-shot
            session.flags.push("pseudo_inputs_fallback_few_shot".to_string());
            let prompt = self.few_shot_prompt(instance, None)?;
            let final_text = session.call("respond", prompt, 0.0, 1, None)?.completions[0].clone();
            let (outcome, flags) = outcome_from_text(kind, &final_text);
            return Ok(session.finish(Method::SelfIcl, Some(vec![]), final_text, outcome, flags));
        }

        let mut pseudo_demos: Vec<Demo> = Vec::with_capacity(pseudo_inputs.len());
        for (i, pseudo_query) in pseudo_inputs.iter().enumerate() {
            let label_prompt = self.registry.render(
                TemplateId::SelfIclLabels,
                &[
                    ("context", &context),
                    ("query_block", &query_block_for(kind, pseudo_query)),
                ],
            )?;
            let label = session
                .call("label", label_prompt, 0.0, 1, Some(i as u32))?
                .completions[0]
                .clone();
            pseudo_demos.push(demo_from_label(kind, pseudo_query, &label));
        }

        let mut demos = if cfg.few_shot { seeds } else { Vec::new() };
        demos.extend(pseudo_demos.iter().cloned());
        let respond_prompt = self.registry.render(
            TemplateId::FewShot,
            &[
                ("context", &context),
                ("seed_demos", &format_demos(&demos, kind)?),
                ("query_block", &query_block_for(kind, instance.query())),
            ],
        )?;
        let final_text = session.call("respond", respond_prompt, 0.0, 1, None)?.completions[0]
            .clone();
        let (outcome, mut flags) = outcome_from_text(kind, &final_text);
        if !cfg.few_shot {
            flags.push("variant:vanilla".to_string());
        }
        Ok(session.finish(Method::SelfIcl, Some(pseudo_demos), final_text, outcome, flags))
    }

    /// One call that first recalls exemplars, then answers; only the section
    /// after the final answer marker is scored.
    pub fn run_analogical(
        &self,
        instance: &Instance,
        backend: &dyn Backend,
        few_shot: bool,
    ) -> Result<PipelineRun, PipelineError> {
        let kind = instance.kind();
        let seeds = instance.seed_demos();
        if few_shot && seeds.is_empty() {
            return Err(PipelineError::BadInstance(format!(
                "few-shot analogical needs seed demos on instance {}",
                instance.id()
            )));
        }
        let n_recall = if few_shot { 2u32 } else { 3 };
        let seed_text = if few_shot {
            Some(format_demos(&seeds, kind)?)
        } else {
            None
        };
        let prompt = self.registry.render(
            TemplateId::Analogical,
            &[
                ("context", &baseline_context(instance)),
                ("demos_block", &demos_section(seed_text.as_deref())),
                ("n_recall", &n_recall.to_string()),
                ("query_block", &query_block_for(kind, instance.query())),
            ],
        )?;
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        let final_text = session.call("answer", prompt, 0.0, 1, None)?.completions[0].clone();

        let (answer_section, mut flags) = match find_ci_last(&final_text, "answer:") {
            Some(pos) => (&final_text[pos + "answer:".len()..], vec![]),
            None => (final_text.as_str(), vec!["no_answer_marker".to_string()]),
        };
        let (outcome, outcome_flags) = outcome_from_text(kind, answer_section);
        flags.extend(outcome_flags);
        if !few_shot {
            flags.push("variant:vanilla".to_string());
        }
        Ok(session.finish(Method::Analogical, None, final_text, outcome, flags))
    }

    /// One sampled call with n = paths over the few-shot prompt; canonical
    /// answers vote, ties break toward the earliest path.
    pub fn run_self_consistency(
        &self,
        instance: &Instance,
        backend: &dyn Backend,
        paths: u32,
    ) -> Result<PipelineRun, PipelineError> {
        if paths < 1 {
            return Err(PipelineError::BadConfig("paths must be >= 1".into()));
        }
        let kind = instance.kind();
        let prompt = self.few_shot_prompt(instance, None)?;
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        let completions = session
            .call("answer", prompt, 0.7, paths, None)?
            .completions;

        // canonical form per path; unparseable paths do not vote
        let mut tally: Vec<(String, usize, usize)> = Vec::new(); // (canon, votes, first path)
        for (path_idx, completion) in completions.iter().enumerate() {
            let canon = match kind {
                DemoKind::Tool => {
                    let parsed = toolcall::parse_call_list(completion);
                    if parsed.calls.is_empty() {
                        continue;
                    }
                    let mut keys: Vec<String> = parsed
                        .calls
                        .iter()
                        .map(crate::model::canonical_call_key)
                        .collect();
                    keys.sort();
                    keys.join(";")
                }
                DemoKind::Math => match scoring::extract_boxed_answer(completion) {
                    Ok(answer) => answer,
                    Err(_) => continue,
                },
            };
            match tally.iter_mut().find(|(c, _, _)| *c == canon) {
                Some(entry) => entry.1 += 1,
                None => tally.push((canon, 1, path_idx)),
            }
        }

        let winner = tally
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .cloned();
        match winner {
            Some((_, _, path_idx)) => {
                let final_text = completions[path_idx].clone();
                let (outcome, flags) = outcome_from_text(kind, &final_text);
                Ok(session.finish(Method::SelfConsistency, None, final_text, outcome, flags))
            }
            None => {
                let final_text = completions.first().cloned().unwrap_or_default();
                let outcome = match kind {
                    DemoKind::Tool => RunOutcome::Tool { calls: vec![] },
                    DemoKind::Math => RunOutcome::Math { answer: None },
                };
                Ok(session.finish(
                    Method::SelfConsistency,
                    None,
                    final_text,
                    outcome,
                    vec!["no_answer".to_string()],
                ))
            }
        }
    }

    /// Few-shot over the top-k BM25 neighbours from a labeled corpus.
    pub fn run_retrieval_bm25(
        &self,
        instance: &Instance,
        corpus: &Corpus,
        k: usize,
        backend: &dyn Backend,
    ) -> Result<PipelineRun, PipelineError> {
        let kind = instance.kind();
        let retrieved = corpus.retrieve_top_k(instance.query(), k);
        if retrieved.hits.is_empty() {
            return Err(PipelineError::BadConfig("retrieval corpus is empty".into()));
        }
        let demos: Vec<Demo> = retrieved
            .hits
            .iter()
            .map(|(entry, _)| entry.to_demo(kind))
            .collect();
        let prompt = self.registry.render(
            TemplateId::FewShot,
            &[
                ("context", &baseline_context(instance)),
                ("seed_demos", &format_demos(&demos, kind)?),
                ("query_block", &query_block_for(kind, instance.query())),
            ],
        )?;
        let mut session = TraceSession::new(backend, instance.id(), self.max_tokens);
        if retrieved.short {
            session.flags.push("corpus_smaller_than_k".to_string());
        }
        let final_text = session.call("answer", prompt, 0.0, 1, None)?.completions[0].clone();
        let (outcome, flags) = outcome_from_text(kind, &final_text);
        Ok(session.finish(Method::RetrievalBm25, Some(demos), final_text, outcome, flags))
    }
}

/// Extracts up to `limit` entries of a numbered list ("1. ...", "2) ...").
fn parse_numbered_lines(text: &str, limit: usize) -> Vec<String> {
    let mut items = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let rest = &trimmed[digits.len()..];
        let Some(rest) = rest.strip_prefix(['.', ')']) else { continue };
        let item = rest.trim();
        if !item.is_empty() {
            items.push(item.to_string());
        }
        if items.len() == limit {
            break;
        }
    }
    items
}

/// Wraps a labeling completion into a demo; tool answers are reformatted to
/// the canonical call-list form when they parse.
fn demo_from_label(kind: DemoKind, query: &str, label: &str) -> Demo {
    match kind {
        DemoKind::Tool => {
            let parsed = toolcall::parse_call_list(label);
            if parsed.calls.is_empty() {
                Demo {
                    kind,
                    query: query.to_string(),
                    answer_text: label.trim().to_string(),
                    parsed_calls: None,
                }
            } else {
                let rendered: Vec<String> =
                    parsed.calls.iter().map(|c| c.to_string()).collect();
                Demo {
                    kind,
                    query: query.to_string(),
                    answer_text: format!("[{}]", rendered.join(", ")),
                    parsed_calls: Some(parsed.calls),
                }
            }
        }
        DemoKind::Math => Demo {
            kind,
            query: query.to_string(),
            answer_text: label.trim().to_string(),
            parsed_calls: None,
        },
    }
}
