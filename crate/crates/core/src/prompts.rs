//! Prompt template registry and rendering.
//!
//! Template bodies live as data files under `templates/` and are pinned by
//! sha256 golden hashes, so prompt edits are deliberate and show up in
//! review. The four tool-task and four math-task step templates are fixed
//! artifacts; the baseline templates are kind-agnostic scaffolds filled via
//! the `*_context` / `*_query_block` builders below.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Demo, DemoKind, ToolSpec};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {id} missing binding for slot {{{slot}}}")]
    MissingSlot { id: TemplateId, slot: String },
    #[error("template {id} does not take a slot named {{{slot}}}")]
    UnknownSlot { id: TemplateId, slot: String },
    #[error("template {id} body does not match its golden hash (got {got}, want {want}); edit the hash table if the change is intended")]
    HashMismatch { id: TemplateId, got: String, want: String },
    #[error("template {id} slots {found:?} do not match the expected {expected:?}")]
    SlotMismatch {
        id: TemplateId,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("cannot read template {id} from {path}: {source}")]
    Io {
        id: TemplateId,
        path: String,
        source: std::io::Error,
    },
    #[error("demo list is empty")]
    EmptyDemos,
    #[error("demo kind mismatch: expected {expected:?}")]
    KindMismatch { expected: DemoKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ToolUnderstand,
    ToolGen,
    ToolSample,
    ToolRespond,
    MathUnderstand,
    MathGen,
    MathSample,
    MathRespond,
    ZeroShot,
    ZeroShotCot,
    FewShot,
    SelfIclInputs,
    SelfIclLabels,
    Analogical,
}

impl TemplateId {
    pub const ALL: [TemplateId; 14] = [
        TemplateId::ToolUnderstand,
        TemplateId::ToolGen,
        TemplateId::ToolSample,
        TemplateId::ToolRespond,
        TemplateId::MathUnderstand,
        TemplateId::MathGen,
        TemplateId::MathSample,
        TemplateId::MathRespond,
        TemplateId::ZeroShot,
        TemplateId::ZeroShotCot,
        TemplateId::FewShot,
        TemplateId::SelfIclInputs,
        TemplateId::SelfIclLabels,
        TemplateId::Analogical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::ToolUnderstand => "tool_understand",
            TemplateId::ToolGen => "tool_gen",
            TemplateId::ToolSample => "tool_sample",
            TemplateId::ToolRespond => "tool_respond",
            TemplateId::MathUnderstand => "math_understand",
            TemplateId::MathGen => "math_gen",
            TemplateId::MathSample => "math_sample",
            TemplateId::MathRespond => "math_respond",
            TemplateId::ZeroShot => "zero_shot",
            TemplateId::ZeroShotCot => "zero_shot_cot",
            TemplateId::FewShot => "few_shot",
            TemplateId::SelfIclInputs => "self_icl_inputs",
            TemplateId::SelfIclLabels => "self_icl_labels",
            TemplateId::Analogical => "analogical",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.name())
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::ToolUnderstand => include_str!("../templates/tool_understand.txt"),
            TemplateId::ToolGen => include_str!("../templates/tool_gen.txt"),
            TemplateId::ToolSample => include_str!("../templates/tool_sample.txt"),
            TemplateId::ToolRespond => include_str!("../templates/tool_respond.txt"),
            TemplateId::MathUnderstand => include_str!("../templates/math_understand.txt"),
            TemplateId::MathGen => include_str!("../templates/math_gen.txt"),
            TemplateId::MathSample => include_str!("../templates/math_sample.txt"),
            TemplateId::MathRespond => include_str!("../templates/math_respond.txt"),
            TemplateId::ZeroShot => include_str!("../templates/zero_shot.txt"),
            TemplateId::ZeroShotCot => include_str!("../templates/zero_shot_cot.txt"),
            TemplateId::FewShot => include_str!("../templates/few_shot.txt"),
            TemplateId::SelfIclInputs => include_str!("../templates/self_icl_inputs.txt"),
            TemplateId::SelfIclLabels => include_str!("../templates/self_icl_labels.txt"),
            TemplateId::Analogical => include_str!("../templates/analogical.txt"),
        }
    }

    fn golden_hash(self) -> &'static str {
        match self {
            TemplateId::ToolUnderstand => {
                "9025c91a8310aa9ee1836927d154f63e172aca4a5acc2f38f6b21718538afa12"
            }
            TemplateId::ToolGen => {
                "72de8c07cd95ebc6b3390223bbf2aa2499903a9ec2f64db4a49b3058e93f31b1"
            }
            TemplateId::ToolSample => {
                "82f0c5d0d7932d6facaba4a2e7eb591c5cd05b47fe6b0d25d462aea9f3edd0c1"
            }
            TemplateId::ToolRespond => {
                "5381bb78ae8ecfdb32f5ec1fdf42c012de6d52fe0316cbe7c22c8fca3252064a"
            }
            TemplateId::MathUnderstand => {
                "47a8dad019126229d4b45b10c0e8a1b3a63eb6658583fefa31856d4318c850d4"
            }
            TemplateId::MathGen => {
                "b89bc2a4723c7fa1ed91133f78871c808281799d6dc39ab6760f03c2fbb297d3"
            }
            TemplateId::MathSample => {
                "7883fb862d07eb1d099002add754049bb365767491509e251a63271102197491"
            }
            TemplateId::MathRespond => {
                "92571d13096609598fca6a8e94dafaef6b25cf4975e34248d35021c924ef0ee2"
            }
            TemplateId::ZeroShot => {
                "91778f32dd6a742a07dcd20707c9a0c0c21d62bf62062eebbb9246b09078857e"
            }
            TemplateId::ZeroShotCot => {
                "010fc2bd73c3457dd473313b235f531560a0d9522487a09eace5c62a4e0137b5"
            }
            TemplateId::FewShot => {
                "49268f709e69c8c3789e0f2fc57931596f94c6a311550d3f0f1b9332b39a8c43"
            }
            TemplateId::SelfIclInputs => {
                "5b590e3040d38b8289248aed961532deacc2c4113c6d2ea388aa911320a82fdf"
            }
            TemplateId::SelfIclLabels => {
                "fc5c3778ada5a723f409d9967167fc6a5fa3201946b6db1817c4f2420ef66772"
            }
            TemplateId::Analogical => {
                "84cc78a1e146cb5beb1cf8c1d4bf9055eb92bd5a1fe2aada9738aab070ce0559"
            }
        }
    }

    fn expected_slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::ToolUnderstand => &["tool_name", "description", "specification", "query"],
            TemplateId::ToolGen => &[
                "tool_name",
                "description",
                "specification",
                "seed_demos",
                "function_mentioned_in_step1",
            ],
            TemplateId::ToolSample => {
                &["tool_name", "description", "specification", "generated_demos"]
            }
            TemplateId::ToolRespond => &[
                "tool_name",
                "description",
                "specification",
                "seed_demos",
                "selected_demos",
                "query",
            ],
            TemplateId::MathUnderstand => &["question"],
            TemplateId::MathGen => &["question", "understanding", "seed_demos"],
            TemplateId::MathSample => &["question", "generated_demos"],
            TemplateId::MathRespond => &["seed_demos", "selected_demos", "question"],
            TemplateId::ZeroShot | TemplateId::ZeroShotCot | TemplateId::SelfIclLabels => {
                &["context", "query_block"]
            }
            TemplateId::FewShot => &["context", "seed_demos", "query_block"],
            TemplateId::SelfIclInputs => &["context", "demos_block", "query", "n_demos"],
            TemplateId::Analogical => &["context", "demos_block", "n_recall", "query_block"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pub required_slots: BTreeSet<String>,
}

/// Finds `{identifier}` placeholders in a body. Non-identifier brace pairs
/// such as the `{}` in `\boxed{}` are literal text.
fn scan_slots(body: &str) -> BTreeSet<String> {
    let mut slots = BTreeSet::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some((name, _end)) = slot_at(body, i) {
                slots.insert(name.to_string());
            }
        }
        i += 1;
    }
    slots
}

/// If `open` starts a `{identifier}` placeholder, returns (name, index past `}`).
fn slot_at(body: &str, open: usize) -> Option<(&str, usize)> {
    let rest = &body[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    if crate::model::is_identifier(name) {
        Some((name, open + 1 + close + 1))
    } else {
        None
    }
}

impl PromptTemplate {
    fn checked(id: TemplateId, body: String) -> Result<Self, PromptError> {
        let digest = hex_sha256(body.as_bytes());
        if digest != id.golden_hash() {
            return Err(PromptError::HashMismatch {
                id,
                got: digest,
                want: id.golden_hash().to_string(),
            });
        }
        Self::unchecked(id, body)
    }

    fn unchecked(id: TemplateId, body: String) -> Result<Self, PromptError> {
        let required_slots = scan_slots(&body);
        let expected: BTreeSet<String> =
            id.expected_slots().iter().map(|s| s.to_string()).collect();
        if required_slots != expected {
            return Err(PromptError::SlotMismatch {
                id,
                found: required_slots.into_iter().collect(),
                expected: expected.into_iter().collect(),
            });
        }
        Ok(PromptTemplate { id, body, required_slots })
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read-only template registry; load once, share freely.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateRegistry {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let template = PromptTemplate::checked(id, id.builtin_body().to_string())
                .expect("builtin templates match their golden hashes");
            templates.insert(id, template);
        }
        TemplateRegistry { templates }
    }

    /// Loads `<id>.txt` files from a directory, verifying each against its
    /// golden hash.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::load_dir(dir, true)
    }

    /// Like [`TemplateRegistry::from_dir`] but skips the hash check, for
    /// experimenting with edited bodies. Slot sets are still enforced.
    pub fn from_dir_unchecked(dir: &Path) -> Result<Self, PromptError> {
        Self::load_dir(dir, false)
    }

    fn load_dir(dir: &Path, check_hash: bool) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                id,
                path: path.display().to_string(),
                source,
            })?;
            let template = if check_hash {
                PromptTemplate::checked(id, body)?
            } else {
                PromptTemplate::unchecked(id, body)?
            };
            templates.insert(id, template);
        }
        Ok(TemplateRegistry { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Byte-exact placeholder substitution. Bindings must cover the required
    /// slots exactly; values are not re-expanded.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &[(&str, &str)],
    ) -> Result<String, PromptError> {
        let template = self.get(id);
        for (name, _) in bindings {
            if !template.required_slots.contains(*name) {
                return Err(PromptError::UnknownSlot { id, slot: name.to_string() });
            }
        }
        for slot in &template.required_slots {
            if !bindings.iter().any(|(name, _)| name == slot) {
                return Err(PromptError::MissingSlot { id, slot: slot.clone() });
            }
        }

        let body = &template.body;
        let mut out = String::with_capacity(body.len());
        let mut i = 0;
        while let Some(rel) = body[i..].find('{') {
            let open = i + rel;
            out.push_str(&body[i..open]);
            match slot_at(body, open) {
                Some((name, end)) => {
                    let value = bindings
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| *v)
                        .expect("coverage checked above");
                    out.push_str(value);
                    i = end;
                }
                None => {
                    out.push('{');
                    i = open + 1;
                }
            }
        }
        out.push_str(&body[i..]);
        Ok(out)
    }
}

/// Renders demos as prompt blocks: `Query:`/`Function calls:` pairs for tool
/// demos, `Question:`/`Answer:` pairs for math, separated by blank lines.
pub fn format_demos(demos: &[Demo], kind: DemoKind) -> Result<String, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::EmptyDemos);
    }
    let blocks: Result<Vec<String>, PromptError> =
        demos.iter().map(|d| format_demo(d, kind)).collect();
    Ok(blocks?.join("\n\n"))
}

fn format_demo(demo: &Demo, kind: DemoKind) -> Result<String, PromptError> {
    if demo.kind != kind {
        return Err(PromptError::KindMismatch { expected: kind });
    }
    Ok(match kind {
        DemoKind::Tool => format!("Query: {}\nFunction calls: {}", demo.query, demo.answer_text),
        DemoKind::Math => format!("Question: {}\nAnswer: {}", demo.query, demo.answer_text),
    })
}

/// Numbered variant used when demos are listed for selection.
pub fn format_numbered_demos(demos: &[Demo], kind: DemoKind) -> Result<String, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::EmptyDemos);
    }
    let mut blocks = Vec::with_capacity(demos.len());
    for (i, demo) in demos.iter().enumerate() {
        blocks.push(format!("Example {}:\n{}", i + 1, format_demo(demo, kind)?));
    }
    Ok(blocks.join("\n\n"))
}

/// Renders a tool's usage specification in the dataset's display form:
/// one block per sub-API with its parameter map.
pub fn format_specification(tool: &ToolSpec) -> String {
    let mut blocks = Vec::with_capacity(tool.sub_apis.len());
    for sub in &tool.sub_apis {
        let params: Vec<String> = sub
            .params
            .iter()
            .map(|p| {
                format!(
                    "\"{}\": \"{}. {}. {}\"",
                    p.name,
                    if p.required { "Required" } else { "Optional" },
                    p.value_type,
                    p.description
                )
            })
            .collect();
        blocks.push(format!(
            "{}: {}\nParameters: {{{}}}",
            sub.name,
            sub.description,
            params.join(", ")
        ));
    }
    blocks.join("\n\n")
}

/// Task context for baseline prompts on the tool task: header sentence plus
/// the usage specification, no demos.
pub fn tool_task_context(tool: &ToolSpec) -> String {
    format!(
        "The {} API is used for {}. In this task, you must generate the function calls for a given query.\n\n# Tool Specification:\n{}",
        tool.api_name,
        tool.description,
        format_specification(tool)
    )
}

/// Task context for baseline prompts on the math task.
pub fn math_task_context() -> &'static str {
    "Your task is to tackle mathematical problems step by step."
}

/// Query block instructing the tool answer format.
pub fn tool_query_block(query: &str) -> String {
    format!(
        "Query: {query}\nFunction calls: Give your answer in the format of [\"function_name(parameter=value)\"]."
    )
}

/// Query block instructing the boxed math answer format.
pub fn math_query_block(question: &str) -> String {
    format!(
        "Question: {question}\nAnswer: Explain the step-by-step solution and enclose the ultimate answer in \\boxed{{}} here."
    )
}

/// A `# Demonstration:` section (with trailing separation) or an empty string,
/// for templates whose demos are optional.
pub fn demos_section(rendered_demos: Option<&str>) -> String {
    match rendered_demos {
        Some(demos) => format!("# Demonstration:\n{demos}\n\n"),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::map_tool;

    #[test]
    fn builtin_registry_loads_and_matches_golden_hashes() {
        let registry = TemplateRegistry::builtin();
        for id in TemplateId::ALL {
            assert!(!registry.get(id).body.is_empty(), "{id} is empty");
        }
    }

    #[test]
    fn tool_understand_contains_its_anchor_phrase() {
        let registry = TemplateRegistry::builtin();
        let tool = map_tool();
        let rendered = registry
            .render(
                TemplateId::ToolUnderstand,
                &[
                    ("tool_name", tool.api_name.as_str()),
                    ("description", tool.description.as_str()),
                    ("specification", &format_specification(&tool)),
                    ("query", "How far is Beijing to Shanghai?"),
                ],
            )
            .unwrap();
        assert!(rendered.contains("give a general understanding of the user query"));
        assert!(rendered.contains("DISTANCE: Calculate the distance between two points."));
        assert!(rendered.contains("\"distance\": \"Required. Integer. The search radius in kilometers.\""));
    }

    #[test]
    fn math_gen_keeps_boxed_braces_literal() {
        let registry = TemplateRegistry::builtin();
        let rendered = registry
            .render(
                TemplateId::MathGen,
                &[
                    ("question", "q"),
                    ("understanding", "u"),
                    ("seed_demos", "d"),
                ],
            )
            .unwrap();
        assert!(rendered.contains("The example should be distinct from the initial problem"));
        assert!(rendered.contains("\\boxed{}"));
    }

    #[test]
    fn missing_and_unknown_slots_are_rejected() {
        let registry = TemplateRegistry::builtin();
        let err = registry
            .render(
                TemplateId::ToolUnderstand,
                &[
                    ("tool_name", "Map"),
                    ("description", "d"),
                    ("specification", "s"),
                ],
            )
            .unwrap_err();
        assert!(matches!(err, PromptError::MissingSlot { slot, .. } if slot == "query"));

        let err = registry
            .render(TemplateId::MathUnderstand, &[("question", "q"), ("extra", "x")])
            .unwrap_err();
        assert!(matches!(err, PromptError::UnknownSlot { slot, .. } if slot == "extra"));
    }

    #[test]
    fn rendering_is_not_recursive() {
        let registry = TemplateRegistry::builtin();
        let rendered = registry
            .render(TemplateId::MathUnderstand, &[("question", "{question} again")])
            .unwrap();
        assert!(rendered.contains("{question} again"));
        // the slot value itself must appear exactly once substituted
        assert_eq!(rendered.matches("{question}").count(), 1);
    }

    #[test]
    fn zero_shot_cot_contains_the_trigger() {
        let registry = TemplateRegistry::builtin();
        let body = &registry.get(TemplateId::ZeroShotCot).body;
        assert!(body.contains("let's think step by step"));
        assert!(!registry.get(TemplateId::ZeroShot).body.contains("think step by step"));
    }

    #[test]
    fn demo_blocks_render_per_kind() {
        let tool = map_tool();
        let demo = Demo::from_case(&tool.cases[0]);
        let block = format_demos(std::slice::from_ref(&demo), DemoKind::Tool).unwrap();
        assert_eq!(
            block,
            "Query: How far is Beijing to Shanghai?\nFunction calls: [DISTANCE(start=\"Beijing\", target=\"Shanghai\")]"
        );

        let two = format_demos(
            &[demo.clone(), Demo::from_case(&tool.cases[1])],
            DemoKind::Tool,
        )
        .unwrap();
        assert_eq!(two.matches("\n\n").count(), 1);

        let math = Demo {
            kind: DemoKind::Math,
            query: "What is 2+2?".into(),
            answer_text: "2+2 = 4, so the answer is \\boxed{4}.".into(),
            parsed_calls: None,
        };
        let block = format_demos(std::slice::from_ref(&math), DemoKind::Math).unwrap();
        assert!(block.starts_with("Question: "));
        assert!(block.contains("\\boxed{4}"));

        assert!(matches!(
            format_demos(&[math], DemoKind::Tool),
            Err(PromptError::KindMismatch { .. })
        ));
        assert!(matches!(format_demos(&[], DemoKind::Tool), Err(PromptError::EmptyDemos)));
    }

    #[test]
    fn numbered_demos_carry_serials() {
        let tool = map_tool();
        let demos: Vec<Demo> = tool.cases.iter().map(Demo::from_case).collect();
        let text = format_numbered_demos(&demos, DemoKind::Tool).unwrap();
        assert!(text.contains("Example 1:\nQuery:"));
        assert!(text.contains("Example 3:"));
    }

    #[test]
    fn from_dir_checks_hashes() {
        let dir = tempfile::tempdir().unwrap();
        for id in TemplateId::ALL {
            std::fs::write(dir.path().join(id.file_name()), id.builtin_body()).unwrap();
        }
        assert!(TemplateRegistry::from_dir(dir.path()).is_ok());

        std::fs::write(
            dir.path().join(TemplateId::ZeroShot.file_name()),
            "{context}\n\nedited\n{query_block}\n",
        )
        .unwrap();
        let err = TemplateRegistry::from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::HashMismatch { id: TemplateId::ZeroShot, .. }));
        assert!(TemplateRegistry::from_dir_unchecked(dir.path()).is_ok());
    }

    #[test]
    fn distinct_bindings_render_distinctly() {
        let registry = TemplateRegistry::builtin();
        let a = registry
            .render(TemplateId::ZeroShot, &[("context", "ctxA"), ("query_block", "qb1")])
            .unwrap();
        let b = registry
            .render(TemplateId::ZeroShot, &[("context", "ctxB"), ("query_block", "qb2")])
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn demos_section_is_empty_or_headed() {
        assert_eq!(demos_section(None), "");
        let section = demos_section(Some("Query: q\nFunction calls: [F(x=1)]"));
        assert!(section.starts_with("# Demonstration:\n"));
        assert!(section.ends_with("\n\n"));
    }

    // keep the display form of seed cases aligned with what the parser accepts
    #[test]
    fn seed_demo_text_reparses() {
        let tool = map_tool();
        for case in &tool.cases {
            let demo = Demo::from_case(case);
            let parsed = crate::toolcall::parse_call_list(&demo.answer_text);
            assert_eq!(parsed.calls, case.calls, "case {:?}", case.query);
        }
    }
}
