//! Shared domain types: tool specifications, function calls, instances, and demos.
//!
//! Types here carry no behavior beyond construction-time invariant checks and
//! canonical (de)serialization for the dataset file format. Everything is
//! immutable after construction and safe to share across threads.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what} must be a non-empty identifier, got {got:?}")]
    InvalidIdentifier { what: &'static str, got: String },
    #[error("duplicate {what} {name:?}")]
    DuplicateName { what: &'static str, name: String },
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("numeric parameter values must be finite")]
    NonFiniteNumber,
    #[error("case must have between 1 and 3 calls, got {0}")]
    CallCount(usize),
    #[error("instance requires exactly 3 seed demos, got {0}")]
    SeedDemoCount(usize),
    #[error("seed demos share sub-APIs with the gold calls: {0:?}")]
    NotDisjoint(Vec<String>),
    #[error("level must be in 1..=5, got {0}")]
    LevelOutOfRange(u8),
    #[error("tool needs at least 3 sub-APIs and 3 cases after cleaning ({sub_apis} sub-APIs, {cases} cases)")]
    ToolTooSmall { sub_apis: usize, cases: usize },
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Declared type of a sub-API parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamType::String => "String",
            ParamType::Integer => "Integer",
            ParamType::Number => "Number",
            ParamType::Boolean => "Boolean",
        };
        f.write_str(s)
    }
}

/// One typed parameter in a sub-API's usage specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub required: bool,
    #[serde(rename = "type")]
    pub value_type: ParamType,
    pub description: String,
}

/// One callable function within a tool (e.g. DISTANCE within Map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubApiSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl SubApiSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !is_identifier(&self.name) {
            return Err(ModelError::InvalidIdentifier {
                what: "sub-API name",
                got: self.name.clone(),
            });
        }
        let mut seen = Vec::new();
        for p in &self.params {
            if !is_identifier(&p.name) {
                return Err(ModelError::InvalidIdentifier {
                    what: "parameter name",
                    got: p.name.clone(),
                });
            }
            if seen.contains(&p.name.as_str()) {
                return Err(ModelError::DuplicateName {
                    what: "parameter",
                    name: p.name.clone(),
                });
            }
            seen.push(p.name.as_str());
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// A tool: name, description, usage specification, and tool-use cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub api_name: String,
    pub description: String,
    pub sub_apis: Vec<SubApiSpec>,
    pub cases: Vec<ToolUseCase>,
}

impl ToolSpec {
    /// Checks the post-cleaning invariants: identifiers well-formed, sub-API
    /// names unique case-insensitively, and the minimum sizes required for
    /// assembling OOD instances.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !is_identifier(&self.api_name) {
            return Err(ModelError::InvalidIdentifier {
                what: "api_name",
                got: self.api_name.clone(),
            });
        }
        let mut seen: Vec<String> = Vec::new();
        for sub in &self.sub_apis {
            sub.validate()?;
            let lower = sub.name.to_lowercase();
            if seen.contains(&lower) {
                return Err(ModelError::DuplicateName {
                    what: "sub-API",
                    name: sub.name.clone(),
                });
            }
            seen.push(lower);
        }
        for case in &self.cases {
            case.validate()?;
        }
        if self.sub_apis.len() < 3 || self.cases.len() < 3 {
            return Err(ModelError::ToolTooSmall {
                sub_apis: self.sub_apis.len(),
                cases: self.cases.len(),
            });
        }
        Ok(())
    }

    /// Case-insensitive sub-API lookup.
    pub fn sub_api(&self, name: &str) -> Option<&SubApiSpec> {
        self.sub_apis
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
    }
}

/// A typed parameter value. Integer- and number-typed values are distinct
/// (`3` is not `3.0`); string comparison is case-sensitive.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Str(String),
    Int(i64),
    Num(f64),
    Bool(bool),
}

impl ParamValue {
    /// Finite-checked constructor for numeric values; negative zero is
    /// normalized so canonical text and equality agree.
    pub fn num(v: f64) -> Result<Self, ModelError> {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteNumber);
        }
        Ok(ParamValue::Num(if v == 0.0 { 0.0 } else { v }))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Str(_) => "string",
            ParamValue::Int(_) => "integer",
            ParamValue::Num(_) => "number",
            ParamValue::Bool(_) => "boolean",
        }
    }

    /// True when the value satisfies the declared parameter type. Integers
    /// are accepted where a number is expected, never the reverse.
    pub fn matches(&self, ty: ParamType) -> bool {
        matches!(
            (self, ty),
            (ParamValue::Str(_), ParamType::String)
                | (ParamValue::Int(_), ParamType::Integer)
                | (ParamValue::Int(_), ParamType::Number)
                | (ParamValue::Num(_), ParamType::Number)
                | (ParamValue::Bool(_), ParamType::Boolean)
        )
    }
}

pub(crate) fn escape_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out.push('"');
}

impl fmt::Display for ParamValue {
    /// Canonical text form; parsing it back yields an equal value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Str(s) => {
                let mut buf = String::with_capacity(s.len() + 2);
                escape_string(s, &mut buf);
                f.write_str(&buf)
            }
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Num(v) => {
                let v = if *v == 0.0 { 0.0 } else { *v };
                let s = format!("{v}");
                if s.contains('.') {
                    f.write_str(&s)
                } else {
                    // keep decimals distinguishable from integers
                    write!(f, "{s}.0")
                }
            }
            ParamValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// A parsed function call: `NAME(param=value, ...)`. Argument order is
/// preserved for display but ignored for equality; the function name compares
/// case-insensitively, values case-sensitively.
#[derive(Debug, Clone)]
pub struct FunctionCall {
    pub name: String,
    pub args: Vec<(String, ParamValue)>,
}

impl FunctionCall {
    pub fn new(name: impl Into<String>, args: Vec<(String, ParamValue)>) -> Result<Self, ModelError> {
        let call = FunctionCall { name: name.into(), args };
        call.validate()?;
        Ok(call)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !is_identifier(&self.name) {
            return Err(ModelError::InvalidIdentifier {
                what: "function name",
                got: self.name.clone(),
            });
        }
        let mut seen = Vec::new();
        for (name, _) in &self.args {
            if !is_identifier(name) {
                return Err(ModelError::InvalidIdentifier {
                    what: "parameter name",
                    got: name.clone(),
                });
            }
            if seen.contains(&name.as_str()) {
                return Err(ModelError::DuplicateName {
                    what: "parameter",
                    name: name.clone(),
                });
            }
            seen.push(name.as_str());
        }
        Ok(())
    }

    /// Sub-API names mentioned by this call (just its own name, lowercased).
    pub fn name_lower(&self) -> String {
        self.name.to_lowercase()
    }
}

impl fmt::Display for FunctionCall {
    /// Display form keeps the original argument order: `NAME(p1=v1, p2=v2)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (name, value)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={value}")?;
        }
        f.write_str(")")
    }
}

impl PartialEq for FunctionCall {
    fn eq(&self, other: &Self) -> bool {
        canonical_call_key(self) == canonical_call_key(other)
    }
}

impl Eq for FunctionCall {}

/// Deterministic comparison key: lowercased name, arguments sorted by
/// parameter name, values in canonical text form, no spaces. Two calls are
/// equal iff their keys are byte-equal.
pub fn canonical_call_key(call: &FunctionCall) -> String {
    let mut args: Vec<&(String, ParamValue)> = call.args.iter().collect();
    args.sort_by(|a, b| a.0.cmp(&b.0));
    let mut key = call.name.to_lowercase();
    key.push('(');
    for (i, (name, value)) in args.iter().enumerate() {
        if i > 0 {
            key.push(',');
        }
        key.push_str(name);
        key.push('=');
        key.push_str(&value.to_string());
    }
    key.push(')');
    key
}

/// Serde adapters rendering call lists as their canonical text strings, the
/// `calls: ["NAME(param=value)"]` shape of the dataset files.
pub mod call_strings {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::FunctionCall;

    pub fn serialize<S: Serializer>(calls: &[FunctionCall], ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_seq(calls.iter().map(|c| c.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<FunctionCall>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(de)?;
        raw.iter()
            .map(|s| {
                crate::toolcall::parse_single_call(s)
                    .map_err(|e| D::Error::custom(format!("bad call string {s:?}: {e}")))
            })
            .collect()
    }
}

/// Optional variant of [`call_strings`] for `Option<Vec<FunctionCall>>` fields.
pub mod call_strings_opt {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::FunctionCall;

    pub fn serialize<S: Serializer>(
        calls: &Option<Vec<FunctionCall>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        match calls {
            Some(calls) => ser.collect_seq(calls.iter().map(|c| c.to_string())),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<Option<Vec<FunctionCall>>, D::Error> {
        let raw: Option<Vec<String>> = Option::deserialize(de)?;
        raw.map(|raw| {
            raw.iter()
                .map(|s| {
                    crate::toolcall::parse_single_call(s)
                        .map_err(|e| D::Error::custom(format!("bad call string {s:?}: {e}")))
                })
                .collect()
        })
        .transpose()
    }
}

/// A user query paired with the function calls that solve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUseCase {
    pub query: String,
    #[serde(with = "call_strings")]
    pub calls: Vec<FunctionCall>,
}

impl ToolUseCase {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.query.trim().is_empty() {
            return Err(ModelError::Empty { what: "case query" });
        }
        if self.calls.is_empty() || self.calls.len() > 3 {
            return Err(ModelError::CallCount(self.calls.len()));
        }
        for call in &self.calls {
            call.validate()?;
        }
        Ok(())
    }

    /// Lowercased set of sub-API names this case invokes.
    pub fn sub_api_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.calls.iter().map(|c| c.name_lower()).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// A tool-task test instance: three seed demos plus a query whose gold calls
/// use only sub-APIs absent from the seed demos.
#[derive(Debug, Clone, PartialEq)]
pub struct OodInstance {
    pub id: String,
    pub tool: Arc<ToolSpec>,
    pub seed_demos: Vec<ToolUseCase>,
    pub query: String,
    pub gold_calls: Vec<FunctionCall>,
}

impl OodInstance {
    pub fn new(
        id: impl Into<String>,
        tool: Arc<ToolSpec>,
        seed_demos: Vec<ToolUseCase>,
        query: impl Into<String>,
        gold_calls: Vec<FunctionCall>,
    ) -> Result<Self, ModelError> {
        let instance = OodInstance {
            id: id.into(),
            tool,
            seed_demos,
            query: query.into(),
            gold_calls,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seed_demos.len() != 3 {
            return Err(ModelError::SeedDemoCount(self.seed_demos.len()));
        }
        for demo in &self.seed_demos {
            demo.validate()?;
        }
        if self.gold_calls.is_empty() {
            return Err(ModelError::Empty { what: "gold_calls" });
        }
        let gold: Vec<String> = {
            let mut v: Vec<String> = self.gold_calls.iter().map(|c| c.name_lower()).collect();
            v.sort();
            v.dedup();
            v
        };
        let overlap: Vec<String> = self
            .seed_demos
            .iter()
            .flat_map(|d| d.sub_api_names())
            .filter(|n| gold.contains(n))
            .collect();
        if !overlap.is_empty() {
            return Err(ModelError::NotDisjoint(overlap));
        }
        Ok(())
    }
}

/// On-disk record for one OOD instance (JSON-Lines). The tool is referenced
/// by name and resolved against the tool corpus on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OodInstanceRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub tool_ref: String,
    pub seed_demos: Vec<ToolUseCase>,
    pub query: String,
    #[serde(with = "call_strings")]
    pub gold_calls: Vec<FunctionCall>,
}

impl OodInstanceRecord {
    pub fn from_instance(instance: &OodInstance) -> Self {
        OodInstanceRecord {
            id: Some(instance.id.clone()),
            tool_ref: instance.tool.api_name.clone(),
            seed_demos: instance.seed_demos.clone(),
            query: instance.query.clone(),
            gold_calls: instance.gold_calls.clone(),
        }
    }

    /// Resolves the tool reference; `fallback_id` names the instance when the
    /// record has no id of its own (e.g. the JSONL line number).
    pub fn resolve(
        self,
        tool: Arc<ToolSpec>,
        fallback_id: impl Into<String>,
    ) -> Result<OodInstance, ModelError> {
        OodInstance::new(
            self.id.unwrap_or_else(|| fallback_id.into()),
            tool,
            self.seed_demos,
            self.query,
            self.gold_calls,
        )
    }
}

/// One worked math example: question plus a solution ending in a boxed answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathDemoPair {
    pub question: String,
    pub solution: String,
}

/// A math test instance with its OOD seed demos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathInstance {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    #[serde(default)]
    pub seed_demos: Vec<MathDemoPair>,
}

impl MathInstance {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.gold_answer.trim().is_empty() {
            return Err(ModelError::Empty { what: "gold_answer" });
        }
        if let Some(level) = self.level {
            if !(1..=5).contains(&level) {
                return Err(ModelError::LevelOutOfRange(level));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    Tool,
    Math,
}

/// A demonstration, either taken from seed data or generated by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub kind: DemoKind,
    pub query: String,
    pub answer_text: String,
    #[serde(
        default,
        with = "call_strings_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub parsed_calls: Option<Vec<FunctionCall>>,
}

impl Demo {
    pub fn from_case(case: &ToolUseCase) -> Self {
        let rendered: Vec<String> = case.calls.iter().map(|c| c.to_string()).collect();
        Demo {
            kind: DemoKind::Tool,
            query: case.query.clone(),
            answer_text: format!("[{}]", rendered.join(", ")),
            parsed_calls: Some(case.calls.clone()),
        }
    }

    pub fn from_math_pair(pair: &MathDemoPair) -> Self {
        Demo {
            kind: DemoKind::Math,
            query: pair.question.clone(),
            answer_text: pair.solution.clone(),
            parsed_calls: None,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn call(name: &str, args: &[(&str, ParamValue)]) -> FunctionCall {
        FunctionCall::new(
            name,
            args.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_key_sorts_and_lowercases() {
        let c = call(
            "DISTANCE",
            &[
                ("start", ParamValue::Str("Beijing".into())),
                ("target", ParamValue::Str("Shanghai".into())),
            ],
        );
        assert_eq!(
            canonical_call_key(&c),
            r#"distance(start="Beijing",target="Shanghai")"#
        );
    }

    #[test]
    fn canonical_key_empty_args() {
        let c = call("NOOP", &[]);
        assert_eq!(canonical_call_key(&c), "noop()");
    }

    #[test]
    fn equality_ignores_case_and_arg_order() {
        let a = call(
            "Search",
            &[
                ("distance", ParamValue::Int(3)),
                ("target", ParamValue::Str("shop".into())),
            ],
        );
        let b = call(
            "SEARCH",
            &[
                ("target", ParamValue::Str("shop".into())),
                ("distance", ParamValue::Int(3)),
            ],
        );
        assert_eq!(a, b);
        assert_eq!(canonical_call_key(&a), canonical_call_key(&b));
    }

    #[test]
    fn values_compare_case_sensitively() {
        let a = call("F", &[("x", ParamValue::Str("Shop".into()))]);
        let b = call("F", &[("x", ParamValue::Str("shop".into()))]);
        assert_ne!(a, b);
    }

    #[test]
    fn int_and_num_are_distinct() {
        let a = call("F", &[("x", ParamValue::Int(3))]);
        let b = call("F", &[("x", ParamValue::num(3.0).unwrap())]);
        assert_ne!(a, b);
        assert_eq!(b.to_string(), "F(x=3.0)");
    }

    #[test]
    fn negative_zero_normalizes() {
        let a = call("F", &[("x", ParamValue::num(-0.0).unwrap())]);
        let b = call("F", &[("x", ParamValue::num(0.0).unwrap())]);
        assert_eq!(canonical_call_key(&a), canonical_call_key(&b));
    }

    #[test]
    fn duplicate_arg_rejected() {
        let err = FunctionCall::new(
            "F",
            vec![
                ("x".into(), ParamValue::Int(1)),
                ("x".into(), ParamValue::Int(2)),
            ],
        )
        .unwrap_err();
        assert_eq!(
            err,
            ModelError::DuplicateName { what: "parameter", name: "x".into() }
        );
    }

    #[test]
    fn ood_instance_requires_disjoint_sub_apis() {
        let tool = Arc::new(map_tool());
        let route = call("ROUTE", &[("start", ParamValue::Str("A".into()))]);
        let seed = vec![
            tool.cases[0].clone(),
            tool.cases[1].clone(),
            tool.cases[1].clone(),
        ];
        // gold uses ROUTE which the seeds above avoid
        let ok = OodInstance::new("i1", tool.clone(), seed.clone(), "q", vec![route.clone()]);
        assert!(ok.is_ok());

        let bad_seed = vec![
            tool.cases[2].clone(),
            tool.cases[0].clone(),
            tool.cases[1].clone(),
        ];
        let err = OodInstance::new("i2", tool, bad_seed, "q", vec![route]).unwrap_err();
        assert_eq!(err, ModelError::NotDisjoint(vec!["route".into()]));
    }

    #[test]
    fn tool_spec_round_trips_through_dataset_json() {
        let tool = map_tool();
        let json = serde_json::to_string(&tool).unwrap();
        assert!(json.contains(r#""type":"integer""#));
        assert!(json.contains(r#"DISTANCE(start=\"Beijing\", target=\"Shanghai\")"#));
        let back: ToolSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(tool, back);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_value() -> impl Strategy<Value = ParamValue> {
            prop_oneof![
                "[a-zA-Z0-9 \"'\\\\]{0,8}".prop_map(ParamValue::Str),
                any::<i64>().prop_map(ParamValue::Int),
                (-1e9..1e9f64).prop_map(|v| ParamValue::num(v).unwrap()),
                any::<bool>().prop_map(ParamValue::Bool),
            ]
        }

        prop_compose! {
            fn arb_call()(
                name in "[a-dA-D]{1,4}",
                args in proptest::collection::btree_map("[a-c]", arb_value(), 0..=3),
            ) -> FunctionCall {
                FunctionCall::new(
                    name,
                    args.into_iter().collect(),
                ).unwrap()
            }
        }

        proptest! {
            // equality is an equivalence relation and agrees with key equality
            #[test]
            fn equality_agrees_with_canonical_keys(
                a in arb_call(),
                b in arb_call(),
                c in arb_call(),
            ) {
                prop_assert_eq!(&a, &a);
                prop_assert_eq!(a == b, b == a);
                if a == b && b == c {
                    prop_assert_eq!(&a, &c);
                }
                prop_assert_eq!(a == b, canonical_call_key(&a) == canonical_call_key(&b));
            }

            // dataset-format serialization is lossless for call-bearing types
            #[test]
            fn case_and_demo_serialization_round_trips(
                calls in proptest::collection::vec(arb_call(), 1..=3),
            ) {
                let case = ToolUseCase { query: "q".into(), calls: calls.clone() };
                let json = serde_json::to_string(&case).unwrap();
                let back: ToolUseCase = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(&case, &back);

                let demo = Demo {
                    kind: DemoKind::Tool,
                    query: "q".into(),
                    answer_text: "[]".into(),
                    parsed_calls: Some(calls),
                };
                let json = serde_json::to_string(&demo).unwrap();
                let back: Demo = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(&demo, &back);
            }
        }
    }

    pub(crate) fn map_tool() -> ToolSpec {
        let string_param = |name: &str, desc: &str| ParamSpec {
            name: name.into(),
            required: true,
            value_type: ParamType::String,
            description: desc.into(),
        };
        ToolSpec {
            api_name: "Map".into(),
            description: "calculating distances, planning routes, and locating points".into(),
            sub_apis: vec![
                SubApiSpec {
                    name: "DISTANCE".into(),
                    description: "Calculate the distance between two points.".into(),
                    params: vec![
                        string_param("start", "The starting point for the distance calculation."),
                        string_param("target", "The destination point for the distance calculation."),
                    ],
                },
                SubApiSpec {
                    name: "ROUTE".into(),
                    description: "Generate a travel route between two points.".into(),
                    params: vec![
                        string_param("start", "The starting point for the route."),
                        string_param("target", "The destination point for the route."),
                    ],
                },
                SubApiSpec {
                    name: "SEARCH".into(),
                    description: "Locate nearby points within a set distance.".into(),
                    params: vec![
                        string_param("target", "The target point to search around."),
                        string_param("position", "The current position of the user."),
                        ParamSpec {
                            name: "distance".into(),
                            required: true,
                            value_type: ParamType::Integer,
                            description: "The search radius in kilometers.".into(),
                        },
                    ],
                },
            ],
            cases: vec![
                ToolUseCase {
                    query: "How far is Beijing to Shanghai?".into(),
                    calls: vec![call(
                        "DISTANCE",
                        &[
                            ("start", ParamValue::Str("Beijing".into())),
                            ("target", ParamValue::Str("Shanghai".into())),
                        ],
                    )],
                },
                ToolUseCase {
                    query: "How many shops are around Times Square in 3km?".into(),
                    calls: vec![call(
                        "SEARCH",
                        &[
                            ("target", ParamValue::Str("shop".into())),
                            ("position", ParamValue::Str("Times Square".into())),
                            ("distance", ParamValue::Int(3)),
                        ],
                    )],
                },
                ToolUseCase {
                    query: "How do I drive from Big Ben to Tower Bridge, and then to the London Eye?".into(),
                    calls: vec![
                        call(
                            "ROUTE",
                            &[
                                ("start", ParamValue::Str("Big Ben".into())),
                                ("target", ParamValue::Str("Tower Bridge".into())),
                            ],
                        ),
                        call(
                            "ROUTE",
                            &[
                                ("start", ParamValue::Str("Tower Bridge".into())),
                                ("target", ParamValue::Str("London Eye".into())),
                            ],
                        ),
                    ],
                },
            ],
        }
    }
}
