//! Shared fixtures for the CLI integration and acceptance suites.
// each test target uses a subset of these helpers
#![allow(dead_code)]

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use demoforge_core::dataset;
use demoforge_core::model::{
    FunctionCall, OodInstance, ParamSpec, ParamType, ParamValue, SubApiSpec, ToolSpec, ToolUseCase,
};
use demoforge_core::toolcall::serialize_call;

pub fn string_param(name: &str) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        required: true,
        value_type: ParamType::String,
        description: format!("the {name} point"),
    }
}

pub fn str_call(name: &str, pairs: &[(&str, &str)]) -> FunctionCall {
    FunctionCall::new(
        name,
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), ParamValue::Str(v.to_string())))
            .collect(),
    )
    .unwrap()
}

pub fn fixture_tool() -> ToolSpec {
    ToolSpec {
        api_name: "Map".into(),
        description: "calculating distances, planning routes, and locating points".into(),
        sub_apis: vec![
            SubApiSpec {
                name: "DISTANCE".into(),
                description: "Calculate the distance between two points.".into(),
                params: vec![string_param("start"), string_param("target")],
            },
            SubApiSpec {
                name: "ROUTE".into(),
                description: "Generate a travel route between two points.".into(),
                params: vec![string_param("start"), string_param("target")],
            },
            SubApiSpec {
                name: "SEARCH".into(),
                description: "Locate nearby points within a set distance.".into(),
                params: vec![
                    string_param("target"),
                    string_param("position"),
                    ParamSpec {
                        name: "distance".into(),
                        required: true,
                        value_type: ParamType::Integer,
                        description: "radius in km".into(),
                    },
                ],
            },
        ],
        cases: vec![
            ToolUseCase {
                query: "How far is Beijing to Shanghai?".into(),
                calls: vec![str_call("DISTANCE", &[("start", "Beijing"), ("target", "Shanghai")])],
            },
            ToolUseCase {
                query: "How many shops are around Times Square in 3km?".into(),
                calls: vec![FunctionCall::new(
                    "SEARCH",
                    vec![
                        ("target".into(), ParamValue::Str("shop".into())),
                        ("position".into(), ParamValue::Str("Times Square".into())),
                        ("distance".into(), ParamValue::Int(3)),
                    ],
                )
                .unwrap()],
            },
            ToolUseCase {
                query: "Are there any bookstores within 5km of Central Park?".into(),
                calls: vec![FunctionCall::new(
                    "SEARCH",
                    vec![
                        ("target".into(), ParamValue::Str("bookstore".into())),
                        ("position".into(), ParamValue::Str("Central Park".into())),
                        ("distance".into(), ParamValue::Int(5)),
                    ],
                )
                .unwrap()],
            },
            ToolUseCase {
                query: "Route me from Alpha to Beta, then on to Gamma.".into(),
                calls: vec![
                    str_call("ROUTE", &[("start", "Alpha"), ("target", "Beta")]),
                    str_call("ROUTE", &[("start", "Beta"), ("target", "Gamma")]),
                ],
            },
        ],
    }
}

pub fn gold_calls(i: usize) -> Vec<FunctionCall> {
    vec![
        str_call("ROUTE", &[("start", &format!("X{i}")), ("target", &format!("Y{i}"))]),
        str_call("ROUTE", &[("start", &format!("Y{i}")), ("target", &format!("Z{i}"))]),
    ]
}

pub fn fixture_instances(tool: &Arc<ToolSpec>, count: usize) -> Vec<OodInstance> {
    (0..count)
        .map(|i| {
            OodInstance::new(
                format!("acc-{i:03}"),
                Arc::clone(tool),
                vec![tool.cases[0].clone(), tool.cases[1].clone(), tool.cases[2].clone()],
                format!("How do I drive from X{i} to Y{i}, and then on to Z{i}?"),
                gold_calls(i),
            )
            .unwrap()
        })
        .collect()
}

pub fn calls_text(calls: &[FunctionCall]) -> String {
    let rendered: Vec<String> = calls.iter().map(serialize_call).collect();
    format!("[{}]", rendered.join(", "))
}

/// Writes tools.jsonl + instances.jsonl into `dir`.
pub fn write_fixture_dataset(dir: &Path, count: usize) -> (Arc<ToolSpec>, Vec<OodInstance>) {
    let tool = Arc::new(fixture_tool());
    let instances = fixture_instances(&tool, count);
    dataset::save_tools_jsonl(&dir.join("tools.jsonl"), &[(*tool).clone()]).unwrap();
    dataset::save_ood_instances(&dir.join("instances.jsonl"), &instances).unwrap();
    (tool, instances)
}

/// Generic step script that every method can run against.
pub fn generic_script() -> Vec<(String, Vec<String>)> {
    vec![
        (
            "*/understand".to_string(),
            vec!["The query asks for a route, so the ROUTE function should be called.".to_string()],
        ),
        (
            "*/demo_gen".to_string(),
            (0..5)
                .map(|k| {
                    format!(
                        "Query: Show me the route from A{k} to B{k}.\nFunction Calls: [\"ROUTE(start=\"A{k}\", target=\"B{k}\")\"]"
                    )
                })
                .collect(),
        ),
        (
            "*/sample".to_string(),
            vec!["Selection: <1>, <2>\nExplanation: both are valid.".to_string()],
        ),
        (
            "*/respond".to_string(),
            vec![r#"[ROUTE(start="A", target="B"), ROUTE(start="B", target="C")]"#.to_string()],
        ),
        (
            "*/pseudo_inputs".to_string(),
            vec!["1. Route from P to Q please?\n2. Route from Q to R please?".to_string()],
        ),
        (
            "*/label".to_string(),
            vec![r#"[ROUTE(start="P", target="Q")]"#.to_string()],
        ),
        (
            "*/answer".to_string(),
            vec![r#"[ROUTE(start="A", target="B"), ROUTE(start="B", target="C")]"#.to_string()],
        ),
    ]
}

pub fn demoforge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_demoforge"))
        .args(args)
        .output()
        .expect("binary runs")
}
