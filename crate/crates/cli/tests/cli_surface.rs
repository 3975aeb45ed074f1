//! Command-level behavior: exit codes, resume, error recording, score
//! reports, and the cost table.

mod common;

use std::path::Path;

use common::{calls_text, demoforge, fixture_tool, gold_calls, write_fixture_dataset};

fn write_mock_script(path: &Path, entries: &[(String, String)]) {
    let map: serde_json::Map<String, serde_json::Value> = entries
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    std::fs::write(path, serde_json::Value::Object(map).to_string()).unwrap();
}

#[test]
fn validate_data_exit_codes_and_histogram() {
    let dir = tempfile::tempdir().unwrap();

    // clean corpus -> exit 0
    let clean = dir.path().join("clean.jsonl");
    std::fs::write(
        &clean,
        format!("{}\n", serde_json::to_string(&fixture_tool()).unwrap()),
    )
    .unwrap();
    let output = demoforge(&["validate-data", clean.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));

    // one 4-call case -> exit 1 with the rule in the histogram
    let mut raw = serde_json::to_value(fixture_tool()).unwrap();
    raw["cases"].as_array_mut().unwrap().push(serde_json::json!({
        "query": "four in one",
        "calls": [
            "DISTANCE(start=\"A\", target=\"B\")",
            "DISTANCE(start=\"B\", target=\"C\")",
            "DISTANCE(start=\"C\", target=\"D\")",
            "DISTANCE(start=\"D\", target=\"E\")"
        ]
    }));
    let dirty = dir.path().join("dirty.jsonl");
    std::fs::write(&dirty, format!("{raw}\n")).unwrap();
    let output = demoforge(&["validate-data", dirty.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("max-3-calls"), "stdout: {stdout}");
    assert!(stdout.contains("1"), "stdout: {stdout}");

    // missing file -> exit 2
    let output = demoforge(&["validate-data", dir.path().join("nope.jsonl").to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn run_produces_artifacts_resumes_and_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let (_tool, instances) = write_fixture_dataset(&data_dir, 3);

    // script covers only two of the three instances; the third fails
    let script_path = dir.path().join("mock.json");
    write_mock_script(
        &script_path,
        &[
            (format!("{}/answer", instances[0].id), calls_text(&gold_calls(0))),
            (format!("{}/answer", instances[1].id), calls_text(&gold_calls(1))),
        ],
    );

    let out = dir.path().join("runs");
    let dataset = data_dir.join("instances.jsonl");
    let output = demoforge(&[
        "run",
        "--method",
        "few-shot",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        &format!("mock:{}", script_path.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1), "one instance failed");
    assert!(out.join("acc-000.json").exists());
    assert!(out.join("acc-001.json").exists());
    assert!(!out.join("acc-002.json").exists());
    assert!(out.join("acc-002.error.json").exists());

    // complete the script and resume: only the failed instance re-runs
    write_mock_script(
        &script_path,
        &[
            (format!("{}/answer", instances[0].id), "[]".to_string()),
            (format!("{}/answer", instances[1].id), "[]".to_string()),
            (format!("{}/answer", instances[2].id), calls_text(&gold_calls(2))),
        ],
    );
    let output = demoforge(&[
        "run",
        "--method",
        "few-shot",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        &format!("mock:{}", script_path.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("acc-000 skipped"), "stderr: {stderr}");
    assert!(stderr.contains("acc-001 skipped"), "stderr: {stderr}");
    assert!(stderr.contains("acc-002 ok"), "stderr: {stderr}");

    // the completed artifacts kept their original (gold) answers
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("acc-000.json")).unwrap()).unwrap();
    assert!(artifact["final_answer_text"].as_str().unwrap().contains("ROUTE"));

    // artifacts carry the full step traces, prompts included
    assert!(artifact["steps"][0]["request"]["prompt"]
        .as_str()
        .unwrap()
        .contains("# Tool Specification:"));

    // scoring the resumed dir gives full marks
    let output = demoforge(&[
        "score",
        "--run-dir",
        out.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["exact_acc"], 100.0);
    assert_eq!(summary[0]["partial_acc"], 100.0);
}

#[test]
fn score_reports_half_right_runs_and_histogram_totals() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let (_tool, instances) = write_fixture_dataset(&data_dir, 4);

    // self-demos script: two instances answer gold, two answer wrong
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, instance) in instances.iter().enumerate() {
        let id = &instance.id;
        entries.push((
            format!("{id}/understand"),
            "Call the ROUTE function.".to_string(),
        ));
        entries.push((
            format!("{id}/sample"),
            "Selection: <1>, <2>".to_string(),
        ));
        let answer = if i < 2 {
            calls_text(&gold_calls(i))
        } else {
            r#"[DISTANCE(start="wrong", target="way")]"#.to_string()
        };
        entries.push((format!("{id}/respond"), answer));
    }
    let demo = "Query: Show me the route from A to B.\nFunction Calls: [\"ROUTE(start=\"A\", target=\"B\")\"]";
    let script: Vec<(String, serde_json::Value)> = entries
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .chain(std::iter::once((
            "*/demo_gen".to_string(),
            serde_json::Value::Array(vec![serde_json::Value::String(demo.to_string()); 5]),
        )))
        .collect();
    let script_path = dir.path().join("mock.json");
    std::fs::write(
        &script_path,
        serde_json::Value::Object(script.into_iter().collect()).to_string(),
    )
    .unwrap();

    let out = dir.path().join("runs");
    let dataset = data_dir.join("instances.jsonl");
    let output = demoforge(&[
        "run",
        "--method",
        "self-demos",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        &format!("mock:{}", script_path.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));

    let output = demoforge(&[
        "score",
        "--run-dir",
        out.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["exact_acc"], 50.0);

    // every failure lands in exactly one category
    let histogram = summary[0]["error_categories"].as_object().unwrap();
    let total: u64 = histogram.values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 2, "histogram must sum to the failure count");
    assert_eq!(histogram["relevant_correct_demos"], 2);
}

#[test]
fn score_names_the_instance_when_gold_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    write_fixture_dataset(&data_dir, 2);

    // artifact for an instance the dataset does not contain
    let out = dir.path().join("runs");
    std::fs::create_dir_all(&out).unwrap();
    let orphan = serde_json::json!({
        "instance_id": "ghost-042",
        "method": "few-shot",
        "steps": [{
            "step": "answer",
            "request": {"prompt": "p", "temperature": 0.0, "n": 1, "seed_tag": "ghost-042/answer"},
            "response": {"completions": ["[]"], "usage": {"input_tokens": 1, "output_tokens": 1}}
        }],
        "final_answer_text": "[]",
        "outcome": {"task": "tool", "calls": []}
    });
    std::fs::write(out.join("ghost-042.json"), orphan.to_string()).unwrap();

    let output = demoforge(&[
        "score",
        "--run-dir",
        out.to_str().unwrap(),
        "--dataset",
        data_dir.join("instances.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ghost-042"), "stderr: {stderr}");
}

#[test]
fn cost_report_prints_the_published_cells() {
    let output = demoforge(&["cost-report", "--table10"]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for cell in ["0.54", "2.71", "5.41", "2.37", "1.21", "4.81", "2.84"] {
        assert!(stdout.contains(cell), "missing {cell} in:\n{stdout}");
    }

    let output = demoforge(&["cost-report", "--table10", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 7);
    assert_eq!(rows[5]["cost"], 4.81);
    assert_eq!(rows[5]["input_tokens"], 4160.4);
}

#[test]
fn cost_report_over_run_dirs_has_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let (_tool, instances) = write_fixture_dataset(&data_dir, 2);

    let script_path = dir.path().join("mock.json");
    write_mock_script(
        &script_path,
        &instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (format!("{}/answer", inst.id), calls_text(&gold_calls(i))))
            .collect::<Vec<_>>(),
    );

    let dataset = data_dir.join("instances.jsonl");
    for (method, out) in [("few-shot", "runs-fs"), ("zero-shot", "runs-zs")] {
        let out = dir.path().join(out);
        let output = demoforge(&[
            "run",
            "--method",
            method,
            "--dataset",
            dataset.to_str().unwrap(),
            "--backend",
            &format!("mock:{}", script_path.display()),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0));
    }

    let output = demoforge(&[
        "cost-report",
        "--json",
        dir.path().join("runs-fs").to_str().unwrap(),
        dir.path().join("runs-zs").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let methods: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["few-shot", "zero-shot"]);

    // zero-shot prompts carry no demos, so they are cheaper
    assert!(rows[1]["input_tokens"].as_f64().unwrap() < rows[0]["input_tokens"].as_f64().unwrap());
}

#[test]
fn kv_reuse_flag_reaches_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let (_tool, instances) = write_fixture_dataset(&data_dir, 1);
    let id = &instances[0].id;

    let demo = "Query: Show me the route from A to B.\nFunction Calls: [\"ROUTE(start=\"A\", target=\"B\")\"]";
    let script = serde_json::json!({
        format!("{id}/understand"): "Call the ROUTE function.",
        format!("{id}/demo_gen"): [demo, demo, demo, demo, demo],
        format!("{id}/sample"): "Selection: <1>, <2>",
        format!("{id}/respond"): calls_text(&gold_calls(0)),
    });
    let script_path = dir.path().join("mock.json");
    std::fs::write(&script_path, script.to_string()).unwrap();

    let out = dir.path().join("runs");
    let output = demoforge(&[
        "run",
        "--method",
        "self-demos",
        "--dataset",
        data_dir.join("instances.jsonl").to_str().unwrap(),
        "--backend",
        &format!("mock:{}", script_path.display()),
        "--out",
        out.to_str().unwrap(),
        "--kv-reuse",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let artifact: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join(format!("{id}.json"))).unwrap(),
    )
    .unwrap();
    // traces show 4 calls per instance under kv reuse
    assert_eq!(artifact["steps"].as_array().unwrap().len(), 4);
    assert_eq!(artifact["steps"][1]["request"]["n"], 5);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let output = demoforge(&[
        "run",
        "--method",
        "telepathy",
        "--dataset",
        "x.jsonl",
        "--backend",
        "live",
        "--out",
        "y",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("telepathy"), "stderr: {stderr}");
}

#[test]
fn unknown_backend_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    write_fixture_dataset(&data_dir, 1);
    let output = demoforge(&[
        "run",
        "--method",
        "few-shot",
        "--dataset",
        data_dir.join("instances.jsonl").to_str().unwrap(),
        "--backend",
        "telegraph:morse",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}
