//! `score`: per-instance scores plus an accuracy summary per method, with an
//! error-category histogram for the demo-generating methods.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use demoforge_core::model::OodInstance;
use demoforge_core::pipelines::{Method, PipelineRun, RunOutcome};
use demoforge_core::scoring::{
    self, aggregate, answers_equal, normalize_answer, ErrorCategory, InstanceScore, ToolScore,
};
use serde::Serialize;

use crate::data::{load_dataset, Dataset};

#[derive(Debug, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub exact_acc: f64,
    pub partial_acc: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_categories: Option<BTreeMap<String, usize>>,
}

enum Gold<'a> {
    Tool(&'a OodInstance),
    Math(&'a str),
}

pub fn cmd_score(
    run_dir: &Path,
    dataset_path: &Path,
    tools: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let runs = crate::run::load_artifacts(run_dir)?;
    if runs.is_empty() {
        eprintln!("no run artifacts in {}", run_dir.display());
        return Ok(1);
    }
    let dataset = load_dataset(dataset_path, tools)?;

    let mut gold: BTreeMap<&str, Gold<'_>> = BTreeMap::new();
    match &dataset {
        Dataset::Tool { instances } => {
            for instance in instances {
                gold.insert(&instance.id, Gold::Tool(instance));
            }
        }
        Dataset::Math(instances) => {
            for instance in instances {
                gold.insert(&instance.id, Gold::Math(&instance.gold_answer));
            }
        }
    }

    let mut rows: Vec<InstanceScore> = Vec::with_capacity(runs.len());
    let mut per_method: BTreeMap<String, Vec<ToolScore>> = BTreeMap::new();
    let mut histograms: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();

    for run in &runs {
        let Some(gold) = gold.get(run.instance_id.as_str()) else {
            eprintln!(
                "missing gold: instance {} from {} is not in {}",
                run.instance_id,
                run_dir.display(),
                dataset_path.display()
            );
            return Ok(1);
        };
        let (score, no_answer) = score_run(run, gold)?;
        let error_category = classify(run, gold, score);
        if let Some(category) = error_category {
            let label = serde_json::to_value(category)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *histograms
                .entry(run.method.clone())
                .or_default()
                .entry(label)
                .or_insert(0) += 1;
        }
        per_method.entry(run.method.clone()).or_default().push(score);
        rows.push(InstanceScore {
            instance_id: run.instance_id.clone(),
            method: run.method.clone(),
            exact: score.exact,
            partial: score.partial,
            error_category,
            no_answer,
        });
    }

    let mut summaries = Vec::new();
    for (method, scores) in &per_method {
        let agg = aggregate(scores)?;
        summaries.push(MethodSummary {
            method: method.clone(),
            exact_acc: agg.exact_acc,
            partial_acc: agg.partial_acc,
            n: agg.n,
            error_categories: histograms.get(method).cloned(),
        });
    }

    let out_dir: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut scores_file = std::fs::File::create(out_dir.join("scores.jsonl"))?;
    for row in &rows {
        writeln!(scores_file, "{}", serde_json::to_string(row)?)?;
    }
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summaries)?,
    )?;

    println!("{:<18} {:>9} {:>9} {:>6}", "Method", "Exact Acc", "Part Acc", "N");
    for summary in &summaries {
        println!(
            "{:<18} {:>9.1} {:>9.1} {:>6}",
            summary.method, summary.exact_acc, summary.partial_acc, summary.n
        );
    }
    for summary in &summaries {
        if let Some(histogram) = &summary.error_categories {
            let parts: Vec<String> =
                histogram.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("error categories ({}): {}", summary.method, parts.join(" "));
        }
    }
    Ok(0)
}

fn score_run(run: &PipelineRun, gold: &Gold<'_>) -> anyhow::Result<(ToolScore, bool)> {
    match (&run.outcome, gold) {
        (RunOutcome::Tool { calls }, Gold::Tool(instance)) => {
            let score = scoring::score_tool(calls, &instance.gold_calls)
                .with_context(|| format!("instance {}", run.instance_id))?;
            Ok((score, false))
        }
        (RunOutcome::Math { answer }, Gold::Math(gold_answer)) => match answer {
            Some(answer) => {
                let correct = answers_equal(answer, &normalize_answer(gold_answer));
                let value = if correct { 1.0 } else { 0.0 };
                Ok((ToolScore { exact: value, partial: value }, false))
            }
            None => Ok((ToolScore { exact: 0.0, partial: 0.0 }, true)),
        },
        (outcome, _) => anyhow::bail!(
            "instance {}: artifact outcome {:?} does not match the dataset kind",
            run.instance_id,
            outcome
        ),
    }
}

/// Error categories are defined for failed runs of demo-generating methods
/// on the tool task.
fn classify(run: &PipelineRun, gold: &Gold<'_>, score: ToolScore) -> Option<ErrorCategory> {
    if score.exact != 0.0 {
        return None;
    }
    let Gold::Tool(instance) = gold else { return None };
    let method: Method = run.method.parse().ok()?;
    if !method.generates_demos() {
        return None;
    }
    scoring::classify_error(run, instance).ok()
}
