//! Dataset-facing commands: validation, OOD set assembly, and statistics,
//! plus the instance-file loader shared with `run` and `score`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use demoforge_core::backend::{estimate_tokens, DEFAULT_CHARS_PER_TOKEN};
use demoforge_core::dataset::{self, rules, CleanConfig, LogEntry};
use demoforge_core::model::{MathInstance, OodInstance};
use demoforge_core::pipelines::Instance;
use demoforge_core::prompts::TemplateRegistry;

pub enum Dataset {
    Tool { instances: Vec<OodInstance> },
    Math(Vec<MathInstance>),
}

impl Dataset {
    pub fn instances(&self) -> Vec<Instance> {
        match self {
            Dataset::Tool { instances } => {
                instances.iter().cloned().map(Instance::Tool).collect()
            }
            Dataset::Math(instances) => instances.iter().cloned().map(Instance::Math).collect(),
        }
    }

}

/// Loads an instance file, detecting the task kind from its first record.
/// Tool instance files need the tool corpus; `--tools` overrides the default
/// `tools.jsonl` next to the instance file.
pub fn load_dataset(path: &Path, tools_path: Option<&Path>) -> anyhow::Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let first_line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .with_context(|| format!("dataset {} is empty", path.display()))?;
    let probe: serde_json::Value = serde_json::from_str(first_line)
        .with_context(|| format!("dataset {} first record is not JSON", path.display()))?;

    if probe.get("tool_ref").is_some() {
        let tools_path: PathBuf = match tools_path {
            Some(p) => p.to_path_buf(),
            None => path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("tools.jsonl"),
        };
        let tools = dataset::load_tools_jsonl(&tools_path)
            .with_context(|| format!("cannot load tool corpus {}", tools_path.display()))?;
        let instances = dataset::load_ood_instances(path, &tools)?;
        Ok(Dataset::Tool { instances })
    } else if probe.get("question").is_some() {
        Ok(Dataset::Math(dataset::load_math_instances(path)?))
    } else {
        bail!(
            "dataset {} records carry neither tool_ref nor question",
            path.display()
        );
    }
}

fn rule_histogram(log: &[LogEntry]) -> BTreeMap<String, usize> {
    let mut histogram = BTreeMap::new();
    for entry in log {
        *histogram.entry(entry.rule.clone()).or_insert(0) += 1;
    }
    histogram
}

/// `validate-data`: check-only cleaning pass. Exit 0 iff nothing was
/// rejected; strips and lint findings are reported but do not fail.
pub fn cmd_validate_data(path: &Path) -> anyhow::Result<u8> {
    let outcome = dataset::clean_tool_corpus_file(path, &CleanConfig::default())?;
    let histogram = rule_histogram(&outcome.log);
    println!("tools accepted: {}", outcome.tools.len());
    if histogram.is_empty() {
        println!("no rule violations");
    } else {
        println!("rule histogram:");
        for (rule, count) in &histogram {
            let kind = if rules::is_rejection(rule) { "reject" } else { "strip" };
            println!("  {rule:<20} {count:>5}  ({kind})");
        }
    }
    Ok(if outcome.rejections() == 0 { 0 } else { 1 })
}

/// `build-ood`: clean a raw corpus, assemble OOD instances, and write the
/// cleaned tools, instances, rejection log, and lint report.
pub fn cmd_build_ood(input: &Path, out_dir: &Path, seed: u64) -> anyhow::Result<u8> {
    let outcome = dataset::clean_tool_corpus_file(input, &CleanConfig::default())?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut instances = Vec::new();
    let mut skip_log = Vec::new();
    for (idx, tool) in outcome.tools.iter().enumerate() {
        let tool = Arc::new(tool.clone());
        let (mut built, log) = dataset::assemble_ood_instances(&tool, seed.wrapping_add(idx as u64));
        instances.append(&mut built);
        skip_log.extend(log);
    }
    let lint = dataset::lint_instances(&instances);

    dataset::save_tools_jsonl(&out_dir.join("tools.jsonl"), &outcome.tools)?;
    dataset::save_ood_instances(&out_dir.join("instances.jsonl"), &instances)?;
    dataset::save_log(&out_dir.join("rejections.jsonl"), &outcome.log)?;
    dataset::save_log(&out_dir.join("skips.jsonl"), &skip_log)?;
    dataset::save_log(&out_dir.join("lint.jsonl"), &lint)?;

    println!(
        "tools {} | instances {} | rejections {} | skipped queries {} | lint findings {}",
        outcome.tools.len(),
        instances.len(),
        outcome.rejections(),
        skip_log.len(),
        lint.len()
    );
    Ok(0)
}

/// `stats`: dataset statistics in the three-column token shape.
pub fn cmd_stats(
    dataset_path: &Path,
    tools_path: Option<&Path>,
    json: bool,
) -> anyhow::Result<u8> {
    let dataset = load_dataset(dataset_path, tools_path)?;
    let registry = TemplateRegistry::builtin();
    let estimate = |t: &str| estimate_tokens(t, DEFAULT_CHARS_PER_TOKEN);
    let stats = dataset::dataset_stats(&dataset.instances(), &registry, &estimate)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!(
            "size {} | avg query tokens {:.1} | avg demo tokens {:.1} | avg context tokens {:.1}",
            stats.size, stats.avg_query_tokens, stats.avg_demo_tokens, stats.avg_context_tokens
        );
    }
    Ok(0)
}
