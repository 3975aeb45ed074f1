//! Batch driver: validate and build datasets, run prompting methods over
//! them, score the artifacts, and report costs.
//!
//! Exit codes: 0 success, 1 content failure (rejections, score mismatches,
//! failed instances), 2 usage or IO errors.

mod config;
mod cost;
mod data;
mod run;
mod score;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use demoforge_core::pipelines::Method;

use crate::config::{Config, Variant};

#[derive(Parser)]
#[command(name = "demoforge", version, about = "Self-generated demonstration pipelines over pluggable text-generation backends")]
struct Cli {
    /// TOML config file; flags override config values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a raw tool corpus against the cleaning rules (no output files).
    ValidateData {
        /// Raw tool corpus (JSON-Lines, one tool per line).
        path: PathBuf,
    },
    /// Clean a raw tool corpus and assemble OOD instances from it.
    BuildOod {
        /// Raw tool corpus (JSON-Lines).
        #[arg(long)]
        input: PathBuf,
        /// Output directory (tools.jsonl, instances.jsonl, logs).
        #[arg(long)]
        out: PathBuf,
        /// Sampling seed (default: run.seed from the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dataset statistics (instance count, average token counts).
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Tool corpus for tool-task instance files.
        #[arg(long)]
        tools: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run one prompting method over a dataset.
    Run {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        dataset: PathBuf,
        /// Tool corpus for tool-task instance files (default: tools.jsonl
        /// next to the dataset).
        #[arg(long)]
        tools: Option<PathBuf>,
        /// live | mock:<script.json> | replay:<dir> | record:<dir>
        #[arg(long)]
        backend: String,
        /// Output directory for per-instance run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// RNG seed recorded for reproducibility bookkeeping.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Sample the N demos through one n=N call (pays the prompt once).
        #[arg(long)]
        kv_reuse: bool,
        /// Reasoning paths for self-consistency.
        #[arg(long)]
        paths: Option<u32>,
        /// Demos to generate (self-demos N).
        #[arg(long)]
        n: Option<u32>,
        /// Demos to keep (self-demos K).
        #[arg(long)]
        k: Option<u32>,
        /// Variant for self-icl / analogical.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        /// Labeled training corpus for retrieval-bm25 (JSON-Lines).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Re-run instances that already have artifacts.
        #[arg(long)]
        force: bool,
        /// Abort on the first failed instance.
        #[arg(long)]
        fail_fast: bool,
    },
    /// Score run artifacts against a dataset.
    Score {
        /// Directory of per-instance run artifacts.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        tools: Option<PathBuf>,
        /// Where to write scores.jsonl and summary.json (default: run dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost table from run dirs, or the published token averages.
    CostReport {
        /// Use the published per-step token averages instead of run dirs.
        #[arg(long)]
        table10: bool,
        /// Also least-squares fit the per-1K prices from the rows.
        #[arg(long)]
        fit: bool,
        #[arg(long)]
        json: bool,
        /// Run directories to build measured ledgers from.
        run_dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match Config::load(cli.config.as_deref()) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let result = match cli.command {
        Command::ValidateData { path } => data::cmd_validate_data(&path),
        Command::BuildOod { input, out, seed } => {
            data::cmd_build_ood(&input, &out, seed.unwrap_or(config.run.seed))
        }
        Command::Stats { dataset, tools, json } => {
            data::cmd_stats(&dataset, tools.as_deref(), json)
        }
        Command::Run {
            method,
            dataset,
            tools,
            backend,
            out,
            seed: _seed,
            workers,
            kv_reuse,
            paths,
            n,
            k,
            variant,
            corpus,
            force,
            fail_fast,
        } => run::cmd_run(
            run::RunArgs {
                method,
                dataset,
                tools,
                backend,
                out,
                workers,
                kv_reuse,
                paths,
                n_generate: n,
                k_select: k,
                variant,
                corpus,
                force,
                fail_fast,
            },
            &config,
        ),
        Command::Score { run_dir, dataset, tools, out } => {
            let tools = tools.or_else(|| config.run.tools.as_ref().map(PathBuf::from));
            score::cmd_score(&run_dir, &dataset, tools.as_deref(), out.as_deref())
        }
        Command::CostReport { table10, fit, json, run_dirs } => {
            cost::cmd_cost_report(table10, fit, &run_dirs, json, &config)
        }
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
