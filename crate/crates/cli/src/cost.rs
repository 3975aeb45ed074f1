//! `cost-report`: dollars per thousand uses, from the published per-step
//! token table or from recorded run traces.

use std::collections::BTreeMap;
use std::path::PathBuf;

use demoforge_core::costing::{
    fit_prices, round2, table10_ledgers, CostLedger, PriceTable, TABLE10_COSTS,
};
use serde::Serialize;

use crate::config::Config;

#[derive(Debug, Serialize)]
pub struct CostRow {
    pub method: String,
    pub cost: f64,
    pub input_tokens: f64,
    pub output_tokens: f64,
}

fn row(ledger: &CostLedger, prices: &PriceTable) -> CostRow {
    let (input_tokens, output_tokens) = ledger.total_tokens();
    CostRow {
        method: ledger.method.clone(),
        cost: round2(ledger.cost_per_1000_uses(prices)),
        input_tokens,
        output_tokens,
    }
}

pub fn cmd_cost_report(
    table10: bool,
    fit: bool,
    run_dirs: &[PathBuf],
    json: bool,
    config: &Config,
) -> anyhow::Result<u8> {
    let prices = PriceTable {
        input_per_1k: config.prices.input_per_1k,
        output_per_1k: config.prices.output_per_1k,
    };

    let rows: Vec<CostRow> = if table10 {
        table10_ledgers().iter().map(|l| row(l, &prices)).collect()
    } else {
        if run_dirs.is_empty() {
            anyhow::bail!("cost-report needs --table10 or at least one run dir");
        }
        // one ledger per method across all given dirs
        let mut by_method: BTreeMap<String, Vec<demoforge_core::pipelines::PipelineRun>> =
            BTreeMap::new();
        for dir in run_dirs {
            for run in crate::run::load_artifacts(dir)? {
                by_method.entry(run.method.clone()).or_default().push(run);
            }
        }
        by_method
            .values()
            .map(|runs| CostLedger::from_runs(runs).map(|l| row(&l, &prices)))
            .collect::<Result<_, _>>()?
    };

    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!(
            "{:<34} {:>6} {:>11} {:>12}",
            "Method", "Cost", "Tokens In", "Tokens Out"
        );
        for row in &rows {
            println!(
                "{:<34} {:>6.2} {:>11.1} {:>12.1}",
                row.method, row.cost, row.input_tokens, row.output_tokens
            );
        }
    }

    if fit {
        let observations: Vec<(f64, f64, f64)> = if table10 {
            table10_ledgers()
                .iter()
                .zip(TABLE10_COSTS)
                .map(|(ledger, cost)| {
                    let (input, output) = ledger.total_tokens();
                    (input, output, cost)
                })
                .collect()
        } else {
            rows.iter()
                .map(|r| (r.input_tokens, r.output_tokens, r.cost))
                .collect()
        };
        match fit_prices(&observations) {
            Some(fitted) => println!(
                "fitted prices: input {:.6} $/1K, output {:.6} $/1K",
                fitted.input_per_1k, fitted.output_per_1k
            ),
            None => eprintln!("fit is degenerate for these rows"),
        }
    }
    Ok(0)
}
