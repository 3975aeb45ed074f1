//! Per-step token ledgers and dollar-cost accounting, including the
//! KV-cache-reuse adjustment where a multi-sample step pays its shared
//! prompt prefix only once.
//!
//! Token averages carry one decimal; all sums run over integer tenths so the
//! published table arithmetic is reproduced exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipelines::PipelineRun;

#[derive(Debug, Error, PartialEq)]
pub enum CostingError {
    #[error("cannot build a ledger from zero runs")]
    NoRuns,
    #[error("runs mix methods: {0} and {1}")]
    MixedMethods(String, String),
}

/// Dollars per 1K tokens, input and output sides. The default pair is fitted
/// by least squares over the published per-method token/cost rows; see
/// [`fit_prices`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable { input_per_1k: 0.001, output_per_1k: 0.002 }
    }
}

/// Average token counts for one pipeline step, with the number of times the
/// step runs per use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub step: String,
    pub avg_input: f64,
    pub avg_output: f64,
    pub multiplicity: u32,
}

impl StepCost {
    pub fn new(step: impl Into<String>, avg_input: f64, avg_output: f64, multiplicity: u32) -> Self {
        StepCost { step: step.into(), avg_input, avg_output, multiplicity }
    }
}

/// Token accounting for one method. With `kv_reuse` the input side of a
/// multi-call step is paid once; outputs always scale with multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub method: String,
    pub steps: Vec<StepCost>,
    pub kv_reuse: bool,
}

fn tenths(x: f64) -> i64 {
    (x * 10.0).round() as i64
}

impl CostLedger {
    pub fn new(method: impl Into<String>, steps: Vec<StepCost>, kv_reuse: bool) -> Self {
        CostLedger { method: method.into(), steps, kv_reuse }
    }

    /// Average (input, output) tokens per use.
    pub fn total_tokens(&self) -> (f64, f64) {
        let mut input = 0i64;
        let mut output = 0i64;
        for step in &self.steps {
            let input_mult = if self.kv_reuse { 1 } else { i64::from(step.multiplicity) };
            input += tenths(step.avg_input) * input_mult;
            output += tenths(step.avg_output) * i64::from(step.multiplicity);
        }
        (input as f64 / 10.0, output as f64 / 10.0)
    }

    /// Dollars per thousand uses. With prices per 1K tokens the two factors
    /// of 1000 cancel: cost = input_tokens * input_price + output_tokens *
    /// output_price. Round only for display.
    pub fn cost_per_1000_uses(&self, prices: &PriceTable) -> f64 {
        let (input, output) = self.total_tokens();
        input * prices.input_per_1k + output * prices.output_per_1k
    }

    /// Builds a measured ledger from recorded runs of one method. Step
    /// averages are means over every trace of that step (rounded to one
    /// decimal, the reporting convention); multiplicity is the mean per-run
    /// call count rounded to nearest.
    pub fn from_runs(runs: &[PipelineRun]) -> Result<Self, CostingError> {
        let mut acc = LedgerAccumulator::default();
        for run in runs {
            acc.add_run(run)?;
        }
        acc.finish()
    }
}

/// Incremental ledger construction; partial accumulators merge count-weighted
/// so runs can be ingested concurrently.
#[derive(Debug, Default, Clone)]
pub struct LedgerAccumulator {
    method: Option<String>,
    /// insertion-ordered per-step sums
    steps: Vec<StepAccumulator>,
    runs: usize,
}

#[derive(Debug, Clone)]
struct StepAccumulator {
    step: String,
    input_sum: f64,
    output_sum: f64,
    traces: u64,
    per_run_calls: u64,
}

impl LedgerAccumulator {
    pub fn add_run(&mut self, run: &PipelineRun) -> Result<(), CostingError> {
        match &self.method {
            Some(method) if *method != run.method => {
                return Err(CostingError::MixedMethods(method.clone(), run.method.clone()))
            }
            None => self.method = Some(run.method.clone()),
            _ => {}
        }
        self.runs += 1;
        for trace in &run.steps {
            let entry = match self.steps.iter_mut().find(|s| s.step == trace.step) {
                Some(entry) => entry,
                None => {
                    self.steps.push(StepAccumulator {
                        step: trace.step.clone(),
                        input_sum: 0.0,
                        output_sum: 0.0,
                        traces: 0,
                        per_run_calls: 0,
                    });
                    self.steps.last_mut().unwrap()
                }
            };
            entry.input_sum += trace.response.usage.input_tokens as f64;
            entry.output_sum += trace.response.usage.output_tokens as f64;
            entry.traces += 1;
            entry.per_run_calls += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: LedgerAccumulator) -> Result<(), CostingError> {
        match (&self.method, &other.method) {
            (Some(a), Some(b)) if a != b => {
                return Err(CostingError::MixedMethods(a.clone(), b.clone()))
            }
            (None, Some(b)) => self.method = Some(b.clone()),
            _ => {}
        }
        self.runs += other.runs;
        for theirs in other.steps {
            match self.steps.iter_mut().find(|s| s.step == theirs.step) {
                Some(ours) => {
                    ours.input_sum += theirs.input_sum;
                    ours.output_sum += theirs.output_sum;
                    ours.traces += theirs.traces;
                    ours.per_run_calls += theirs.per_run_calls;
                }
                None => self.steps.push(theirs),
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<CostLedger, CostingError> {
        let method = self.method.ok_or(CostingError::NoRuns)?;
        let runs = self.runs as f64;
        let steps = self
            .steps
            .into_iter()
            .map(|s| StepCost {
                step: s.step,
                avg_input: round1(s.input_sum / s.traces as f64),
                avg_output: round1(s.output_sum / s.traces as f64),
                multiplicity: ((s.per_run_calls as f64 / runs).round() as u32).max(1),
            })
            .collect();
        Ok(CostLedger { method, steps, kv_reuse: false })
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Published per-method cost cells (dollars per thousand uses), in the same
/// order as [`table10_ledgers`].
pub const TABLE10_COSTS: [f64; 7] = [0.54, 2.71, 5.41, 2.37, 1.21, 4.81, 2.84];

/// The published per-method token averages (tool task), as ledgers.
pub fn table10_ledgers() -> Vec<CostLedger> {
    vec![
        CostLedger::new(
            "Few-shot",
            vec![StepCost::new("answer", 496.0, 22.6, 1)],
            false,
        ),
        CostLedger::new(
            "Few-shot + SC (5 Paths)",
            vec![StepCost::new("answer", 496.0, 22.6, 5)],
            false,
        ),
        CostLedger::new(
            "Few-shot + SC (10 Paths)",
            vec![StepCost::new("answer", 496.0, 22.6, 10)],
            false,
        ),
        CostLedger::new(
            "Self-ICL (Few-shot)",
            vec![
                StepCost::new("pseudo_inputs", 456.4, 78.7, 1),
                StepCost::new("label", 498.4, 23.6, 2),
                StepCost::new("respond", 625.1, 22.2, 1),
            ],
            false,
        ),
        CostLedger::new(
            "Analogical Prompting (Few-shot)",
            vec![StepCost::new("answer", 598.0, 304.5, 1)],
            false,
        ),
        CostLedger::new(
            "Self-Demos (Standard)",
            vec![
                StepCost::new("understand", 323.6, 3.4, 1),
                StepCost::new("demo_gen", 490.8, 58.0, 5),
                StepCost::new("sample", 776.4, 7.7, 1),
                StepCost::new("respond", 606.4, 22.5, 1),
            ],
            false,
        ),
        CostLedger::new(
            "Self-Demos (KV Cache Reuse)",
            vec![
                StepCost::new("understand", 323.6, 3.4, 1),
                StepCost::new("demo_gen", 490.8, 58.0, 5),
                StepCost::new("sample", 776.4, 7.7, 1),
                StepCost::new("respond", 606.4, 22.5, 1),
            ],
            true,
        ),
    ]
}

/// Least-squares fit of per-1K prices to (input_tokens, output_tokens, cost)
/// rows, for re-deriving the price pair from a future price list.
pub fn fit_prices(rows: &[(f64, f64, f64)]) -> Option<PriceTable> {
    let (mut xx, mut xy, mut yy, mut xc, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, c) in rows {
        xx += x * x;
        xy += x * y;
        yy += y * y;
        xc += x * c;
        yc += y * c;
    }
    let det = xx * yy - xy * xy;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(PriceTable {
        input_per_1k: (xc * yy - yc * xy) / det,
        output_per_1k: (yc * xx - xc * xy) / det,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GenRequest, GenResponse, Usage};
    use crate::pipelines::{PipelineRun, RunMeta, RunOutcome, StepTrace};

    fn ledger(method: &str) -> CostLedger {
        table10_ledgers()
            .into_iter()
            .find(|l| l.method == method)
            .unwrap()
    }

    #[test]
    fn standard_input_sum_is_exact() {
        let (input, output) = ledger("Self-Demos (Standard)").total_tokens();
        assert_eq!(input, 4160.4);
        assert_eq!(output, 323.6);
    }

    #[test]
    fn kv_reuse_pays_the_shared_prefix_once() {
        let (input, output) = ledger("Self-Demos (KV Cache Reuse)").total_tokens();
        assert_eq!(input, 2197.2);
        assert_eq!(output, 323.6);
    }

    #[test]
    fn self_consistency_and_self_icl_sums_are_exact() {
        let (input, output) = ledger("Few-shot + SC (5 Paths)").total_tokens();
        assert_eq!((input, output), (2480.0, 113.0));
        let (input, output) = ledger("Self-ICL (Few-shot)").total_tokens();
        assert_eq!((input, output), (2078.3, 148.1));
    }

    #[test]
    fn published_cost_cells_reproduce() {
        let prices = PriceTable::default();
        let expected = [0.54, 2.71, 5.41, 2.37, 1.21, 4.81, 2.84];
        for (ledger, want) in table10_ledgers().iter().zip(expected) {
            let got = ledger.cost_per_1000_uses(&prices);
            assert!(
                (got - want).abs() <= 0.01,
                "{}: got {got}, want {want}",
                ledger.method
            );
            assert_eq!(round2(got), want, "{}", ledger.method);
        }
    }

    #[test]
    fn kv_reuse_reduction_equals_shared_prefix_savings() {
        let standard = ledger("Self-Demos (Standard)");
        let reuse = ledger("Self-Demos (KV Cache Reuse)");
        let (std_in, std_out) = standard.total_tokens();
        let (kv_in, kv_out) = reuse.total_tokens();
        assert_eq!(std_out, kv_out);
        let saved: f64 = standard
            .steps
            .iter()
            .map(|s| s.avg_input * f64::from(s.multiplicity - 1))
            .sum();
        assert!((std_in - kv_in - saved).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_the_price_pair() {
        let rows: Vec<(f64, f64, f64)> = [0.54, 2.71, 5.41, 2.37, 1.21, 4.81, 2.84]
            .iter()
            .zip(table10_ledgers())
            .map(|(&cost, ledger)| {
                let (input, output) = ledger.total_tokens();
                (input, output, cost)
            })
            .collect();
        let fitted = fit_prices(&rows).unwrap();
        assert!((fitted.input_per_1k - 0.001).abs() < 1e-5, "{fitted:?}");
        assert!((fitted.output_per_1k - 0.002).abs() < 1e-5, "{fitted:?}");
    }

    #[test]
    fn degenerate_fit_is_none() {
        assert!(fit_prices(&[]).is_none());
        assert!(fit_prices(&[(1.0, 1.0, 0.003), (2.0, 2.0, 0.006)]).is_none());
    }

    fn run_with(method: &str, steps: &[(&str, u64, u64)]) -> PipelineRun {
        PipelineRun {
            instance_id: "i".into(),
            method: method.into(),
            steps: steps
                .iter()
                .map(|(name, input, output)| StepTrace {
                    step: name.to_string(),
                    request: GenRequest {
                        prompt: "p".into(),
                        temperature: 0.0,
                        n: 1,
                        max_tokens: None,
                        seed_tag: "t".into(),
                    },
                    response: GenResponse {
                        completions: vec![String::new()],
                        usage: Usage { input_tokens: *input, output_tokens: *output },
                    },
                })
                .collect(),
            selected_demos: None,
            final_answer_text: String::new(),
            outcome: RunOutcome::Math { answer: None },
            flags: vec![],
            meta: RunMeta::default(),
        }
    }

    #[test]
    fn ledger_from_runs_averages_per_step() {
        let runs = vec![
            run_with("zero-shot", &[("answer", 100, 10)]),
            run_with("zero-shot", &[("answer", 120, 14)]),
        ];
        let ledger = CostLedger::from_runs(&runs).unwrap();
        assert_eq!(ledger.steps.len(), 1);
        assert_eq!(ledger.steps[0].avg_input, 110.0);
        assert_eq!(ledger.steps[0].avg_output, 12.0);
        assert_eq!(ledger.steps[0].multiplicity, 1);
    }

    #[test]
    fn ledger_from_runs_reads_multiplicity_from_trace_structure() {
        let steps = [
            ("understand", 300u64, 3u64),
            ("demo_gen", 490, 58),
            ("demo_gen", 490, 58),
            ("demo_gen", 490, 58),
            ("demo_gen", 490, 58),
            ("demo_gen", 490, 58),
            ("sample", 770, 8),
            ("respond", 600, 22),
        ];
        let ledger = CostLedger::from_runs(&[run_with("self-demos", &steps)]).unwrap();
        let demo_gen = ledger.steps.iter().find(|s| s.step == "demo_gen").unwrap();
        assert_eq!(demo_gen.multiplicity, 5);
        assert_eq!(ledger.steps.len(), 4);
    }

    #[test]
    fn from_runs_rejects_empty_and_mixed_input() {
        assert_eq!(CostLedger::from_runs(&[]).unwrap_err(), CostingError::NoRuns);
        let runs = vec![
            run_with("zero-shot", &[("answer", 1, 1)]),
            run_with("few-shot", &[("answer", 1, 1)]),
        ];
        assert!(matches!(
            CostLedger::from_runs(&runs).unwrap_err(),
            CostingError::MixedMethods(..)
        ));
    }

    #[test]
    fn accumulators_merge_count_weighted() {
        let mut left = LedgerAccumulator::default();
        left.add_run(&run_with("zero-shot", &[("answer", 100, 10)])).unwrap();
        let mut right = LedgerAccumulator::default();
        right.add_run(&run_with("zero-shot", &[("answer", 120, 14)])).unwrap();
        right.add_run(&run_with("zero-shot", &[("answer", 140, 18)])).unwrap();
        left.merge(right).unwrap();
        let ledger = left.finish().unwrap();
        assert_eq!(ledger.steps[0].avg_input, 120.0);
        assert_eq!(ledger.steps[0].avg_output, 14.0);
    }
}
