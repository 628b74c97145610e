use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentError, MethodEntry};
use super::problems::{load_problems, Problem};
use super::records::{
    aggregate, aggregate_csv, emit_curves, curves_csv, records_csv, records_jsonl, write_atomic,
    AggregateRow, MetricsRecord,
};
use super::seeds::{derive_seed, label_hash};
use crate::engine::{run_search, AnswerStatus};

/// Search seed of one cell.
pub fn cell_seed(master: u64, label: &str, n: usize, problem_index: usize) -> u64 {
    derive_seed(master, &[label_hash(label), n as u64, problem_index as u64])
}

/// Run one cell. Search failures become a `failed` record.
pub fn run_cell(
    entry: &MethodEntry,
    n: usize,
    horizon: usize,
    master_seed: u64,
    problem_index: usize,
    problem: &Problem,
    record_wall_time: bool,
) -> MetricsRecord {
    let label = entry.label();
    let mut config = entry
        .search_config(n, horizon)
        .expect("method entries are validated before the sweep");
    config.rng_seed = cell_seed(master_seed, &label, n, problem_index);
    let start = Instant::now();
    let result = run_search(&config, problem.backend());
    let wall_ms = record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3);
    let mut rec = MetricsRecord {
        method: label,
        n,
        m: config.effective_parent_budget(),
        seed: master_seed,
        problem: problem.id.clone(),
        correct: None,
        answer: None,
        status: "failed".into(),
        error: None,
        rounds_run: 0,
        new_generation_units: 0,
        backtrack_recompute_units: 0,
        scorer_calls: 0,
        frozen_passthroughs: 0,
        generated_tokens: 0,
        wall_ms,
        pool_sizes: Vec::new(),
    };
    match result {
        Ok(run) => {
            let fa = run.final_answer.clone().expect("finished runs carry an answer");
            rec.correct = fa.correct;
            rec.answer = fa.answer;
            rec.status = match fa.status {
                AnswerStatus::Valid => "valid",
                AnswerStatus::NoTerminalTrace => "no_terminal_trace",
            }
            .into();
            rec.rounds_run = run.rounds_run;
            rec.new_generation_units = run.ledger.new_generation_units;
            rec.backtrack_recompute_units = run.ledger.backtrack_recompute_units;
            rec.scorer_calls = run.ledger.scorer_calls;
            rec.frozen_passthroughs = run.ledger.frozen_passthroughs;
            rec.generated_tokens = run.ledger.generated_tokens;
            rec.pool_sizes = run.pool_sizes;
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            if problem.backend().is_correct("").is_some() {
                rec.correct = Some(false);
            }
        }
    }
    rec
}

/// Every (method, N, seed, problem) cell, in that nesting order.
pub fn run_sweep(config: &ExperimentConfig, problems: &[Problem]) -> Result<Vec<MetricsRecord>, ExperimentError> {
    config.validate()?;
    let mut cells = Vec::new();
    for entry in &config.methods {
        for &n in &config.budgets {
            for &seed in &config.seeds {
                for (pi, problem) in problems.iter().enumerate() {
                    cells.push((entry, n, seed, pi, problem));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|(entry, n, seed, pi, problem)| {
                run_cell(entry, *n, config.horizon, *seed, *pi, problem, config.record_wall_time)
            })
            .collect()
    }))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
}

pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const CURVES_CSV: &str = "curves.csv";

/// Load problems, run the sweep and write records, aggregates and curves
/// under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let problems = load_problems(&config.problems)?;
    let records = run_sweep(config, &problems)?;
    let agg = aggregate(&records);
    let dir = &config.output_dir;
    let files = vec![
        dir.join(RECORDS_CSV),
        dir.join(RECORDS_JSONL),
        dir.join(AGGREGATE_CSV),
        dir.join(CURVES_CSV),
    ];
    write_atomic(&files[0], &records_csv(&records)?)?;
    write_atomic(&files[1], &records_jsonl(&records))?;
    write_atomic(&files[2], &aggregate_csv(&agg)?)?;
    if !records.is_empty() {
        write_atomic(&files[3], &curves_csv(&emit_curves(&records)?)?)?;
    }
    Ok(ExperimentOutput {
        records,
        aggregate: agg,
        files,
    })
}
