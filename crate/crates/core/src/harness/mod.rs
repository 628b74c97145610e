//! Experiment sweeps: TOML configs, problem sources, per-cell seeds,
//! metrics records, aggregates and accuracy-vs-compute curves.

pub mod checks;
mod config;
mod problems;
mod records;
mod run;
mod seeds;

pub use config::{ExperimentConfig, ExperimentError, MethodEntry, ProblemSource};
pub use problems::{blocker_problems, load_problems, synthetic_problems, Problem, ProblemBackend};
pub use records::{
    aggregate, aggregate_csv, curves_csv, emit_curves, read_records_jsonl, records_csv,
    records_jsonl, write_atomic, AggregateRow, CurvePoint, MetricsRecord,
};
pub use run::{
    cell_seed, run_cell, run_experiment, run_sweep, ExperimentOutput, AGGREGATE_CSV, CURVES_CSV,
    RECORDS_CSV, RECORDS_JSONL,
};
pub use seeds::{derive_seed, label_hash};
