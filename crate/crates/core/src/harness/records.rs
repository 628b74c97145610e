use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentError;

/// Outcome of one (method, N, seed, problem) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub problem: String,
    pub correct: Option<bool>,
    pub answer: Option<String>,
    /// `valid`, `no_terminal_trace` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub rounds_run: usize,
    pub new_generation_units: u64,
    pub backtrack_recompute_units: u64,
    pub scorer_calls: u64,
    pub frozen_passthroughs: u64,
    pub generated_tokens: u64,
    pub wall_ms: Option<f64>,
    pub pool_sizes: Vec<usize>,
}

impl MetricsRecord {
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }

    /// New units plus recomputed context units.
    pub fn total_units(&self) -> u64 {
        self.new_generation_units + self.backtrack_recompute_units
    }
}

/// Flat CSV form of a record.
#[derive(Debug, Serialize)]
struct CsvRecord<'a> {
    method: &'a str,
    n: usize,
    m: usize,
    seed: u64,
    problem: &'a str,
    correct: Option<bool>,
    answer: Option<&'a str>,
    status: &'a str,
    error: Option<&'a str>,
    rounds_run: usize,
    new_generation_units: u64,
    backtrack_recompute_units: u64,
    scorer_calls: u64,
    frozen_passthroughs: u64,
    generated_tokens: u64,
    wall_ms: Option<f64>,
    pool_sizes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub n: usize,
    pub records: usize,
    pub failures: usize,
    pub accuracy_mean: f64,
    /// Sample std of per-seed accuracies (0 with one seed).
    pub accuracy_seed_std: f64,
    /// Sample std of the per-record correctness flags.
    pub accuracy_record_std: f64,
    pub mean_generation_units: f64,
    pub mean_backtrack_units: f64,
    pub mean_total_units: f64,
    pub mean_generated_tokens: f64,
    pub sum_generation_units: u64,
    pub sum_total_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub n: usize,
    pub mean_generation_units: f64,
    pub mean_total_units: f64,
    pub mean_generated_tokens: f64,
    pub accuracy: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Group by (method, N) keeping the first-seen method order, N ascending.
fn groups(records: &[MetricsRecord]) -> Vec<((String, usize), Vec<&MetricsRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<(usize, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let mi = match order.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                order.push(r.method.clone());
                order.len() - 1
            }
        };
        map.entry((mi, r.n)).or_default().push(r);
    }
    map.into_iter()
        .map(|((mi, n), rs)| ((order[mi].clone(), n), rs))
        .collect()
}

pub fn aggregate(records: &[MetricsRecord]) -> Vec<AggregateRow> {
    groups(records)
        .into_iter()
        .map(|((method, n), rs)| {
            let flags: Vec<f64> = rs.iter().map(|r| r.is_correct() as u8 as f64).collect();
            let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &rs {
                per_seed.entry(r.seed).or_default().push(r.is_correct() as u8 as f64);
            }
            let seed_acc: Vec<f64> = per_seed.values().map(|v| mean(v)).collect();
            let units: Vec<f64> = rs.iter().map(|r| r.new_generation_units as f64).collect();
            let back: Vec<f64> = rs.iter().map(|r| r.backtrack_recompute_units as f64).collect();
            let total: Vec<f64> = rs.iter().map(|r| r.total_units() as f64).collect();
            let tokens: Vec<f64> = rs.iter().map(|r| r.generated_tokens as f64).collect();
            AggregateRow {
                method,
                n,
                records: rs.len(),
                failures: rs.iter().filter(|r| r.status == "failed").count(),
                accuracy_mean: mean(&flags),
                accuracy_seed_std: sample_std(&seed_acc),
                accuracy_record_std: sample_std(&flags),
                mean_generation_units: mean(&units),
                mean_backtrack_units: mean(&back),
                mean_total_units: mean(&total),
                mean_generated_tokens: mean(&tokens),
                sum_generation_units: rs.iter().map(|r| r.new_generation_units).sum(),
                sum_total_units: rs.iter().map(|r| r.total_units()).sum(),
            }
        })
        .collect()
}

/// Accuracy against compute, one point per (method, N), N ascending.
pub fn emit_curves(records: &[MetricsRecord]) -> Result<Vec<CurvePoint>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::MissingMetrics("<records>".into()));
    }
    Ok(aggregate(records)
        .into_iter()
        .map(|a| CurvePoint {
            method: a.method,
            n: a.n,
            mean_generation_units: a.mean_generation_units,
            mean_total_units: a.mean_total_units,
            mean_generated_tokens: a.mean_generated_tokens,
            accuracy: a.accuracy_mean,
        })
        .collect())
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| ExperimentError::Parse(e.to_string()))
}

pub fn records_csv(records: &[MetricsRecord]) -> Result<Vec<u8>, ExperimentError> {
    csv_bytes(records.iter().map(|r| CsvRecord {
        method: &r.method,
        n: r.n,
        m: r.m,
        seed: r.seed,
        problem: &r.problem,
        correct: r.correct,
        answer: r.answer.as_deref(),
        status: &r.status,
        error: r.error.as_deref(),
        rounds_run: r.rounds_run,
        new_generation_units: r.new_generation_units,
        backtrack_recompute_units: r.backtrack_recompute_units,
        scorer_calls: r.scorer_calls,
        frozen_passthroughs: r.frozen_passthroughs,
        generated_tokens: r.generated_tokens,
        wall_ms: r.wall_ms,
        pool_sizes: r
            .pool_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    }))
}

pub fn records_jsonl(records: &[MetricsRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<Vec<u8>, ExperimentError> {
    csv_bytes(rows)
}

pub fn curves_csv(points: &[CurvePoint]) -> Result<Vec<u8>, ExperimentError> {
    csv_bytes(points)
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<MetricsRecord>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|_| ExperimentError::MissingMetrics(path.to_path_buf()))?;
    let records: Vec<MetricsRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ExperimentError::Parse(e.to_string())))
        .collect::<Result<_, _>>()?;
    if records.is_empty() {
        return Err(ExperimentError::MissingMetrics(path.to_path_buf()));
    }
    Ok(records)
}
