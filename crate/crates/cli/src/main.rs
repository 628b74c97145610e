use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppbt::harness::{
    self, checks, curves_csv, emit_curves, read_records_jsonl, write_atomic, ExperimentConfig,
    CURVES_CSV, RECORDS_JSONL,
};

#[derive(Parser)]
#[command(name = "ppbt", version, about = "Seeded search sweeps over PRM-scored prefix trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write records, aggregates and curves.
    Run(SweepArgs),
    /// Rebuild curves.csv from a records.jsonl file or an output directory.
    Curves {
        /// records.jsonl, or a directory holding it.
        input: PathBuf,
        /// Defaults to curves.csv next to the records.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a config without running anything.
    ValidateConfig(SweepArgs),
    /// Run the oracle property suite.
    OracleCheck,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Keep only these method labels or names (repeatable).
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Keep only these budgets (repeatable).
    #[arg(short = 'n', long = "budget")]
    budgets: Vec<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

impl SweepArgs {
    fn load(&self) -> Result<ExperimentConfig, harness::ExperimentError> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            c.output_dir = dir.clone();
        }
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        c.filter(&self.methods, &self.budgets)?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<bool, harness::ExperimentError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.load()?;
            let out = harness::run_experiment(&config)?;
            let failed = out.records.iter().filter(|r| r.status == "failed").count();
            for row in &out.aggregate {
                println!(
                    "{:<24} N={:<4} acc={:.4} ±{:.4} units={:.1}",
                    row.method, row.n, row.accuracy_mean, row.accuracy_seed_std, row.mean_generation_units
                );
            }
            println!("{} records ({failed} failed)", out.records.len());
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Curves { input, output } => {
            let path = if input.is_dir() { input.join(RECORDS_JSONL) } else { input };
            let records = read_records_jsonl(&path)?;
            let points = emit_curves(&records)?;
            let out = output.unwrap_or_else(|| path.with_file_name(CURVES_CSV));
            write_atomic(&out, &curves_csv(&points)?)?;
            println!("wrote {} ({} points)", out.display(), points.len());
            Ok(true)
        }
        Command::ValidateConfig(args) => {
            let c = args.load()?;
            println!(
                "ok: {} methods, {} budgets, {} seeds",
                c.methods.len(),
                c.budgets.len(),
                c.seeds.len()
            );
            Ok(true)
        }
        Command::OracleCheck => {
            let results = checks::oracle_suite();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
