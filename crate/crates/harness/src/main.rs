use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pfs_harness::run::{run, RunOptions};
use pfs_harness::workload::{format_ops, generate, parse_ops, Distribution, HarnessError, Structure, WorkloadSpec};

/// Replays a workload on a finger structure, checks every result against a
/// reference map, scans invariants and reports work against the finger bound.
#[derive(Parser, Debug)]
#[command(name = "pfs", version)]
struct Cli {
    #[arg(long, value_enum)]
    structure: Structure,
    /// Trace file: one op per line, `<type> <key> [<value>]`.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    ops_file: Option<PathBuf>,
    /// Generated workload: uniform, finger-local(λ), zipf(s) or adversarial-cascade.
    #[arg(long)]
    gen: Option<Distribution>,
    /// Number of generated operations.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Keys are drawn from 0..keyspace.
    #[arg(long, default_value_t = 100_000)]
    keyspace: i64,
    /// Submitting workers for fs2.
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full invariant scan every this many operations (0: only at the end).
    #[arg(long, default_value_t = 0)]
    check_every: usize,
    /// Append the report row to this CSV file (header written if new).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Items present before the trace starts.
    #[arg(long, default_value_t = 0)]
    prefill: usize,
    /// Batch size for fs1 and mf.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Finger count for mf.
    #[arg(long, default_value_t = 0)]
    fingers: usize,
    /// Write 0 as the wall time so rows are reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Save the generated trace in op-file format.
    #[arg(long)]
    write_ops: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match drive(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn drive(cli: &Cli) -> Result<bool, HarnessError> {
    let spec = WorkloadSpec {
        structure: cli.structure,
        n_ops: cli.n,
        key_space: cli.keyspace,
        distribution: cli.gen.unwrap_or(Distribution::Uniform),
        p: cli.p,
        seed: cli.seed,
        prefill: cli.prefill,
        batch: cli.batch,
        fingers: cli.fingers,
    };
    let trace = match &cli.ops_file {
        Some(path) => parse_ops(&std::fs::read_to_string(path)?)?,
        None => generate(&spec)?,
    };
    if let Some(path) = &cli.write_ops {
        std::fs::write(path, format_ops(&trace))?;
    }
    let opts = RunOptions {
        check_every: cli.check_every,
        deterministic: cli.deterministic,
    };
    let report = run(&spec, &trace, &opts)?;
    report.write_csv(std::io::stdout().lock(), true, cli.deterministic)?;
    if let Some(path) = &cli.csv {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        report.write_csv(file, fresh, cli.deterministic)?;
    }
    for f in &report.failures {
        eprintln!("FAIL {f}");
    }
    if report.invariant_failures > report.failures.len() {
        eprintln!("… {} more failures", report.invariant_failures - report.failures.len());
    }
    Ok(report.passed())
}
