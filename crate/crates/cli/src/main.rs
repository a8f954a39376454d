//! `geomoc`: runs a configured experiment and writes its trajectories and an
//! invariant report, or compares two CSV outputs column by column.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration or input error,
//! 3 solver or output failure.

mod config;
mod experiments;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geomoc::io::{compare_tables, format_number, Table};

use crate::report::Checker;

#[derive(Parser)]
#[command(name = "geomoc", version, about = "Geometric optimal control experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's "output", then ".").
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Multiplies every check tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
    /// Report per-column deviations between two CSV files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        tol: f64,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Check,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check => 1,
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
        }
    }
}

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var("GEOMOC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Failure::Config(format!("GEOMOC_SEED={s:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Writes through a temporary file in the same directory, so readers never
/// see a partial file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Solver(format!("writing {}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, threads: usize, tol_scale: f64) -> Result<(), Failure> {
    if threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    if !(tol_scale.is_finite() && tol_scale > 0.0) {
        return Err(Failure::Config("--tol-scale must be positive".into()));
    }
    let text = fs::read_to_string(config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let cfg = config::parse(&text)?;
    let seed = seed_override()?.or(cfg.experiment.block_seed()).unwrap_or(cfg.seed);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Solver(e.to_string()))?;

    let mut checks = Checker::new(tol_scale, cfg.tolerances.clone());
    let outcome = experiments::run(&cfg.experiment, seed, &mut checks)?;
    let report = checks.finish(cfg.experiment.name(), seed);

    let dir = out.or(cfg.output).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::Solver(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in &outcome.files {
        write_atomic(&dir, name, bytes)?;
    }
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| Failure::Solver(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&dir, "report.json", &bytes)?;

    for (name, c) in &report.checks {
        println!(
            "{} {name}: {} (tolerance {})",
            if c.pass { "PASS" } else { "FAIL" },
            format_number(c.measured),
            format_number(c.tolerance)
        );
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn read_table(path: &Path) -> Result<Table, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Table::from_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn compare(a: &Path, b: &Path, tol: f64) -> Result<(), Failure> {
    let diffs = compare_tables(&read_table(a)?, &read_table(b)?).map_err(|e| Failure::Config(e.to_string()))?;
    println!("column,max_abs,max_rel");
    let mut worst: f64 = 0.0;
    for d in &diffs {
        println!("{},{},{}", d.column, format_number(d.max_abs), format_number(d.max_rel));
        worst = worst.max(d.max_abs);
    }
    if worst <= tol {
        println!("PASS max deviation {} <= {}", format_number(worst), format_number(tol));
        Ok(())
    } else {
        println!("FAIL max deviation {} > {}", format_number(worst), format_number(tol));
        Err(Failure::Check)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            tol_scale,
        } => run(&config, out, threads, tol_scale),
        Command::Compare { a, b, tol } => compare(&a, &b, tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Solver(m) => eprintln!("solver failure: {m}"),
                Failure::Check => {}
            }
            ExitCode::from(f.code())
        }
    }
}
