use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nura::oracle::{centralized_solve, grid_search_solve, GRID_APP_LIMIT};
use nura::scenario::{
    emit_csv, load_schedule, load_scenario, run_once, run_schedule, sweep_r, CsvKind, RunRecord,
};
use nura::{Error, Result};

#[derive(Parser)]
#[command(name = "nura", version, about = "Two-stage proportional-fair rate allocation for one cell")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and print the allocation.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's capacity.
        #[arg(long)]
        r: Option<f64>,
        /// Write the per-round bid trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve the scenario for a range of capacities.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        r_start: f64,
        #[arg(long, default_value_t = 200.0)]
        r_end: f64,
        #[arg(long, default_value_t = 5.0)]
        r_step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the scenario once per epoch of a weight schedule.
    Schedule {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the distributed result with the centralized solvers.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        r: Option<f64>,
        /// Step of the exhaustive grid search (used when the scenario is small enough).
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn print_record(rec: &RunRecord) {
    println!(
        "R = {}  case = {}  rounds = {}  price = {:.6}",
        rec.capacity,
        rec.case.label(),
        rec.rounds,
        rec.final_price
    );
    for ((id, rate), apps) in rec.user_ids.iter().zip(&rec.user_rates).zip(&rec.app_rates) {
        let split: Vec<String> = apps.iter().map(|r| format!("{r:.4}")).collect();
        println!("  {id:<8} {rate:>10.4}   [{}]", split.join(", "));
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { scenario, r, trace } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(r) = r {
                config = config.with_capacity(r);
            }
            let rec = run_once(&config)?;
            print_record(&rec);
            if let Some(path) = trace {
                emit_csv(std::slice::from_ref(&rec), path, CsvKind::Trace)?;
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            r_start,
            r_end,
            r_step,
            out,
        } => {
            let config = load_scenario(&scenario)?;
            let outcome = sweep_r(&config, r_start, r_end, r_step)?;
            create_dir(&out)?;
            if !outcome.records.is_empty() {
                emit_csv(&outcome.records, out.join("allocations.csv"), CsvKind::Allocations)?;
                emit_csv(
                    &outcome.records,
                    out.join("app_allocations.csv"),
                    CsvKind::AppAllocations,
                )?;
            }
            println!(
                "{} runs written to {}",
                outcome.records.len(),
                out.display()
            );
            for f in &outcome.failures {
                eprintln!("R = {}: {}", f.capacity, f.error);
            }
            match outcome.failures.into_iter().next() {
                Some(f) => Err(f.error),
                None => Ok(()),
            }
        }
        Command::Schedule {
            scenario,
            schedule,
            out,
        } => {
            let config = load_scenario(&scenario)?;
            let schedule = load_schedule(&schedule)?;
            let runs = run_schedule(&config, &schedule)?;
            create_dir(&out)?;
            for (i, rec) in &runs {
                let epoch = &schedule.epochs[*i];
                println!("epoch {} (t = {} to {})", i + 1, epoch.start, epoch.end);
                print_record(rec);
                let dir = out.join(format!("epoch_{}", i + 1));
                create_dir(&dir)?;
                let recs = std::slice::from_ref(rec);
                emit_csv(recs, dir.join("allocations.csv"), CsvKind::Allocations)?;
                emit_csv(recs, dir.join("app_allocations.csv"), CsvKind::AppAllocations)?;
            }
            Ok(())
        }
        Command::Validate {
            scenario,
            r,
            grid_step,
        } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(r) = r {
                config = config.with_capacity(r);
            }
            let rec = run_once(&config)?;
            print_record(&rec);
            let dual = centralized_solve(&config.users, config.capacity)?;
            let max_dev = |other: &[f64]| {
                rec.user_rates
                    .iter()
                    .zip(other)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            println!(
                "max deviation from dual bisection oracle: {:.6}",
                max_dev(&dual.user_rates)
            );
            let apps: usize = config.users.iter().map(|u| u.apps.len()).sum();
            if apps <= GRID_APP_LIMIT {
                let grid = grid_search_solve(&config.users, config.capacity, grid_step)?;
                println!(
                    "max deviation from grid search (step {grid_step}): {:.6}",
                    max_dev(&grid.user_rates)
                );
            } else {
                println!("grid search skipped: {apps} applications exceed the limit of {GRID_APP_LIMIT}");
            }
            Ok(())
        }
    }
}
