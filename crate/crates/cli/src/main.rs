//! `iovtwin` — benchmark harness for the digital-twin IoV stack.
//!
//! Subcommands: `run` (one experiment), `compare` (dt-native vs
//! traditional), `sweep` (learning-rate sweep), `selftest` (property
//! suites). Configuration precedence: defaults < `--config` JSON file <
//! `IOVTWIN_*` environment overrides < explicit flags.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use iovtwin_cli::config::{ExperimentConfig, GlobalConfig, Mode};
use iovtwin_cli::driver::run_experiment;
use iovtwin_cli::experiment::compare_modes;
use iovtwin_cli::selftest::run_all;
use iovtwin_cli::sweep::sweep_learning_rates;
use iovtwin_cli::ExperimentError;

#[derive(Parser)]
#[command(name = "iovtwin", version, about = "Digital-twin IoV benchmark harness")]
struct Cli {
    /// Global JSON config file (see README for the schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one streaming experiment and write twin XML plus metrics CSV.
    Run {
        /// Roadside sensor count.
        #[arg(long, default_value_t = 5)]
        sensors: usize,
        /// Which service layer commits events to twins.
        #[arg(long, value_enum, default_value_t = Mode::DtNative)]
        mode: Mode,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
        /// Inject a broker fault at this simulated time (dt-native only).
        #[arg(long)]
        fault_at: Option<f64>,
    },
    /// Paired dt-native vs traditional runs with 95% CIs on the saving.
    Compare {
        /// Comma-separated sensor counts, e.g. 5,20,90.
        #[arg(long, value_delimiter = ',')]
        sensors: Option<Vec<usize>>,
        /// Paired runs per sensor count.
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
    },
    /// Train one learner per (learning-rate combo, seed) and rank them.
    Sweep {
        /// Episodes per training run.
        #[arg(long)]
        episodes: Option<usize>,
        /// Seeds per combo.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the property suites (density recount, gradient checks, frame
    /// fuzz, session enumeration, transport equivalence).
    Selftest,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = real_main(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn real_main(cli: Cli) -> Result<(), ExperimentError> {
    let global = match &cli.config {
        Some(path) => GlobalConfig::from_file(path)?,
        None => GlobalConfig::default(),
    };
    let mut global = global.with_env_overrides()?;

    match cli.command {
        Command::Run { sensors, mode, duration, seed, out, fault_at } => {
            if let Some(d) = duration {
                global.experiment.duration_s = d;
            }
            if let Some(o) = out {
                global.experiment.out_dir = o;
            }
            if let Some(f) = fault_at {
                global.experiment.fault_at_s = Some(f);
            }
            let seed = seed.unwrap_or(global.sim.seed);
            let cfg = ExperimentConfig::resolve(&global, sensors, mode, seed);
            let output = run_experiment(&cfg)?;
            print!("{}", output.metrics.summary());
            println!("metrics: {}", output.csv_path.display());
            println!("twins:   {}", output.twin_dir.display());
        }
        Command::Compare { sensors, runs, out } => {
            if let Some(o) = out {
                global.experiment.out_dir = o;
            }
            let sensor_counts =
                sensors.unwrap_or_else(|| global.experiment.sensor_counts.clone());
            let runs = runs.unwrap_or(global.experiment.runs);
            let report = compare_modes(&global, &sensor_counts, runs)?;
            let path = Path::new(&global.experiment.out_dir).join("compare.csv");
            report.write(&path)?;
            print!("{}", report.summary());
            println!("rows: {}", path.display());
        }
        Command::Sweep { episodes, seeds, out } => {
            if let Some(e) = episodes {
                global.sweep.episodes = e;
            }
            if let Some(s) = seeds {
                global.sweep.seeds = s;
            }
            if let Some(o) = out {
                global.experiment.out_dir = o;
            }
            let report = sweep_learning_rates(&global)?;
            let path = Path::new(&global.experiment.out_dir).join("sweep.csv");
            report.write(&path)?;
            print!("{}", report.summary());
            println!("rows: {}", path.display());
        }
        Command::Selftest => {
            let results = run_all();
            let mut failures = 0;
            for r in &results {
                println!(
                    "[{}] {:<24} {:>7.2} s  {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.seconds,
                    r.detail
                );
                failures += usize::from(!r.passed);
            }
            if failures > 0 {
                return Err(ExperimentError::Protocol(format!(
                    "{failures} selftest suite(s) failed"
                )));
            }
        }
    }
    Ok(())
}
