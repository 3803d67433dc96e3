use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use flexquad::runner::{exit_code, load_scenario, run_scenario, sweep, EXIT_OK};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Config {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

/// Run a flexible-arm quadrotor scenario and write CSV traces.
#[derive(Debug, Parser)]
#[command(name = "flexquad", version)]
struct Cli {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Override `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spin-direction configuration.
    #[arg(long, value_enum)]
    config: Option<Config>,
    /// Override the autopilot deflection corrections.
    #[arg(long, value_enum)]
    corrections: Option<OnOff>,
    /// Dotted parameter path to sweep, e.g. `arm.rho_tpu`.
    #[arg(long, requires = "values")]
    sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    values: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("sim.seed".to_string(), seed.to_string()));
    }
    if let Some(c) = cli.config {
        let v = match c {
            Config::A => "\"A\"",
            Config::B => "\"B\"",
        };
        overrides.push(("vehicle.configuration".to_string(), v.to_string()));
    }
    if let Some(c) = cli.corrections {
        overrides.push(("controller.corrections".to_string(), matches!(c, OnOff::On).to_string()));
    }
    let scenario = match load_scenario(&cli.scenario, &overrides) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if let Some(param) = cli.sweep {
        return match sweep(&scenario, &param, &cli.values, &cli.out) {
            Ok(rows) => {
                for r in rows.iter().filter(|r| !r.summary.error.is_empty()) {
                    eprintln!("{param}={}: {}", r.value, r.summary.error);
                }
                println!("{} rows -> {}", rows.len(), cli.out.join("sweep.csv").display());
                ExitCode::from(EXIT_OK as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e) as u8)
            }
        };
    }
    match run_scenario(&scenario, &cli.out) {
        Ok(outcome) => {
            if let Some(e) = &outcome.error {
                eprintln!("error: {e}");
            }
            println!("{} -> {}", scenario.name, cli.out.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
