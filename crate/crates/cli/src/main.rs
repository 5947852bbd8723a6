use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::info;

use meor_core::io::{export_config, parse_config, write_outputs, RunInfo};
use meor_core::scenarios::validation::run_validation;
use meor_core::scenarios::{
    builtin, description, simulate, suggestions, ScenarioConfig, BUILTIN_NAMES,
};
use meor_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "meor",
    version,
    about = "Core-flood simulator for microbial enhanced oil recovery"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a built-in scenario, a configuration file, or `-` for stdin.
    Run {
        target: String,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed time step in seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Number of elements along the column.
        #[arg(long)]
        mesh: Option<usize>,
    },
    /// Compare scenarios with their reference solutions.
    Validate {
        #[arg(value_parser = ["bl", "hendry", "all"])]
        group: String,
    },
    /// List the built-in scenarios.
    List,
    /// Print a built-in scenario as an editable configuration.
    ExportConfig { scenario: String },
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn unknown_scenario(name: &str) -> ExitCode {
    eprintln!("error: unknown scenario `{name}`");
    eprintln!("did you mean one of: {}", suggestions(name).join(", "));
    eprintln!("run `meor list` for all built-ins, or pass a configuration file");
    ExitCode::from(EXIT_USAGE)
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_USAGE)
}

/// Resolves a run target to a configuration and the keys it left to
/// defaults.
fn load(target: &str) -> Result<(ScenarioConfig, Vec<String>), ExitCode> {
    if target == "-" {
        let mut text = String::new();
        if let Err(e) = std::io::stdin().read_to_string(&mut text) {
            return Err(config_error(&Error::io("<stdin>", e)));
        }
        let parsed = parse_config(&text).map_err(|e| config_error(&e))?;
        return Ok((parsed.config, parsed.defaulted));
    }
    if let Some(config) = builtin(target) {
        return Ok((config, Vec::new()));
    }
    let path = Path::new(target);
    if !path.is_file() {
        return Err(unknown_scenario(target));
    }
    let text = std::fs::read_to_string(path).map_err(|e| config_error(&Error::io(path, e)))?;
    let parsed = parse_config(&text).map_err(|e| {
        eprintln!("in {}:", path.display());
        config_error(&e)
    })?;
    Ok((parsed.config, parsed.defaulted))
}

fn run(target: &str, out: Option<PathBuf>, dt: Option<f64>, mesh: Option<usize>) -> ExitCode {
    let (mut config, defaulted) = match load(target) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = mesh {
        config = config.with_elements(n);
    }
    if let Some(dt) = dt {
        config = config.with_fixed_dt(dt);
    }
    if let Err(e) = config.validate() {
        return config_error(&e);
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    info!("running `{}` into {}", config.name, dir.display());
    let started = unix_now();
    let outcome = match simulate(&config) {
        Ok(o) => o,
        Err(e) => return config_error(&e),
    };
    let status = outcome
        .error
        .as_ref()
        .map_or_else(|| "ok".to_string(), |e| format!("failed: {e}"));
    let run_info = RunInfo {
        started_unix_s: started,
        finished_unix_s: unix_now(),
        status,
        defaulted,
    };
    if let Err(e) = write_outputs(&config, &outcome.chronicle, &run_info, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_SOLVER);
    }
    for s in &outcome.chronicle.stages {
        println!(
            "{:<14} {:>8.2} h  oil {:>9.3} ml  water {:>9.3} ml  dp {:>10.1} Pa",
            s.name,
            (s.t_end - s.t_start) / 3600.0,
            s.oil_recovered * 1e6,
            s.water_produced * 1e6,
            s.final_dp
        );
    }
    println!("results in {}", dir.display());
    match outcome.error {
        Some(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
        None => ExitCode::SUCCESS,
    }
}

fn validate(group: &str) -> ExitCode {
    match run_validation(group) {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
        Err(e @ Error::Config(_)) => config_error(&e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run {
            target,
            out,
            dt,
            mesh,
        } => run(&target, out, dt, mesh),
        Command::Validate { group } => validate(&group),
        Command::List => {
            for name in BUILTIN_NAMES {
                println!("{name:<16} {}", description(name).unwrap_or(""));
            }
            ExitCode::SUCCESS
        }
        Command::ExportConfig { scenario } => match builtin(&scenario) {
            Some(c) => {
                print!("{}", export_config(&c));
                ExitCode::SUCCESS
            }
            None => unknown_scenario(&scenario),
        },
    }
}
