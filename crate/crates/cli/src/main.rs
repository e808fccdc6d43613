use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obstacle_core::experiments::{self, read_csv, RunConfig, DEFAULT_REF_FLOOR};
use obstacle_core::model::build_problem;
use obstacle_core::{check_assumptions, Error};

/// Stochastic schemes for fully nonlinear obstacle problems.
#[derive(Debug, Parser)]
#[command(name = "obstacle", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (steps, paths, seed) combination of a config file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// `dotted.key=value` override, repeatable; values parse as JSON.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Convergence-ratio table from a results CSV.
    Rate {
        #[arg(long = "in")]
        input: PathBuf,
        /// `auto` or a number.
        #[arg(long, default_value = "auto")]
        reference: String,
        /// Problem id to analyse; defaults to the first one in the file.
        #[arg(long)]
        problem: Option<String>,
        #[arg(long, default_value_t = DEFAULT_REF_FLOOR)]
        floor: f64,
    },
    /// Print the structural assumption report of a built-in problem.
    Check {
        #[arg(long)]
        problem: String,
        /// Builder parameters as a JSON object.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn solve(config: PathBuf, out: Option<PathBuf>, overrides: Vec<String>) -> Result<bool, Error> {
    let mut config = RunConfig::from_path(&config, &overrides)?;
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    let output = experiments::run(&config)?;
    for row in &output.rows {
        println!(
            "{:<20} n={:<4} paths={:<9} seed={:<4} value={:<14} {}",
            row.problem,
            row.n,
            row.paths,
            row.seed,
            experiments::format_float(row.value),
            row.status
        );
    }
    if let Some(r) = output.reference {
        println!("reference {}", experiments::format_float(r));
    }
    for f in &output.files {
        println!("wrote {}", f.display());
    }
    let aborted = output.aborted();
    if aborted > 0 {
        eprintln!("{aborted} solve(s) aborted; see the status column");
    }
    Ok(aborted == 0)
}

fn rate(input: PathBuf, reference: String, problem: Option<String>, floor: f64) -> Result<(), Error> {
    let rows = read_csv(&input)?;
    let problem = match problem {
        Some(p) => p,
        None => rows
            .first()
            .map(|r| r.problem.clone())
            .ok_or_else(|| Error::InsufficientData("results file has no rows".into()))?,
    };
    let reference = if reference == "auto" {
        experiments::auto_reference(&rows, &problem)?
    } else {
        reference
            .parse()
            .map_err(|_| Error::Config(format!("--reference must be `auto` or a number, got `{reference}`")))?
    };
    let table = experiments::rates_for(&rows, &problem, reference, floor)?;
    table.write_csv(std::io::stdout().lock())
}

fn check(problem: String, params: Option<String>, probes: usize, fd_step: f64, seed: u64) -> Result<bool, Error> {
    let params = match params {
        Some(text) => serde_json::from_str(&text)?,
        None => serde_json::Value::Null,
    };
    let spec = build_problem(&problem, &params)?;
    let report = check_assumptions(&spec, probes, fd_step, seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.all_passed())
}

fn exit_code(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, out, overrides } => solve(config, out, overrides),
        Command::Rate {
            input,
            reference,
            problem,
            floor,
        } => rate(input, reference, problem, floor).map(|_| true),
        // A failing report is still a successful check.
        Command::Check {
            problem,
            params,
            probes,
            fd_step,
            seed,
        } => check(problem, params, probes, fd_step, seed).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => exit_code(&e),
    }
}
