//! `mtdc-opf`: run the droop strategies over outage scenarios and check the
//! stored results.

mod record;
mod solve;
mod tables;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use mtdc_opf::case::parse_case;
use mtdc_opf::strategy::{StrategyMode, StrategyOptions};

use solve::{Format, RunConfig};

const DEFAULT_OUT: &str = "mtdc-opf-out";

#[derive(Parser)]
#[command(
    name = "mtdc-opf",
    version,
    about = "Hybrid AC/DC OPF with MTDC droop strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scenario, mode) pair and write reports and aggregate tables.
    Solve {
        #[arg(long)]
        case: PathBuf,
        /// Outage scenario files; none runs the intact network only.
        #[arg(long, num_args = 1..)]
        scenario: Vec<PathBuf>,
        /// active-power, adaptive-droop, proposed-droop (default: all three).
        #[arg(long, num_args = 1.., value_parser = parse_mode)]
        mode: Vec<StrategyMode>,
        #[arg(long, env = "MTDC_OPF_OUT", default_value = DEFAULT_OUT)]
        out: PathBuf,
        /// Comma-separated subset of table, csv, json.
        #[arg(long, default_value = "table,csv,json", value_delimiter = ',', value_parser = parse_format)]
        format: Vec<Format>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Concurrent runs (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Optimality and feasibility tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Re-check every stored solution with the independent power flow.
    Validate {
        #[arg(long, env = "MTDC_OPF_OUT", default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Parse and validate a case file and print a summary.
    CheckCase { path: PathBuf },
}

fn parse_mode(s: &str) -> Result<StrategyMode, String> {
    StrategyMode::from_label(s).ok_or_else(|| {
        let known: Vec<_> = StrategyMode::ALL.iter().map(|m| m.label()).collect();
        format!("unknown mode {s:?} (expected one of {})", known.join(", "))
    })
}

fn parse_format(s: &str) -> Result<Format, String> {
    Format::parse(s).map_err(|e| e.to_string())
}

fn cmd_check_case(path: &Path) -> Result<i32> {
    let case = parse_case(path).with_context(|| format!("{}", path.display()))?;
    let warnings = case
        .validate()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let (p, q) = case.total_load();
    println!("case: {}", case.name);
    println!(
        "bases: S_nom = {} MVA, V_dc = {} kV",
        case.s_nominal, case.v_dc_nominal
    );
    println!("AC buses: {}", case.ac_buses.len());
    println!("generators: {}", case.generators.len());
    println!("AC branches: {}", case.ac_branches.len());
    println!("DC buses: {}", case.dc_buses.len());
    println!("DC branches: {}", case.dc_branches.len());
    println!("converters: {}", case.converters.len());
    println!(
        "total load: {:.2} MW, {:.2} Mvar",
        p * case.s_nominal,
        q * case.s_nominal
    );
    for w in warnings {
        println!("warning: {w}");
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve {
            case,
            scenario,
            mode,
            out,
            format,
            seed,
            workers,
            max_iter,
            tol,
        } => {
            let mut options = StrategyOptions::default();
            if let Some(n) = max_iter {
                options.solver.max_iter = n;
            }
            if let Some(t) = tol {
                options.solver.tol = t;
                options.solver.feas_tol = t;
            }
            let config = RunConfig {
                case,
                scenarios: scenario,
                modes: if mode.is_empty() {
                    StrategyMode::ALL.to_vec()
                } else {
                    mode
                },
                options,
                out,
                formats: format,
                seed,
                workers: workers
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            };
            solve::cmd_solve(&config)
        }
        Command::Validate { out } => validate::cmd_validate(&out),
        Command::CheckCase { path } => cmd_check_case(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
