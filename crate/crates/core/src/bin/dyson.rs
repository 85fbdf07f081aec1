use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use inexact_dyson::groundstate::GroundState;
use inexact_dyson::harness::archive::{read_archive, write_archive, write_atomic};
use inexact_dyson::harness::config::ExperimentConfig;
use inexact_dyson::harness::report::{format_comparison, write_comparison, write_run};
use inexact_dyson::harness::run::{compare_strategies, prepare, run_response_partial, ResponseContext};
use inexact_dyson::harness::verify::verify_suite;
use inexact_dyson::{DysonError, Result};

/// Thread count for the band loop; unset uses all cores.
const THREADS_ENV: &str = "DYSON_THREADS";

#[derive(Parser)]
#[command(name = "dyson", version, about = "Inexact GMRES for the Dyson equation on a plane-wave toy solid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Converge the ground state and write an archive.
    Scf {
        /// Config file or preset name (toy_metal, toy_insulator, tiny_metal, tiny_insulator).
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve the Dyson equation with one strategy.
    Respond {
        config: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        /// Reuse a ground-state archive instead of running the SCF.
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run several strategies on the same ground state.
    Compare {
        config: PathBuf,
        /// Comma-separated strategy names, e.g. pbal,pgrt,pd10.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the property checks and print a JSON report.
    Verify {
        config: PathBuf,
        #[arg(long)]
        archive: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .parse()
            .map_err(|_| DysonError::Config(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| DysonError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn ground_state(config: &ExperimentConfig, archive: Option<&Path>) -> Result<GroundState> {
    match archive {
        Some(dir) => {
            let gs = read_archive(dir)?;
            if gs.model() != &config.model {
                return Err(DysonError::Config(format!("archive {} was built for a different model", dir.display())));
            }
            Ok(gs)
        }
        None => {
            let gs = prepare(config)?;
            eprintln!(
                "scf: {} iterations, residual {:.2e}, N_occ = {}, N_b = {}, N_g = {}",
                gs.scf_iterations(),
                gs.scf_residual(),
                gs.n_occ(),
                gs.grids().n_b(),
                gs.grids().n_g()
            );
            Ok(gs)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Scf { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let gs = ground_state(&cfg, None)?;
            write_archive(&output, &gs)?;
            println!("archive written to {}", output.display());
        }
        Command::Respond {
            config,
            strategy,
            tau,
            m,
            archive,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            if let Some(t) = tau {
                cfg.tau = t;
            }
            if let Some(m) = m {
                cfg.m = m;
            }
            cfg.validate()?;
            let gs = ground_state(&cfg, archive.as_deref())?;
            let ctx = ResponseContext::new(&gs, &cfg)?;
            let spec = cfg.strategy_spec()?;
            let (outcome, failure) = match run_response_partial(&ctx, &cfg, &spec) {
                Ok(o) => (Some(o), None),
                Err((e, partial)) => (partial, Some(e)),
            };
            if let Some(o) = &outcome {
                write_run(&output, &cfg, o)?;
                let mt = &o.metrics;
                println!(
                    "{}: converged = {}, iterations = {}, n_ham = {} (rhs {}), est_res = {:.2e}, true_res = {:.2e}, eta = {:.3e}",
                    mt.strategy, mt.converged, mt.iterations, mt.n_ham, mt.rhs_ham, mt.final_est_res, mt.final_true_res, mt.eta
                );
            }
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Command::Compare {
            config,
            strategies,
            tau,
            archive,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(t) = tau {
                cfg.tau = t;
            }
            cfg.validate()?;
            if strategies.is_empty() {
                return Err(DysonError::Config("--strategies needs at least one name".into()));
            }
            let gs = ground_state(&cfg, archive.as_deref())?;
            let ctx = ResponseContext::new(&gs, &cfg)?;
            let cmp = compare_strategies(&ctx, &cfg, &strategies)?;
            write_comparison(&output, &cfg, &cmp)?;
            print!("{}", format_comparison(&cmp));
        }
        Command::Verify { config, archive, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let gs = ground_state(&cfg, archive.as_deref())?;
            let report = verify_suite(&gs, &cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(path) = output {
                write_atomic(&path, json.as_bytes())?;
            }
            let failure = report
                .failures()
                .next()
                .map(|c| DysonError::Invariant(format!("check '{}' failed: {}", c.name, c.detail)));
            if let Some(e) = failure {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
