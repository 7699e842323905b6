use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use sleeping_exp3::runner::{compare_estimators, oracle_check, run_experiment, sublinearity_check};
use sleeping_exp3::{Error, ExperimentSpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "sleeping-exp3", version, about = "Sleeping EXP3 with multiple plays: simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seed-replicated experiment and write traces and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Exit with status 2 unless regret is positive, sublinear and under
        /// the k N^2 sqrt(T log T) ceiling.
        #[arg(long)]
        check_sublinear: bool,
    },
    /// Per-round gap and timing of the exact and Monte Carlo estimators.
    CompareEstimators {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cross-check the hindsight comparator against exhaustive search.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run {
            config,
            workers,
            output,
            check_sublinear,
        } => {
            let spec = ExperimentSpec::load(&config)?;
            let report = run_experiment(&spec, workers, output.as_deref())?;
            for row in &report.rows {
                println!(
                    "t={:<8} regret={:>12.4} se={:>10.4} lambda={:.6}",
                    row.t, row.mean_regret, row.std_err, row.mean_lambda
                );
            }
            if !check_sublinear {
                return Ok(true);
            }
            let verdict = sublinearity_check(&report)?;
            println!(
                "sublinearity: mean R_T = {:.4}, ratios = {:?}, ceiling = {:.1} -> {}",
                verdict.mean_regret,
                verdict.ratios,
                verdict.ceiling,
                if verdict.passed() { "PASS" } else { "FAIL" }
            );
            Ok(verdict.passed())
        }
        Command::CompareEstimators { config, output } => {
            let spec = ExperimentSpec::load(&config)?;
            for seed in compare_estimators(&spec, output.as_deref())? {
                let last = seed.rows.last().expect("horizon is at least 1");
                let total_exact: f64 = seed.rows.iter().map(|r| r.exact_secs).sum();
                let total_mc: f64 = seed.rows.iter().map(|r| r.mc_secs).sum();
                println!(
                    "seed {}: final gap {:.6}, exact {:.3}s, monte carlo {:.3}s",
                    seed.seed, last.max_gap, total_exact, total_mc
                );
            }
            Ok(true)
        }
        Command::OracleCheck { config } => {
            let spec = ExperimentSpec::load(&config)?;
            let mut ok = true;
            for check in oracle_check(&spec)? {
                let joint = check
                    .joint_exhaustive_loss
                    .map_or_else(|| "skipped".to_string(), |j| format!("{j:.9}"));
                println!(
                    "seed {}: separable {:.9}, per-set {:.9}, joint {joint} -> {}",
                    check.seed,
                    check.separable_loss,
                    check.per_set_exhaustive_loss,
                    if check.passed() { "PASS" } else { "FAIL" }
                );
                ok &= check.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
