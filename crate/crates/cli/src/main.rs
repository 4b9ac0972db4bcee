use std::path::PathBuf;
use std::process::ExitCode;

use bregman_accel::harness::{self, ExitStatus, RunOverrides};
use clap::{Parser, Subcommand};

/// Averaged fixed-point experiments over Bregman geometries.
///
/// Exit status: 0 success, 1 runtime failure, 2 invalid config or input,
/// 3 unmet precondition (for example, auditing a run without states).
#[derive(Parser, Debug)]
#[command(name = "bregman-accel", version, about)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute one config and write its trace, summary and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config field, e.g. `--set operator.params.gamma=0.8`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Execute every point of the config's sweep block.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of points run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Audit a run directory and write audit.json.
    Audit {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Fit the log-log rate of a saved trace.
    Rate {
        #[arg(long)]
        trace: PathBuf,
        /// Window `lo:hi`.
        #[arg(long)]
        window: String,
    },
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), harness::Failure> {
    match serde_json::to_string(value) {
        Ok(text) => {
            println!("{text}");
            Ok(())
        }
        Err(e) => Err(harness::Failure {
            status: ExitStatus::Runtime,
            message: e.to_string(),
        }),
    }
}

fn dispatch(command: Command) -> Result<ExitStatus, harness::Failure> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            set,
        } => {
            let summary = harness::cmd_run(&config, &out, &RunOverrides { seed, set })?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} {}", summary.config_digest, out.display());
            Ok(ExitStatus::Ok)
        }
        Command::Sweep {
            config,
            out,
            parallel,
        } => {
            let outcome = harness::cmd_sweep(&config, &out, parallel)?;
            let failed = outcome.failures();
            println!(
                "{} points, {failed} failed, index {}",
                outcome.rows.len(),
                outcome.index.display()
            );
            Ok(if failed == 0 {
                ExitStatus::Ok
            } else {
                ExitStatus::Runtime
            })
        }
        Command::Audit { dir } => {
            let report = harness::cmd_audit(&dir)?;
            for c in &report.checks {
                println!("{:<32} {:?}", c.name, c.status);
            }
            println!("beta_max {}", report.beta_max);
            Ok(ExitStatus::Ok)
        }
        Command::Rate { trace, window } => {
            print_json(&harness::cmd_rate(&trace, &window)?)?;
            Ok(ExitStatus::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    match dispatch(cli.command) {
        Ok(status) => exit(status),
        Err(failure) => {
            eprintln!("error: {failure}");
            exit(failure.status)
        }
    }
}
