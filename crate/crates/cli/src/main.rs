use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "coupled-fuse", version, about = "Coupled CP decomposition experiments")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the data and initialization seeds.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for seed sweeps.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic coupled instance and its ground truth.
    Synth,
    /// Run the configured solver and write trace.csv and summary.json.
    Run {
        /// Seed sweep, e.g. `0,1,2` or `0..5`; each seed writes to `seed-<s>/`.
        #[arg(long, value_name = "LIST")]
        seeds: Option<String>,
    },
    /// Score estimated factors or images against the truth.
    Metrics {
        /// Directory with estimated `A<n>.tnsr` and `B<n>.tnsr`.
        #[arg(long, value_name = "DIR", requires = "truth")]
        est: Option<PathBuf>,
        /// Directory with true `A<n>.tnsr` and `B<n>.tnsr`.
        #[arg(long, value_name = "DIR", requires = "est")]
        truth: Option<PathBuf>,
        /// Directory with `Y.tnsr` and `Yprime.tnsr` for the relative error;
        /// the truth reconstructions are used when omitted.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Estimated super-resolution image.
        #[arg(long, value_name = "FILE", requires = "truth_sri")]
        est_sri: Option<PathBuf>,
        /// True super-resolution image.
        #[arg(long, value_name = "FILE", requires = "est_sri")]
        truth_sri: Option<PathBuf>,
    },
    /// Degrade a super-resolution image into hyperspectral and multispectral observations.
    HsrDegrade {
        /// Image to degrade; defaults to `problem.hsr.sri_file` from the config.
        #[arg(long, value_name = "FILE")]
        sri: Option<PathBuf>,
    },
}

fn init_logging() {
    let filter = match std::env::var("COUPLED_FUSE_LOG") {
        Ok(v) if matches!(v.as_str(), "error" | "warn" | "info" | "debug") => v,
        Ok(v) => {
            eprintln!("ignoring COUPLED_FUSE_LOG={v:?}: expected error, warn, info or debug");
            "warn".into()
        }
        Err(_) => "warn".into(),
    };
    env_logger::Builder::new().parse_filters(&filter).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let opts = commands::GlobalOpts {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        jobs: cli.jobs,
    };
    let result = match cli.command {
        Command::Synth => commands::synth(&opts),
        Command::Run { seeds } => commands::run(&opts, seeds.as_deref()),
        Command::Metrics {
            est,
            truth,
            data,
            est_sri,
            truth_sri,
        } => commands::metrics(
            &opts,
            commands::MetricsArgs {
                est,
                truth,
                data,
                est_sri,
                truth_sri,
            },
        ),
        Command::HsrDegrade { sri } => commands::hsr_degrade(&opts, sri),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
