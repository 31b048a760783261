use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use pstrack::harness::{self, summary_text, write_qprofiles, write_run, ExperimentPlan, RunReport};
use pstrack::Error;

#[derive(Parser)]
#[command(name = "pstrack", version, about = "Multipath tracking and passive time-reversal experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment described by a plan file.
    Run {
        plan: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run the plan and rank its equalization methods by BER.
    Compare {
        plan: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Track an external measurement file with the plan's tracker settings.
    Track {
        measurements: PathBuf,
        plan: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Write Q-function profiles of the first epoch's channel per mirror.
    Qprofile {
        plan: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Base seed of the per-trial random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn load(&self, path: &Path) -> pstrack::Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::load(path)?;
        if let Some(seed) = self.seed {
            plan.seed = seed;
        }
        if let Some(trials) = self.trials {
            plan.trials = trials;
        }
        if let Some(threads) = self.threads {
            plan.threads = threads;
        }
        Ok(plan)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. }
        | Error::NonPositive { .. }
        | Error::BandViolation { .. }
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::Toml(_)
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

fn finish(report: &RunReport, out: &Path) -> pstrack::Result<u8> {
    write_run(report, out)?;
    print!("{}", summary_text(report));
    info!("wrote {} in {:.1} s", out.display(), report.elapsed.as_secs_f64());
    if report.succeeded() {
        Ok(0)
    } else {
        warn!("{} of {} trials failed", report.failures.len(), report.plan.trials);
        Ok(3)
    }
}

fn dispatch(command: Command) -> pstrack::Result<u8> {
    match command {
        Command::Run { plan, opts } => finish(&harness::run(&opts.load(&plan)?)?, &opts.out),
        Command::Compare { plan, opts } => finish(&harness::compare_baselines(&opts.load(&plan)?)?, &opts.out),
        Command::Track {
            measurements,
            plan,
            opts,
        } => finish(&harness::track_file(&opts.load(&plan)?, &measurements)?, &opts.out),
        Command::Qprofile { plan, opts } => {
            let profiles = harness::qprofile(&opts.load(&plan)?)?;
            write_qprofiles(&profiles, &opts.out)?;
            for (mode, p) in &profiles {
                println!(
                    "{mode:<13} peak lag {:+.3e} s  mainlobe {:.4}  focusing ratio {:.3}",
                    p.peak_lag(),
                    p.mainlobe_peak,
                    p.focusing_ratio()
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
