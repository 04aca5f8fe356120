use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hbnn_cli::experiments::{self, inspect_weights};
use hbnn_cli::persist::load_channel;
use hbnn_cli::{ExperimentConfig, Profile, WeightFile};

#[derive(Parser)]
#[command(
    name = "hbnn",
    version,
    about = "Complex BP network hybrid precoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Without it the profile defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, default_value = "paper")]
    profile: Profile,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::profile(self.profile),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate().context("invalid config")?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one network on one sampled channel and save it.
    Train(Common),
    /// SE and BER versus the number of users.
    SweepUsers(Common),
    /// BER versus SNR at a fixed number of users.
    SweepSnr(Common),
    /// Evaluate a saved weight file against the baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Channel snapshot; defaults to channel.json next to the weights.
        #[arg(long)]
        channel: Option<PathBuf>,
    },
    /// Print a summary of a weight file as JSON.
    InspectWeights {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            let report = experiments::run_train(&cfg, &c.out)?;
            let h = &report.outcome.history;
            eprintln!(
                "trained K={} for {} epochs ({:?}): test cost {:.3e} -> {:.3e}",
                cfg.channel.n_users,
                h.epochs.len(),
                h.stop_reason,
                h.initial_test_cost,
                h.final_test_cost()
            );
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::SweepUsers(c) => {
            let cfg = c.load()?;
            let report = experiments::run_sweep_users(&cfg, &c.out, c.threads)?;
            report_failures(&report);
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::SweepSnr(c) => {
            let cfg = c.load()?;
            let report = experiments::run_sweep_snr(&cfg, &c.out, c.threads)?;
            report_failures(&report);
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Eval {
            common,
            weights,
            channel,
        } => {
            let wf = WeightFile::load(&weights)?;
            let mut common = common;
            if common.config.is_none() {
                let candidate = sibling(&weights, "config.json");
                if candidate.exists() {
                    common.config = Some(candidate);
                }
            }
            let cfg = common.load()?;
            if cfg.hash() != wf.config_hash {
                eprintln!("warning: config differs from the one that produced the weights");
            }
            let channel_path = channel.unwrap_or_else(|| sibling(&weights, "channel.json"));
            let ch = load_channel(&channel_path)?;
            experiments::run_eval(&cfg, &wf, &ch, &common.out)?;
            println!("{}", common.out.join("eval.csv").display());
        }
        Command::InspectWeights { weights } => {
            let wf = WeightFile::load(&weights)?;
            println!("{}", serde_json::to_string_pretty(&inspect_weights(&wf))?);
        }
    }
    Ok(())
}

fn report_failures(report: &experiments::SweepReport) {
    let failed: usize = report.summary.iter().map(|r| r.failed).sum();
    if failed > 0 {
        eprintln!("warning: {failed} method evaluations failed, see the trials CSV");
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
