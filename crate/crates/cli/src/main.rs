use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use truncmult::harness::{
    cmd_diagnose, cmd_experiment, cmd_oracle, cmd_sample, DiagnosticKind, ExperimentConfig,
    Overrides, ORACLE_DIR,
};

#[derive(Parser)]
#[command(name = "truncmult", version, about = "Dirichlet posteriors under truncated multinomial likelihoods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every chain and write trace CSVs plus a manifest.
    Sample(RunArgs),
    /// Compute diagnostics for a directory written by `sample`.
    Diagnose {
        /// Run directory (the `--out` of a previous `sample`).
        #[arg(long = "out", value_name = "DIR")]
        dir: PathBuf,
        /// Metrics to compute; all by default.
        #[arg(long = "which", value_enum, value_delimiter = ',')]
        which: Vec<Metric>,
    },
    /// Integrate the posterior on a grid (n <= 4).
    Oracle(RunArgs),
    /// sample, diagnose and (when enabled) oracle in one go.
    Experiment(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Autocorr,
    Mpsrf,
    Convergence,
}

impl From<Metric> for DiagnosticKind {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Autocorr => DiagnosticKind::Autocorr,
            Metric::Mpsrf => DiagnosticKind::Mpsrf,
            Metric::Convergence => DiagnosticKind::Convergence,
        }
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        Overrides {
            seed: self.seed,
            chains: self.chains,
            steps: self.steps,
        }
        .apply(&mut cfg)
        .context("invalid command-line override")?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sample(args) => {
            let cfg = args.config()?;
            let manifest = cmd_sample(&cfg, &args.out)?;
            for c in &manifest.chains {
                match &c.mh {
                    Some(mh) => println!(
                        "{} chain {:>3}: {} (acceptance {:.3}, beta {:.2})",
                        c.sampler,
                        c.chain,
                        c.trace,
                        mh.acceptance_rate(),
                        mh.current_beta
                    ),
                    None => println!("{} chain {:>3}: {}", c.sampler, c.chain, c.trace),
                }
            }
        }
        Command::Diagnose { dir, which } => {
            let which: Vec<DiagnosticKind> = if which.is_empty() {
                DiagnosticKind::ALL.to_vec()
            } else {
                which.into_iter().map(Into::into).collect()
            };
            for path in cmd_diagnose(&dir, &which)? {
                println!("{}", path.display());
            }
        }
        Command::Oracle(args) => {
            let cfg = args.config()?;
            if args.chains.is_some() || args.steps.is_some() {
                bail!("--chains and --steps do not apply to the oracle");
            }
            let moments = cmd_oracle(&cfg, &args.out.join(ORACLE_DIR))?;
            println!("resolution {} ({} cells)", moments.resolution, moments.cells);
            println!("mean     {:?}", moments.mean);
            println!("variance {:?}", moments.variance);
            println!("log Z    {}", moments.log_normalizer);
        }
        Command::Experiment(args) => {
            let cfg = args.config()?;
            let out = cmd_experiment(&cfg, &args.out)?;
            println!("{} chains written to {}", out.manifest.chains.len(), args.out.display());
            for path in &out.diagnostics {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
