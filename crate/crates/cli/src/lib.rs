//! Command-line pipeline: synthetic data, features, speaker pretraining,
//! per-fold speech and text training, scoring, late fusion and evaluation.

pub mod config;
pub mod gradcheck;
pub mod inputs;
pub mod pipeline;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

pub use config::{resolve, Overrides, PresetName, RunConfig};
pub use pipeline::{EvalReport, Pipeline};

#[derive(Debug, Parser)]
#[command(name = "emofuse", version, about = "Speech and text emotion recognition with late score fusion")]
pub struct Cli {
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetName>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic emotion and speaker corpora.
    Synth,
    /// Extract normalized log-mel features.
    Features,
    /// Pretrain the speech backbone on speaker identification.
    Pretrain,
    /// Train the speech emotion model for every fold.
    TrainSpeech,
    /// Train the text emotion model for every fold.
    TrainText,
    /// Score validation and test segments with both models.
    Score,
    /// Fuse speech and text scores.
    Fuse,
    /// Compute WA/UA and confusion matrices.
    Eval,
    /// Run every stage in order.
    Run,
    /// Print the resolved configuration.
    Config,
    /// Finite-difference check of every differentiable layer.
    Gradcheck,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve(cli.config.as_deref(), &cli.overrides())?;
    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            return Ok(());
        }
        Command::Gradcheck => {
            let suite = gradcheck::run_suite()?;
            print!("{}", suite.table());
            println!("elapsed {:.1}s", suite.elapsed.as_secs_f64());
            if !suite.passed() {
                bail!("gradient check failed");
            }
            return Ok(());
        }
        _ => {}
    }
    let p = Pipeline::new(config)?;
    match cli.command {
        Command::Synth => p.synth(),
        Command::Features => p.features(),
        Command::Pretrain => p.pretrain(),
        Command::TrainSpeech => p.train_speech(),
        Command::TrainText => p.train_text(),
        Command::Score => {
            let counts = p.score()?;
            if counts != emofuse_core::probe::Counts::default() {
                bail!("scoring triggered training-only operations: {counts:?}");
            }
            Ok(())
        }
        Command::Fuse => p.fuse(),
        Command::Eval | Command::Run => {
            let report = if matches!(cli.command, Command::Run) { p.run_all()? } else { p.eval()? };
            for name in pipeline::SYSTEMS {
                let r = report.system(name);
                println!("{name:<20} WA {:.4}  UA {:.4}", r.mean_wa, r.mean_ua);
            }
            println!("report: {}", p.root().join("reports/report.json").display());
            Ok(())
        }
        Command::Config | Command::Gradcheck => unreachable!(),
    }
}
