//! `multistep`: dataset generation, training, evaluation and planning runs.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use multistep::data::SplitName;

#[derive(Parser, Debug)]
#[command(name = "multistep", version, about = "Multi-timestep dynamics models: data, training, evaluation, planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment JSON, or a manifest.json written by an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-seed the dataset, training and every seed list from this value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for outputs and the run manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Valid => SplitName::Valid,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Roll out the behaviour policy and write dataset.json and episodes.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on a dataset; writes model.json and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// R2 per horizon of a trained model; writes r2.csv.
    EvalR2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train every configured profile over every seed; writes compare.csv.
    CompareProfiles {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Closed-form, tape and finite-difference gradients; writes gradcheck.csv.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Also check the 5-dimensional loss on windows of this dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// MPC with a trained model (or the simulator) on the true environment; writes plan_returns.csv.
    PlanEval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
        model: Option<PathBuf>,
        /// Plan on the exact simulator instead of a learned model.
        #[arg(long)]
        ground_truth: bool,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Train the configured variants and evaluate MPC returns; writes returns.csv and table.csv.
    PureBatch {
        #[command(flatten)]
        common: Common,
        /// Datasets to use (repeatable); generated from the config when absent.
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Add an MPC row planning on the exact simulator.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Alternate data collection and retraining; writes curve.csv.
    IteratedBatch {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
