//! Command-line pipeline: segmentation, meshing, simulation, stress analysis,
//! restenosis correlation and the synthetic morphology study.

pub mod output;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use vascmech::case_io::CaseError;
use vascmech::config::ConfigError;
use vascmech::isr::IsrError;
use vascmech::report::ReportError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const PARTIAL: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const INTERNAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<IsrError> for CliError {
    fn from(e: IsrError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Completion status of a command that did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some slices failed; the rest completed.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => exit::SUCCESS,
            Outcome::Partial => exit::PARTIAL,
        }
    }

    pub fn and(self, other: Outcome) -> Outcome {
        if self == Outcome::Partial || other == Outcome::Partial {
            Outcome::Partial
        } else {
            Outcome::Success
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vascmech", version, about = "Plaque segmentation, cross-section stenting simulation and stress/restenosis correlation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Configuration file (`key = value` lines) applied over the defaults and
    /// the case config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single configuration override, `key=value`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for per-slice stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for synthetic data generation.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic case bundle to the output directory.
    Synth {
        #[arg(long, default_value_t = 20)]
        slices: usize,
    },
    /// Fit the plaque mixture model and label the intima voxels.
    Segment { case: PathBuf },
    /// Build and label the slice meshes.
    Mesh { case: PathBuf },
    /// Simulate inflation and stenting on every slice.
    Simulate {
        case: Option<PathBuf>,
        /// Run the Lamé benchmark and report it.
        #[arg(long)]
        self_test: bool,
    },
    /// Recompute stress statistics and map thresholds from a simulate output.
    Analyze { sim_dir: PathBuf },
    /// Correlate stress statistics with restenosis.
    Correlate {
        /// Stress summary CSV; pair each with a `--profiles` file.
        #[arg(long = "summary", required = true)]
        summaries: Vec<PathBuf>,
        /// Diameter profile CSV, in the same order as `--summary`.
        #[arg(long = "profiles", required = true)]
        profiles: Vec<PathBuf>,
    },
    /// Synthetic calcification pattern study under one load program.
    MorphologyStudy,
    /// Segment, simulate, analyze and correlate one case.
    Pipeline { case: PathBuf },
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    stages::dispatch(cli)
}
