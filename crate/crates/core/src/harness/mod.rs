//! Experiment runner: configs in, CSV tables and long-format plot data out.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ExperimentConfig, PolicySpec, Scenario, TOPOLOGY_DIR_ENV};
pub use experiments::{
    bounds_rows, run_bounds_table, run_experiment, run_geo_bias, run_liquidation, run_sandwich,
    run_tradeoff_curve, BoundsRow, ExperimentResult, GeoBiasRow, LiquidationRow, SandwichOutcome,
    TradeoffRow,
};
pub use output::{emit_csv, emit_plot_data, write_csv, PlotPoint, Table};

use crate::adversary::AdversaryError;
use crate::analysis::AnalysisError;
use crate::attacks::AttackError;
use crate::consensus::SimError;
use crate::netmodel::TopologyError;
use crate::sro::SroError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("experiment: {0}")]
    Experiment(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sro(#[from] SroError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

impl HarnessError {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config { .. }
            | HarnessError::UnknownPolicy(_)
            | HarnessError::Experiment(_) => "config",
            HarnessError::Io { .. } | HarnessError::Csv { .. } => "io",
            HarnessError::Topology(TopologyError::UnknownCity(_)) => "config",
            HarnessError::Topology(_) => "topology",
            HarnessError::Sim(SimError::Sro { .. }) | HarnessError::Sro(_) => "sro",
            HarnessError::Sim(_) | HarnessError::Adversary(_) => "sim",
            HarnessError::Analysis(_) | HarnessError::Attack(_) => "analysis",
        }
    }
}
