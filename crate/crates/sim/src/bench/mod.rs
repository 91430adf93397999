//! Scenario runner and report emitter.

pub mod config;
pub mod data;
pub mod report;
pub mod run;

use thiserror::Error;

use crate::fabric::FabricError;
use crate::pipeline::PipelineError;

pub use config::{DataSource, DriftKind, ScenarioConfig};
pub use data::scenario_series;
pub use report::{
    best_approach, best_table, boxplot_stats, percentage_best, Approach, BestColumn, BestFractions,
    BoxStats, ScenarioSummary, WindowReport, SCHEMA_VERSION,
};
pub use run::{run_scenario, ScenarioReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("placement failed: {0}")]
    Placement(FabricError),
    #[error("{0}")]
    Runtime(String),
}

impl BenchError {
    /// Process exit code: 2 config, 3 placement, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. } => 2,
            BenchError::Placement(_) => 3,
            BenchError::Runtime(_) => 4,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        BenchError::Runtime(e.to_string())
    }
}

impl From<PipelineError> for BenchError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Fabric(f @ FabricError::OutOfMemory { .. }) => BenchError::Placement(f),
            PipelineError::InvalidConfig(m) => BenchError::Config {
                path: "<session>".into(),
                message: m,
            },
            other => BenchError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Runtime(e.to_string())
    }
}
