//! Lambda-architecture orchestration: window injection, batch/speed/hybrid
//! inference, speed training and per-window weight refresh, run as
//! message-driven actors over the fabric.

pub mod inference;
pub mod injector;
pub mod result;
pub mod session;
pub mod slot;

use hybrid_core::forecaster::{ArtifactError, ForecastError};
use hybrid_core::timeseries::SeriesError;
use hybrid_core::weighting::WeightError;
use thiserror::Error;

use crate::fabric::FabricError;

pub use inference::{
    batch_infer, hybrid_infer, refresh_weights, speed_infer, speed_train, HybridOutput,
    SpeedOutput, WeightRefresh, WeightingMode,
};
pub use injector::{inject, replay_ticks, CloseRule, InjectionConfig, Injector};
pub use result::{FitDiagnostics, ResultFlags, WindowResult};
pub use session::{
    run_session, run_session_with, ClockMode, FaultSchedule, Outage, Partition, SessionConfig,
    SessionIssue, SessionOutcome, SessionResources, SpeedInit,
};
pub use slot::SpeedModelSlot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("record timestamp {found} is not after {previous}")]
    OutOfOrder { previous: i64, found: i64 },
    #[error("injection buffer full ({capacity} records)")]
    Backpressure { capacity: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("window {window} has {records} records, needs more than {lag}")]
    InsufficientRecords {
        window: u64,
        records: usize,
        lag: usize,
    },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}
