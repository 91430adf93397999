//! A small LSTM regression network: one LSTM layer, one ReLU dense layer and
//! a linear output layer, trained with backpropagation through time.
//!
//! Parameters live in one flat `Vec<f64>` with a fixed tensor order (see
//! [`Layout`]); gradients, optimizer state and the artifact container all
//! share that order.

mod artifact;
mod network;
mod train;

pub use artifact::{ArtifactError, ArtifactProducer, ModelArtifact, ARTIFACT_FORMAT_VERSION};
pub use network::{Layout, ModelParams};
pub use train::{Fidelity, Optimizer, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("input has {found} values, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("network produced a non-finite output")]
    NonFiniteOutput,
    #[error("training data is empty")]
    EmptyData,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
}

/// Shape of the network.
///
/// `input_dim` is the width of one LSTM step and `seq_len` the number of
/// steps; an input row holds `seq_len * input_dim` values, step-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub lstm_units: usize,
    pub dense_units: usize,
    pub output_units: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// 25 inputs (5 lags x 5 variables) presented as a single LSTM step,
    /// 40 LSTM units, 10 ReLU units, one output: 10,981 parameters.
    fn default() -> Self {
        Self {
            input_dim: 25,
            seq_len: 1,
            lstm_units: 40,
            dense_units: 10,
            output_units: 1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Lags presented as `lag` LSTM steps of `variables` values each.
    pub fn stepwise(variables: usize, lag: usize) -> Self {
        Self {
            input_dim: variables,
            seq_len: lag,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
            ("lstm_units", self.lstm_units),
            ("dense_units", self.dense_units),
            ("output_units", self.output_units),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(ForecastError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Values in one input row.
    pub fn row_width(&self) -> usize {
        self.input_dim * self.seq_len
    }

    pub fn param_count(&self) -> usize {
        let (d, h, n, o) = (
            self.input_dim,
            self.lstm_units,
            self.dense_units,
            self.output_units,
        );
        4 * ((d + h) * h + h) + h * n + n + n * o + o
    }
}
