//! Numerical core of the hybrid stream-analytics engine: series
//! preprocessing, the LSTM forecaster, batch/speed combination weighting,
//! and drift generators.

pub mod drift;
pub mod forecaster;
pub mod series_csv;
pub mod timeseries;
pub mod weighting;

pub use drift::{
    abrupt_drift, gradual_drift, synth_base, BaseSignalConfig, DriftConfig, LambdaProcess,
};
pub use forecaster::{
    Fidelity, ForecastError, ModelArtifact, ModelParams, NetworkConfig, TrainConfig,
};
pub use series_csv::{load_csv, CsvSchema, TimestampFormat};
pub use timeseries::{
    make_supervised, split, MinMaxScaler, Record, Series, SeriesMeta, SupervisedSet, TimeWindow,
};
pub use weighting::{
    closed_form_two_model, combine, dwa, rmse, static_weights, DwaInput, WeightVector,
};
