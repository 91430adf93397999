//! Per-window operations of the inference and training phases.

use std::fmt;
use std::str::FromStr;

use hybrid_core::forecaster::{ArtifactProducer, ModelArtifact, ModelParams, TrainConfig};
use hybrid_core::timeseries::{
    supervised_from_records, MinMaxScaler, Record, SupervisedSet, TimeWindow,
};
use hybrid_core::weighting::{
    combine, dwa, rmse, static_weights, DwaInput, WeightOrigin, WeightVector,
};
use serde::{Deserialize, Serialize};

use super::result::{FitDiagnostics, WindowResult};
use super::slot::SpeedModelSlot;
use super::PipelineError;
use crate::fabric::codec::{Decoder, Encoder};
use crate::fabric::FabricError;

/// Static constant weights or per-window dynamic fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightingMode {
    Static { speed: f64, batch: f64 },
    Dynamic,
}

impl WeightingMode {
    /// The published static grid: 3:7, 5:5 and 7:3 (speed:batch).
    pub const STATIC_GRID: [(f64, f64); 3] = [(0.3, 0.7), (0.5, 0.5), (0.7, 0.3)];

    pub fn label(&self) -> String {
        match self {
            WeightingMode::Static { speed, batch } => {
                format!(
                    "static_{}_{}",
                    (speed * 10.0).round(),
                    (batch * 10.0).round()
                )
            }
            WeightingMode::Dynamic => "dynamic".into(),
        }
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightingMode::Static { speed, batch } => write!(f, "static:{speed}:{batch}"),
            WeightingMode::Dynamic => f.write_str("dynamic"),
        }
    }
}

impl FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "dynamic" {
            return Ok(WeightingMode::Dynamic);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["static", ws, wb] => {
                let parse = |v: &str| v.parse::<f64>().map_err(|_| format!("bad weight `{v}`"));
                let (speed, batch) = (parse(ws)?, parse(wb)?);
                static_weights(speed, batch).map_err(|e| e.to_string())?;
                Ok(WeightingMode::Static { speed, batch })
            }
            _ => Err(format!(
                "expected `static:<ws>:<wb>` or `dynamic`, got `{s}`"
            )),
        }
    }
}

impl TryFrom<String> for WeightingMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<WeightingMode> for String {
    fn from(m: WeightingMode) -> Self {
        m.to_string()
    }
}

/// Scaling and framing shared by every inference module.
#[derive(Debug, Clone, PartialEq)]
pub struct Framing {
    pub scaler: MinMaxScaler,
    pub lag: usize,
    pub target: usize,
}

impl Framing {
    /// Scaled supervised samples for `records`.
    pub fn supervise(&self, records: &[Record]) -> Result<SupervisedSet, PipelineError> {
        let scaled = records
            .iter()
            .map(|r| self.scaler.transform_record(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(supervised_from_records(
            &scaled,
            self.scaler.width(),
            self.target,
            self.lag,
        )?)
    }
}

pub fn batch_infer(model: &ModelParams, set: &SupervisedSet) -> Result<Vec<f64>, PipelineError> {
    Ok(model.predict_batch(&set.inputs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedOutput {
    Predictions {
        values: Vec<f64>,
        version: u64,
        trained_on: Option<u64>,
    },
    /// The slot was empty.
    NoModel,
}

impl SpeedOutput {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            SpeedOutput::Predictions { values, .. } => Some(values),
            SpeedOutput::NoModel => None,
        }
    }
}

/// Predicts with whatever artifact the slot holds right now.
pub fn speed_infer(
    slot: &SpeedModelSlot,
    set: &SupervisedSet,
) -> Result<SpeedOutput, PipelineError> {
    let Some(artifact) = slot.current() else {
        return Ok(SpeedOutput::NoModel);
    };
    Ok(SpeedOutput::Predictions {
        values: artifact.params().predict_batch(&set.inputs)?,
        version: artifact.version(),
        trained_on: artifact.trained_on_window(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub predictions: Vec<f64>,
    pub weights: WeightVector,
    /// No speed predictions; the output is the batch output.
    pub fallback: bool,
}

pub fn hybrid_infer(
    batch: &[f64],
    speed: &SpeedOutput,
    weights: &WeightVector,
) -> Result<HybridOutput, PipelineError> {
    match speed.values() {
        None => Ok(HybridOutput {
            predictions: batch.to_vec(),
            weights: WeightVector::new(
                vec![0.0, 1.0],
                WeightOrigin::Fallback,
                weights.window_index,
            )?,
            fallback: true,
        }),
        Some(s) => Ok(HybridOutput {
            predictions: combine(&[s, batch], weights)?,
            weights: weights.clone(),
            fallback: false,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRefresh {
    pub weights: WeightVector,
    pub fallback: bool,
    pub not_converged: bool,
    pub degenerate: bool,
    pub iterations: usize,
    pub fit: Option<FitDiagnostics>,
}

impl WeightRefresh {
    fn fallback(window_index: u64) -> Result<Self, PipelineError> {
        Ok(Self {
            weights: WeightVector::new(vec![0.0, 1.0], WeightOrigin::Fallback, window_index)?,
            fallback: true,
            not_converged: false,
            degenerate: false,
            iterations: 0,
            fit: None,
        })
    }
}

/// Weights for window `window_index`. Dynamic mode fits on the previous
/// window's speed and batch predictions against its truth; without such a
/// window it falls back to pure batch.
pub fn refresh_weights(
    previous: Option<&WindowResult>,
    mode: WeightingMode,
    window_index: u64,
) -> Result<WeightRefresh, PipelineError> {
    match mode {
        WeightingMode::Static { speed, batch } => Ok(WeightRefresh {
            weights: static_weights(speed, batch)?.for_window(window_index),
            fallback: false,
            not_converged: false,
            degenerate: false,
            iterations: 0,
            fit: None,
        }),
        WeightingMode::Dynamic => {
            let usable = previous.filter(|p| p.window_index + 1 == window_index);
            let Some((prev, speed)) = usable.and_then(|p| p.speed.as_ref().map(|s| (p, s))) else {
                return WeightRefresh::fallback(window_index);
            };
            let outcome = dwa(&DwaInput::new(
                vec![speed.clone(), prev.batch.clone()],
                prev.truth.clone(),
            ))?;
            let weights = WeightVector::new(
                outcome.weights.weights().to_vec(),
                WeightOrigin::Dynamic,
                window_index,
            )?;
            let fitted = combine(&[speed.as_slice(), prev.batch.as_slice()], &weights)?;
            let fit = FitDiagnostics {
                fitting_window: prev.window_index,
                hybrid_rmse: rmse(&prev.truth, &fitted)?,
                batch_rmse: rmse(&prev.truth, &prev.batch)?,
                speed_rmse: rmse(&prev.truth, speed)?,
                iterations: outcome.iterations as u64,
            };
            Ok(WeightRefresh {
                weights,
                fallback: false,
                not_converged: !outcome.converged,
                degenerate: outcome.degenerate,
                iterations: outcome.iterations,
                fit: Some(fit),
            })
        }
    }
}

/// Trains a speed model on one window (no carried-over context), starting
/// from `init`, and publishes it as the next artifact version.
pub fn speed_train(
    framing: &Framing,
    window: &TimeWindow,
    init: &ModelParams,
    cfg: &TrainConfig,
    producer: &mut ArtifactProducer,
) -> Result<ModelArtifact, PipelineError> {
    let params = train_params(framing, window, init, cfg)?;
    Ok(producer.publish(params, Some(window.index)))
}

/// The numeric part of [`speed_train`].
pub fn train_params(
    framing: &Framing,
    window: &TimeWindow,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<ModelParams, PipelineError> {
    if window.len() <= framing.lag {
        return Err(PipelineError::InsufficientRecords {
            window: window.index,
            records: window.len(),
            lag: framing.lag,
        });
    }
    let set = framing.supervise(&window.records)?;
    Ok(init.train(&set, cfg)?.params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PartialKind {
    Batch,
    Speed,
}

/// Batch or speed predictions for one window, as published on
/// `results/inference/{batch,speed}`.
///
/// ```text
/// "HSPR"  u32 version
/// u64 window index, u8 kind (0 batch, 1 speed)
/// u64 model version (0 = none), u64 trained-on window (MAX = none)
/// u8 has_values [f64s values], f64s truth
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PartialPrediction {
    pub window_index: u64,
    pub kind: PartialKind,
    pub values: Option<Vec<f64>>,
    pub truth: Vec<f64>,
    pub version: u64,
    pub trained_on: Option<u64>,
}

const PARTIAL_MAGIC: &[u8; 4] = b"HSPR";

impl PartialPrediction {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new(PARTIAL_MAGIC);
        e.u64(self.window_index)
            .u8(match self.kind {
                PartialKind::Batch => 0,
                PartialKind::Speed => 1,
            })
            .u64(self.version)
            .u64(self.trained_on.unwrap_or(u64::MAX));
        match &self.values {
            Some(v) => e.u8(1).f64s(v),
            None => e.u8(0),
        };
        e.f64s(&self.truth);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        let mut d = Decoder::new(bytes, PARTIAL_MAGIC, "partial prediction")?;
        let bad = |m: &str| FabricError::Codec(format!("partial prediction: {m}"));
        let window_index = d.u64()?;
        let kind = match d.u8()? {
            0 => PartialKind::Batch,
            1 => PartialKind::Speed,
            _ => return Err(bad("bad kind")),
        };
        let version = d.u64()?;
        let trained_on = Some(d.u64()?).filter(|v| *v != u64::MAX);
        let values = match d.u8()? {
            0 => None,
            1 => Some(d.f64s()?),
            _ => return Err(bad("bad values marker")),
        };
        let truth = d.f64s()?;
        d.finish()?;
        Ok(Self {
            window_index,
            kind,
            values,
            truth,
            version,
            trained_on,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::result::ResultFlags;
    use hybrid_core::forecaster::NetworkConfig;

    fn framing() -> Framing {
        Framing {
            scaler: MinMaxScaler::from_bounds(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            lag: 2,
            target: 1,
        }
    }

    fn model() -> ModelParams {
        ModelParams::init(NetworkConfig {
            input_dim: 4,
            seq_len: 1,
            lstm_units: 3,
            dense_units: 2,
            output_units: 1,
            seed: 1,
        })
        .unwrap()
    }

    fn window(index: u64, n: usize) -> TimeWindow {
        TimeWindow {
            index,
            records: (0..n)
                .map(|i| Record::new(i as i64, vec![i as f64 % 10.0, (i * 3) as f64 % 10.0]))
                .collect(),
            open_tick: 0,
            close_tick: 1,
        }
    }

    fn previous(speed: Option<Vec<f64>>) -> WindowResult {
        let truth = vec![0.2, 0.4, 0.6, 0.8];
        WindowResult {
            window_index: 0,
            batch: vec![0.3, 0.3, 0.7, 0.7],
            hybrid: vec![0.3, 0.3, 0.7, 0.7],
            speed,
            truth,
            weights: WeightVector::new(vec![0.0, 1.0], WeightOrigin::Fallback, 0).unwrap(),
            speed_model_version: 0,
            speed_trained_on: None,
            flags: ResultFlags::default(),
            fit: None,
        }
    }

    #[test]
    fn batch_is_pure() {
        let set = framing().supervise(&window(0, 20).records).unwrap();
        let m = model();
        assert_eq!(
            batch_infer(&m, &set).unwrap(),
            batch_infer(&m, &set).unwrap()
        );
        assert_eq!(batch_infer(&m, &set).unwrap().len(), 18);
    }

    #[test]
    fn lag_plus_one_records_give_one_prediction() {
        let set = framing().supervise(&window(0, 3).records).unwrap();
        assert_eq!(batch_infer(&model(), &set).unwrap().len(), 1);
    }

    #[test]
    fn empty_slot_gives_marker_and_batch_fallback() {
        let set = framing().supervise(&window(0, 10).records).unwrap();
        let out = speed_infer(&SpeedModelSlot::new(), &set).unwrap();
        assert_eq!(out, SpeedOutput::NoModel);
        let batch = batch_infer(&model(), &set).unwrap();
        let w = static_weights(0.7, 0.3).unwrap();
        let h = hybrid_infer(&batch, &out, &w).unwrap();
        assert!(h.fallback);
        assert_eq!(h.predictions, batch);
        assert_eq!(h.weights.weights(), &[0.0, 1.0]);
    }

    #[test]
    fn speed_uses_slot_version() {
        let slot = SpeedModelSlot::new();
        slot.install(ModelArtifact::new(model(), 3, Some(1)));
        let set = framing().supervise(&window(0, 10).records).unwrap();
        match speed_infer(&slot, &set).unwrap() {
            SpeedOutput::Predictions {
                version,
                trained_on,
                values,
            } => {
                assert_eq!((version, trained_on, values.len()), (3, Some(1), 8));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vertex_weights_reproduce_inputs_exactly() {
        let batch = vec![0.1, 0.5, 0.9];
        let speed = SpeedOutput::Predictions {
            values: vec![0.2, 0.4, 0.6],
            version: 1,
            trained_on: Some(0),
        };
        let all_speed = WeightVector::new(vec![1.0, 0.0], WeightOrigin::Static, 0).unwrap();
        let all_batch = WeightVector::new(vec![0.0, 1.0], WeightOrigin::Static, 0).unwrap();
        assert_eq!(
            hybrid_infer(&batch, &speed, &all_speed)
                .unwrap()
                .predictions,
            speed.values().unwrap()
        );
        assert_eq!(
            hybrid_infer(&batch, &speed, &all_batch)
                .unwrap()
                .predictions,
            batch
        );
    }

    #[test]
    fn static_refresh_is_constant() {
        let m = WeightingMode::Static {
            speed: 0.5,
            batch: 0.5,
        };
        for i in 0..3 {
            let r = refresh_weights(None, m, i).unwrap();
            assert_eq!(r.weights.weights(), &[0.5, 0.5]);
            assert!(!r.fallback);
        }
    }

    #[test]
    fn dynamic_first_window_falls_back() {
        let r = refresh_weights(None, WeightingMode::Dynamic, 0).unwrap();
        assert!(r.fallback);
        assert_eq!(r.weights.weights(), &[0.0, 1.0]);
        assert_eq!(r.weights.origin, WeightOrigin::Fallback);
        let no_speed = previous(None);
        assert!(
            refresh_weights(Some(&no_speed), WeightingMode::Dynamic, 1)
                .unwrap()
                .fallback
        );
    }

    #[test]
    fn dynamic_with_perfect_speed_picks_speed() {
        let prev = previous(Some(vec![0.2, 0.4, 0.6, 0.8]));
        let r = refresh_weights(Some(&prev), WeightingMode::Dynamic, 1).unwrap();
        assert!((r.weights.speed() - 1.0).abs() < 1e-9);
        let fit = r.fit.unwrap();
        assert!(fit.hybrid_rmse <= fit.batch_rmse.min(fit.speed_rmse) + 1e-9);
    }

    #[test]
    fn dynamic_skips_non_adjacent_previous() {
        let prev = previous(Some(vec![0.2, 0.4, 0.6, 0.8]));
        assert!(
            refresh_weights(Some(&prev), WeightingMode::Dynamic, 2)
                .unwrap()
                .fallback
        );
    }

    #[test]
    fn speed_train_counts_and_versions() {
        let f = framing();
        let w = window(5, 12);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 3,
            optimizer: Default::default(),
        };
        assert_eq!(f.supervise(&w.records).unwrap().len(), 10);
        let mut p1 = ArtifactProducer::new();
        let mut p2 = ArtifactProducer::new();
        let a = speed_train(&f, &w, &model(), &cfg, &mut p1).unwrap();
        let b = speed_train(&f, &w, &model(), &cfg, &mut p2).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.version(), a.trained_on_window()), (1, Some(5)));
        assert!(matches!(
            speed_train(&f, &window(6, 2), &model(), &cfg, &mut p1),
            Err(PipelineError::InsufficientRecords { records: 2, .. })
        ));
    }

    #[test]
    fn weighting_mode_parses() {
        assert_eq!(
            "dynamic".parse::<WeightingMode>().unwrap(),
            WeightingMode::Dynamic
        );
        assert_eq!(
            "static:0.3:0.7".parse::<WeightingMode>().unwrap(),
            WeightingMode::Static {
                speed: 0.3,
                batch: 0.7
            }
        );
        assert!("static:0.3:0.8".parse::<WeightingMode>().is_err());
        assert!("static:-0.5:1.5".parse::<WeightingMode>().is_err());
        assert!("weighted".parse::<WeightingMode>().is_err());
        assert_eq!(
            WeightingMode::Static {
                speed: 0.3,
                batch: 0.7
            }
            .label(),
            "static_3_7"
        );
    }

    #[test]
    fn partial_roundtrip() {
        let p = PartialPrediction {
            window_index: 9,
            kind: PartialKind::Speed,
            values: Some(vec![0.5, 0.25]),
            truth: vec![0.4, 0.3],
            version: 7,
            trained_on: Some(8),
        };
        assert_eq!(PartialPrediction::decode(&p.encode()).unwrap(), p);
        let none = PartialPrediction {
            values: None,
            trained_on: None,
            version: 0,
            ..p
        };
        assert_eq!(PartialPrediction::decode(&none.encode()).unwrap(), none);
    }
}
