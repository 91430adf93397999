//! Synthetic base signals and the gradual / abrupt drift transforms.
//!
//! For variable `i` at record position `t`:
//!
//! ```text
//! gradual:  out[t][i] = alpha_i * t            + base[t][i] + eps
//! abrupt:   out[t][i] = alpha_i * t * lambda(t) + base[t][i] + eps
//! ```
//!
//! `eps` is i.i.d. Gaussian per value and `lambda(t)` is piecewise constant
//! with `K` random change points. Noise and the lambda path come from
//! separate ChaCha streams of the same seed, so abrupt drift with
//! `lambda == 1` reproduces gradual drift exactly.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::timeseries::{Record, Series, SeriesMeta};

const NOISE_STREAM: u64 = 0;
const LAMBDA_STREAM: u64 = 1;

/// 2017-01-01T00:00:00Z, the start of the turbine recordings.
pub const DEFAULT_START_TIMESTAMP: i64 = 1_483_228_800;
/// Ten-minute sensor cadence.
pub const DEFAULT_STEP_SECONDS: i64 = 600;

pub const TURBINE_VARIABLES: [&str; 5] = ["Db1t_avg", "Db2t_avg", "Gb1t_avg", "Gb2t_avg", "Ot_avg"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Period in records.
    pub period: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn at(&self, t: f64) -> f64 {
        self.amplitude * (TAU * t / self.period + self.phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSignal {
    pub name: String,
    pub offset: f64,
    pub components: Vec<Sinusoid>,
}

/// Stationary stand-in for real sensor data: per-variable sums of
/// sinusoids plus white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSignalConfig {
    pub length: usize,
    pub variables: Vec<VariableSignal>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub start_timestamp: i64,
    pub step_seconds: i64,
}

impl BaseSignalConfig {
    /// Five temperature-like channels with a daily cycle (144 records at
    /// ten-minute cadence) and a slower weekly swing, sharing phase so the
    /// channels co-move like sensors on one machine.
    pub fn turbine(length: usize, seed: u64) -> Self {
        let offsets = [52.0, 50.0, 58.0, 56.0, 24.0];
        let daily = [6.0, 5.5, 7.0, 6.5, 5.0];
        let weekly = [4.0, 4.0, 5.0, 4.5, 3.5];
        let variables = TURBINE_VARIABLES
            .iter()
            .enumerate()
            .map(|(i, name)| VariableSignal {
                name: (*name).to_string(),
                offset: offsets[i],
                components: vec![
                    Sinusoid {
                        amplitude: daily[i],
                        period: 144.0,
                        phase: 0.15 * i as f64,
                    },
                    Sinusoid {
                        amplitude: weekly[i],
                        period: 1008.0,
                        phase: 0.4 + 0.1 * i as f64,
                    },
                ],
            })
            .collect();
        Self {
            length,
            variables,
            noise_sigma: 0.4,
            seed,
            start_timestamp: DEFAULT_START_TIMESTAMP,
            step_seconds: DEFAULT_STEP_SECONDS,
        }
    }
}

pub fn synth_base(cfg: &BaseSignalConfig) -> Series {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let records = (0..cfg.length)
        .map(|t| {
            let values = cfg
                .variables
                .iter()
                .map(|v| {
                    let clean = v.offset + v.components.iter().map(|c| c.at(t as f64)).sum::<f64>();
                    let e = if cfg.noise_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    clean + e
                })
                .collect();
            Record::new(cfg.start_timestamp + t as i64 * cfg.step_seconds, values)
        })
        .collect();
    let width = cfg.variables.len();
    let meta = SeriesMeta {
        source: "synthetic".into(),
        seed: Some(cfg.seed),
        names: cfg.variables.iter().map(|v| v.name.clone()).collect(),
        target: width.saturating_sub(1),
    };
    Series::new(records, meta).expect("generated series is valid")
}

/// Piecewise-constant abrupt-drift multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaProcess {
    Constant {
        value: f64,
    },
    /// `change_points` distinct positions drawn uniformly from `1..len`;
    /// each segment takes a level from `levels`, never repeating the level
    /// of the segment before it.
    Switching {
        change_points: usize,
        levels: Vec<f64>,
    },
}

impl LambdaProcess {
    pub fn on_off(change_points: usize) -> Self {
        LambdaProcess::Switching {
            change_points,
            levels: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Per-variable drift per record.
    pub alpha: Vec<f64>,
    pub epsilon_sigma: f64,
    pub lambda: LambdaProcess,
    pub seed: u64,
}

impl DriftConfig {
    /// Drift every variable so that the accumulated drift over the series
    /// roughly equals that variable's own range.
    pub fn spanning_range(base: &Series, epsilon_sigma: f64, seed: u64) -> Self {
        let len = base.len().max(1) as f64;
        let alpha = (0..base.width())
            .map(|i| {
                let col = base.column(i);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if lo.is_finite() {
                    (hi - lo) / len
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            alpha,
            epsilon_sigma,
            lambda: LambdaProcess::Constant { value: 1.0 },
            seed,
        }
    }

    /// Same as [`spanning_range`](Self::spanning_range) but only the target
    /// variable drifts.
    pub fn target_only(base: &Series, epsilon_sigma: f64, seed: u64) -> Self {
        let mut cfg = Self::spanning_range(base, epsilon_sigma, seed);
        let target = base.target_index();
        for (i, a) in cfg.alpha.iter_mut().enumerate() {
            if i != target {
                *a = 0.0;
            }
        }
        cfg
    }

    pub fn with_lambda(mut self, lambda: LambdaProcess) -> Self {
        self.lambda = lambda;
        self
    }

    fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(NOISE_STREAM);
        rng
    }
}

/// Sorted change points and the lambda value at every position.
pub fn lambda_path(process: &LambdaProcess, len: usize, seed: u64) -> (Vec<usize>, Vec<f64>) {
    match process {
        LambdaProcess::Constant { value } => (Vec::new(), vec![*value; len]),
        LambdaProcess::Switching {
            change_points,
            levels,
        } => {
            if levels.is_empty() || len == 0 {
                return (Vec::new(), vec![0.0; len]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(LAMBDA_STREAM);
            let k = if levels.len() > 1 {
                (*change_points).min(len.saturating_sub(1))
            } else {
                0
            };
            let mut points = rand::seq::index::sample(&mut rng, len - 1, k).into_vec();
            points.iter_mut().for_each(|p| *p += 1);
            points.sort_unstable();

            let mut level = rng.random_range(0..levels.len());
            let mut path = Vec::with_capacity(len);
            let mut next = points.iter().peekable();
            for t in 0..len {
                if next.peek() == Some(&&t) {
                    next.next();
                    let shift = rng.random_range(1..levels.len());
                    level = (level + shift) % levels.len();
                }
                path.push(levels[level]);
            }
            (points, path)
        }
    }
}

fn apply_drift(base: &Series, cfg: &DriftConfig, lambda: &[f64]) -> Series {
    let mut rng = cfg.noise_rng();
    let noise = Normal::new(0.0, cfg.epsilon_sigma.max(0.0)).expect("finite sigma");
    let records = base
        .records()
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let values = r
                .values
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let alpha = cfg.alpha.get(i).copied().unwrap_or(0.0);
                    let e = if cfg.epsilon_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    alpha * t as f64 * lambda[t] + y + e
                })
                .collect();
            Record::new(r.timestamp, values)
        })
        .collect();
    let mut meta = base.meta().clone();
    meta.seed = Some(cfg.seed);
    Series::new(records, meta).expect("drift preserves validity")
}

pub fn gradual_drift(base: &Series, cfg: &DriftConfig) -> Series {
    apply_drift(base, cfg, &vec![1.0; base.len()])
}

pub fn abrupt_drift(base: &Series, cfg: &DriftConfig) -> Series {
    let (_, lambda) = lambda_path(&cfg.lambda, base.len(), cfg.seed);
    apply_drift(base, cfg, &lambda)
}
