use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastError, ModelParams};
use crate::timeseries::SupervisedSet;

/// Training budget preset: the published settings, or a reduced budget
/// that keeps a 100-window session within minutes on a laptop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    #[serde(rename = "paper")]
    Published,
    #[default]
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainConfig {
    /// One-time historical (batch-layer) training.
    pub fn batch_layer(fidelity: Fidelity) -> Self {
        let epochs = match fidelity {
            Fidelity::Published => 50,
            Fidelity::Desk => 10,
        };
        Self {
            epochs,
            batch_size: 512,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }

    /// Per-window speed-layer training.
    pub fn speed_layer(fidelity: Fidelity) -> Self {
        let epochs = match fidelity {
            Fidelity::Published => 100,
            Fidelity::Desk => 20,
        };
        Self {
            epochs,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.epochs == 0 {
            return Err(ForecastError::InvalidTrainConfig(
                "epochs must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ForecastError::InvalidTrainConfig(
                "batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ForecastError::InvalidTrainConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training MSE observed during each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl ModelParams {
    /// Minibatch training on MSE; returns a new snapshot.
    ///
    /// Shuffle order, and therefore the result, is fully determined by
    /// `cfg.seed`.
    pub fn train(
        &self,
        data: &SupervisedSet,
        cfg: &TrainConfig,
    ) -> Result<TrainOutcome, ForecastError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(ForecastError::EmptyData);
        }
        let mut params = self.clone();
        let n_params = params.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; n_params];
        let mut adam = AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        };
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mean = params.accumulate(
                    batch.iter().map(|&i| data.inputs[i].as_slice()),
                    batch.iter().map(|&i| data.targets[i]),
                    batch.len(),
                    &mut grad,
                )?;
                loss_sum += mean * batch.len() as f64;
                apply_update(params.values_mut(), &grad, cfg, &mut adam);
            }
            let loss = loss_sum / data.len() as f64;
            if !loss.is_finite() || params.values().iter().any(|v| !v.is_finite()) {
                return Err(ForecastError::Diverged { epoch, loss });
            }
            epoch_losses.push(loss);
        }
        Ok(TrainOutcome {
            params,
            epoch_losses,
        })
    }
}

fn apply_update(values: &mut [f64], grad: &[f64], cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (w, g) in values.iter_mut().zip(grad) {
                *w -= lr * g;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            adam.step += 1;
            let c1 = 1.0 - beta1.powi(adam.step);
            let c2 = 1.0 - beta2.powi(adam.step);
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grad)
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
