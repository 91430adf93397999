use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastError, NetworkConfig};

/// Offsets of each tensor inside the flat parameter vector.
///
/// Order: LSTM input kernel `(4H x D)`, recurrent kernel `(4H x H)`, gate
/// bias `(4H)`, dense kernel `(N x H)`, dense bias `(N)`, output kernel
/// `(O x N)`, output bias `(O)`. Kernels are row-major with one row per
/// output unit; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w_input: Range<usize>,
    pub w_recurrent: Range<usize>,
    pub b_gates: Range<usize>,
    pub w_dense: Range<usize>,
    pub b_dense: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let (d, h, n, o) = (
            cfg.input_dim,
            cfg.lstm_units,
            cfg.dense_units,
            cfg.output_units,
        );
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        Self {
            w_input: take(4 * h * d),
            w_recurrent: take(4 * h * h),
            b_gates: take(4 * h),
            w_dense: take(n * h),
            b_dense: take(n),
            w_out: take(o * n),
            b_out: take(o),
        }
    }

    pub fn total(&self) -> usize {
        self.b_out.end
    }
}

/// Immutable snapshot of network weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: NetworkConfig,
    values: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `[i | f | g | o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    steps: Vec<StepCache>,
    h_last: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_act: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &[f64] {
        &self.output
    }
}

impl ModelParams {
    /// Glorot-uniform kernels, zero biases except a forget-gate bias of 1.
    pub fn init(config: NetworkConfig) -> Result<Self, ForecastError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let (d, h, n, o) = (
            config.input_dim,
            config.lstm_units,
            config.dense_units,
            config.output_units,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = vec![0.0; layout.total()];
        let mut glorot = |range: Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-limit..limit);
            }
        };
        glorot(layout.w_input.clone(), d, 4 * h);
        glorot(layout.w_recurrent.clone(), h, 4 * h);
        glorot(layout.w_dense.clone(), h, n);
        glorot(layout.w_out.clone(), n, o);
        for v in &mut values[layout.b_gates.start + h..layout.b_gates.start + 2 * h] {
            *v = 1.0;
        }
        Ok(Self { config, values })
    }

    pub fn from_values(config: NetworkConfig, values: Vec<f64>) -> Result<Self, ForecastError> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(ForecastError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Copy with one parameter replaced; used by finite-difference checks.
    pub fn with_value(&self, index: usize, value: f64) -> Self {
        let mut next = self.clone();
        next.values[index] = value;
        next
    }

    fn check_row(&self, row: &[f64]) -> Result<(), ForecastError> {
        let expected = self.config.row_width();
        if row.len() != expected {
            return Err(ForecastError::DimensionMismatch {
                expected,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteInput);
        }
        Ok(())
    }

    /// All output units for one input row.
    pub fn forward_all(&self, row: &[f64]) -> Result<Vec<f64>, ForecastError> {
        self.check_row(row)?;
        let out = self.forward_cached(row).output;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteOutput);
        }
        Ok(out)
    }

    /// Scalar prediction (first output unit).
    pub fn forward(&self, row: &[f64]) -> Result<f64, ForecastError> {
        Ok(self.forward_all(row)?[0])
    }

    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>, ForecastError> {
        rows.iter().map(|r| self.forward(r.as_ref())).collect()
    }

    /// Mean squared error of the first output over a sample set.
    pub fn mse<R: AsRef<[f64]>>(&self, rows: &[R], targets: &[f64]) -> Result<f64, ForecastError> {
        if rows.is_empty() {
            return Err(ForecastError::EmptyData);
        }
        let mut sum = 0.0;
        for (row, &t) in rows.iter().zip(targets) {
            let e = self.forward(row.as_ref())? - t;
            sum += e * e;
        }
        Ok(sum / rows.len() as f64)
    }

    pub(crate) fn forward_cached(&self, row: &[f64]) -> ForwardCache {
        let cfg = &self.config;
        let (d, h, n, o) = (
            cfg.input_dim,
            cfg.lstm_units,
            cfg.dense_units,
            cfg.output_units,
        );
        let layout = self.layout();
        let wx = &self.values[layout.w_input];
        let wh = &self.values[layout.w_recurrent];
        let bg = &self.values[layout.b_gates];

        let mut h_state = vec![0.0; h];
        let mut c_state = vec![0.0; h];
        let mut steps = Vec::with_capacity(cfg.seq_len);
        for t in 0..cfg.seq_len {
            let x = &row[t * d..(t + 1) * d];
            let mut gates = bg.to_vec();
            for (r, z) in gates.iter_mut().enumerate() {
                let wx_row = &wx[r * d..(r + 1) * d];
                let wh_row = &wh[r * h..(r + 1) * h];
                let mut acc = 0.0;
                for k in 0..d {
                    acc += wx_row[k] * x[k];
                }
                for k in 0..h {
                    acc += wh_row[k] * h_state[k];
                }
                *z += acc;
            }
            for (r, z) in gates.iter_mut().enumerate() {
                *z = if (2 * h..3 * h).contains(&r) {
                    z.tanh()
                } else {
                    sigmoid(*z)
                };
            }
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut h_next = vec![0.0; h];
            for u in 0..h {
                let (i, f, g, og) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
                c[u] = f * c_state[u] + i * g;
                tanh_c[u] = c[u].tanh();
                h_next[u] = og * tanh_c[u];
            }
            steps.push(StepCache {
                h_prev: std::mem::replace(&mut h_state, h_next),
                c_prev: std::mem::replace(&mut c_state, c.clone()),
                gates,
                c,
                tanh_c,
            });
        }

        let wd = &self.values[layout.w_dense];
        let bd = &self.values[layout.b_dense];
        let mut dense_pre = bd.to_vec();
        for (j, z) in dense_pre.iter_mut().enumerate() {
            *z += wd[j * h..(j + 1) * h]
                .iter()
                .zip(&h_state)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        }
        let dense_act: Vec<f64> = dense_pre.iter().map(|&z| z.max(0.0)).collect();

        let wo = &self.values[layout.w_out];
        let bo = &self.values[layout.b_out];
        let mut output = bo.to_vec();
        for (k, y) in output.iter_mut().enumerate() {
            *y += wo[k * n..(k + 1) * n]
                .iter()
                .zip(&dense_act)
                .map(|(w, a)| w * a)
                .sum::<f64>();
        }
        debug_assert_eq!(output.len(), o);

        ForwardCache {
            steps,
            h_last: h_state,
            dense_pre,
            dense_act,
            output,
        }
    }

    /// Accumulates `d_output`-weighted gradients for one sample into `grad`.
    pub(crate) fn backward(
        &self,
        row: &[f64],
        cache: &ForwardCache,
        d_output: &[f64],
        grad: &mut [f64],
    ) {
        let cfg = &self.config;
        let (d, h, n, o) = (
            cfg.input_dim,
            cfg.lstm_units,
            cfg.dense_units,
            cfg.output_units,
        );
        let layout = self.layout();

        // output layer
        let wo = &self.values[layout.w_out.clone()];
        let mut d_act = vec![0.0; n];
        for k in 0..o {
            let dy = d_output[k];
            grad[layout.b_out.start + k] += dy;
            let g_row = &mut grad[layout.w_out.start + k * n..layout.w_out.start + (k + 1) * n];
            for j in 0..n {
                g_row[j] += dy * cache.dense_act[j];
                d_act[j] += dy * wo[k * n + j];
            }
        }

        // dense layer
        let wd = &self.values[layout.w_dense.clone()];
        let mut dh = vec![0.0; h];
        for j in 0..n {
            if cache.dense_pre[j] <= 0.0 {
                continue;
            }
            let dz = d_act[j];
            grad[layout.b_dense.start + j] += dz;
            let g_row = &mut grad[layout.w_dense.start + j * h..layout.w_dense.start + (j + 1) * h];
            for u in 0..h {
                g_row[u] += dz * cache.h_last[u];
                dh[u] += dz * wd[j * h + u];
            }
        }

        // LSTM, backwards through time
        let wh = &self.values[layout.w_recurrent.clone()];
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..cfg.seq_len).rev() {
            let step = &cache.steps[t];
            let x = &row[t * d..(t + 1) * d];
            for u in 0..h {
                let (i, f, g, og) = (
                    step.gates[u],
                    step.gates[h + u],
                    step.gates[2 * h + u],
                    step.gates[3 * h + u],
                );
                let tc = step.tanh_c[u];
                let d_o = dh[u] * tc;
                dc[u] += dh[u] * og * (1.0 - tc * tc);
                let d_i = dc[u] * g;
                let d_g = dc[u] * i;
                let d_f = dc[u] * step.c_prev[u];
                dz[u] = d_i * i * (1.0 - i);
                dz[h + u] = d_f * f * (1.0 - f);
                dz[2 * h + u] = d_g * (1.0 - g * g);
                dz[3 * h + u] = d_o * og * (1.0 - og);
                dc[u] *= f;
            }
            debug_assert_eq!(step.c.len(), h);
            let mut dh_prev = vec![0.0; h];
            for r in 0..4 * h {
                let z = dz[r];
                if z == 0.0 {
                    continue;
                }
                grad[layout.b_gates.start + r] += z;
                let gx =
                    &mut grad[layout.w_input.start + r * d..layout.w_input.start + (r + 1) * d];
                for k in 0..d {
                    gx[k] += z * x[k];
                }
                let gh = &mut grad
                    [layout.w_recurrent.start + r * h..layout.w_recurrent.start + (r + 1) * h];
                let wh_row = &wh[r * h..(r + 1) * h];
                for k in 0..h {
                    gh[k] += z * step.h_prev[k];
                    dh_prev[k] += z * wh_row[k];
                }
            }
            dh = dh_prev;
        }
    }

    /// Mean squared error over the first output and its gradient with
    /// respect to every parameter.
    pub fn loss_and_gradient<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), ForecastError> {
        if rows.is_empty() {
            return Err(ForecastError::EmptyData);
        }
        let mut grad = vec![0.0; self.values.len()];
        let loss = self.accumulate(
            rows.iter().map(|r| r.as_ref()),
            targets.iter().copied(),
            rows.len(),
            &mut grad,
        )?;
        Ok((loss, grad))
    }

    /// Adds the mean-loss gradient of a batch to `grad`, returning the mean
    /// loss.
    pub(crate) fn accumulate<'a>(
        &self,
        rows: impl Iterator<Item = &'a [f64]>,
        targets: impl Iterator<Item = f64>,
        batch: usize,
        grad: &mut [f64],
    ) -> Result<f64, ForecastError> {
        let scale = 1.0 / batch as f64;
        let mut d_out = vec![0.0; self.config.output_units];
        let mut loss = 0.0;
        for (row, target) in rows.zip(targets) {
            self.check_row(row)?;
            let cache = self.forward_cached(row);
            let err = cache.output()[0] - target;
            loss += err * err;
            d_out[0] = 2.0 * err * scale;
            self.backward(row, &cache, &d_out, grad);
        }
        Ok(loss * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_dim: 2,
            seq_len: 3,
            lstm_units: 3,
            dense_units: 2,
            output_units: 1,
            seed: 11,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(tiny()).unwrap();
        let b = ModelParams::init(tiny()).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(tiny().with_seed(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn collapses_to_output_bias() {
        let cfg = NetworkConfig::default();
        let layout = Layout::new(&cfg);
        let mut values = vec![0.0; cfg.param_count()];
        values[layout.b_out.start] = 0.375;
        let p = ModelParams::from_values(cfg, values).unwrap();
        for row in [
            vec![0.0; 25],
            vec![1.0; 25],
            (0..25).map(f64::from).collect(),
        ] {
            assert_eq!(p.forward(&row).unwrap(), 0.375);
        }
    }

    #[test]
    fn zero_input_zero_biases_gives_zero() {
        let cfg = NetworkConfig::default();
        let mut p = ModelParams::init(cfg).unwrap();
        let layout = p.layout();
        for r in [layout.b_gates, layout.b_dense, layout.b_out] {
            for v in &mut p.values_mut()[r] {
                *v = 0.0;
            }
        }
        assert_eq!(p.forward(&[0.0; 25]).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let p = ModelParams::init(NetworkConfig::default().with_seed(3)).unwrap();
        let row: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = p.forward(&row).unwrap();
        let b = ModelParams::init(NetworkConfig::default().with_seed(3))
            .unwrap()
            .forward(&row)
            .unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn forward_rejects_bad_rows() {
        let p = ModelParams::init(NetworkConfig::default()).unwrap();
        assert_eq!(
            p.forward(&[0.0; 24]).unwrap_err(),
            ForecastError::DimensionMismatch {
                expected: 25,
                found: 24
            }
        );
        let mut row = vec![0.0; 25];
        row[3] = f64::INFINITY;
        assert_eq!(p.forward(&row).unwrap_err(), ForecastError::NonFiniteInput);
    }

    #[test]
    fn huge_weights_report_non_finite_output() {
        let cfg = tiny();
        let layout = Layout::new(&cfg);
        let mut values = vec![0.0; cfg.param_count()];
        values[layout.b_dense.start] = f64::MAX;
        for v in &mut values[layout.w_out.clone()] {
            *v = f64::MAX;
        }
        let p = ModelParams {
            config: cfg,
            values,
        };
        assert_eq!(
            p.forward(&[0.0; 6]).unwrap_err(),
            ForecastError::NonFiniteOutput
        );
    }

    #[test]
    fn predict_batch_preserves_order() {
        let p = ModelParams::init(tiny()).unwrap();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| (0..6).map(|k| ((i * 7 + k) as f64 * 0.1).cos()).collect())
            .collect();
        let preds = p.predict_batch(&rows).unwrap();
        assert_eq!(preds.len(), 200);
        for (row, pred) in rows.iter().zip(&preds) {
            assert_eq!(p.forward(row).unwrap(), *pred);
        }
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(p.predict_batch(&empty).unwrap().is_empty());
    }
}
