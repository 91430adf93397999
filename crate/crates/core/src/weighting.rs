//! Convex combination of model predictions and the per-window search for
//! combination weights that minimize RMSE on the previous window.
//!
//! Weight vectors are ordered like the prediction vectors they combine; the
//! pipeline uses `[speed, batch]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the unit-sum constraint.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("weights {0:?} are not on the simplex")]
    NotOnSimplex(Vec<f64>),
    #[error("{weights} weights for {predictions} prediction vectors")]
    ArityMismatch { weights: usize, predictions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightOrigin {
    Static,
    Dynamic,
    /// No speed model yet: pure batch output.
    Fallback,
}

/// Simplex-constrained combination weights for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    pub origin: WeightOrigin,
    pub window_index: u64,
}

impl WeightVector {
    pub fn new(
        weights: Vec<f64>,
        origin: WeightOrigin,
        window_index: u64,
    ) -> Result<Self, WeightError> {
        check_simplex(&weights)?;
        Ok(Self {
            weights,
            origin,
            window_index,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight on the speed model in the two-model layout.
    pub fn speed(&self) -> f64 {
        self.weights[0]
    }

    /// Weight on the batch model in the two-model layout.
    pub fn batch(&self) -> f64 {
        self.weights[1]
    }

    pub fn for_window(mut self, window_index: u64) -> Self {
        self.window_index = window_index;
        self
    }
}

fn check_simplex(weights: &[f64]) -> Result<(), WeightError> {
    let in_range = weights
        .iter()
        .all(|w| w.is_finite() && (0.0..=1.0).contains(w));
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !in_range || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(WeightError::NotOnSimplex(weights.to_vec()));
    }
    Ok(())
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), WeightError> {
    if a.len() != b.len() {
        return Err(WeightError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(WeightError::Empty);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(WeightError::NonFinite);
    }
    Ok(())
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64, WeightError> {
    if truth.len() != pred.len() {
        return Err(WeightError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(WeightError::Empty);
    }
    Ok(mse_unchecked(truth, pred).sqrt())
}

fn mse_unchecked(truth: &[f64], pred: &[f64]) -> f64 {
    truth
        .iter()
        .zip(pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / truth.len() as f64
}

/// Elementwise convex combination `sum_k w_k * preds[k]`.
pub fn combine<P: AsRef<[f64]>>(preds: &[P], w: &WeightVector) -> Result<Vec<f64>, WeightError> {
    check_simplex(w.weights())?;
    if preds.len() != w.weights().len() {
        return Err(WeightError::ArityMismatch {
            weights: w.weights().len(),
            predictions: preds.len(),
        });
    }
    let len = preds[0].as_ref().len();
    if let Some(p) = preds.iter().find(|p| p.as_ref().len() != len) {
        return Err(WeightError::LengthMismatch(len, p.as_ref().len()));
    }
    Ok(combine_unchecked(preds, w.weights(), len))
}

fn combine_unchecked<P: AsRef<[f64]>>(preds: &[P], weights: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (p, &wk) in preds.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(p.as_ref()) {
            *o += wk * v;
        }
    }
    out
}

/// Validated constant weights, reused unchanged for every window.
pub fn static_weights(ws: f64, wb: f64) -> Result<WeightVector, WeightError> {
    WeightVector::new(vec![ws, wb], WeightOrigin::Static, 0)
}

/// Exact loss minimizer for two models: the weight on `p_s` in
/// `w * p_s + (1 - w) * p_b`. Identical predictions make every weight
/// optimal; `0.5` is returned then.
pub fn closed_form_two_model(p_b: &[f64], p_s: &[f64], truth: &[f64]) -> Result<f64, WeightError> {
    check_pair(p_b, p_s)?;
    check_pair(p_b, truth)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((b, s), y) in p_b.iter().zip(p_s).zip(truth) {
        let d = s - b;
        num += d * (y - b);
        den += d * d;
    }
    if den == 0.0 {
        return Ok(0.5);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Inputs of one weight-fitting run.
#[derive(Debug, Clone, PartialEq)]
pub struct DwaInput {
    /// One prediction vector per model, same order as the output weights.
    pub predictions: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub initial_guess: Vec<f64>,
}

impl DwaInput {
    /// Equal initial weights.
    pub fn new(predictions: Vec<Vec<f64>>, truth: Vec<f64>) -> Self {
        let k = predictions.len();
        Self {
            predictions,
            truth,
            initial_guess: vec![1.0 / k.max(1) as f64; k],
        }
    }

    fn validate(&self) -> Result<(), WeightError> {
        if self.predictions.is_empty() || self.truth.is_empty() {
            return Err(WeightError::Empty);
        }
        for p in &self.predictions {
            check_pair(p, &self.truth)?;
        }
        if self.initial_guess.len() != self.predictions.len() {
            return Err(WeightError::ArityMismatch {
                weights: self.initial_guess.len(),
                predictions: self.predictions.len(),
            });
        }
        check_simplex(&self.initial_guess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwaOutcome {
    pub weights: WeightVector,
    /// RMSE of the combined prediction at the returned weights.
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Predictions were identical, so the initial guess was returned.
    pub degenerate: bool,
}

pub fn dwa(input: &DwaInput) -> Result<DwaOutcome, WeightError> {
    dwa_with(input, &SolverSettings::default())
}

/// Projected-gradient descent of the combined-prediction MSE over the
/// probability simplex, starting from `input.initial_guess`.
///
/// Each iteration steps along the gradient component tangent to the simplex
/// using the exact line minimizer of the quadratic objective, projects back
/// onto the simplex and backtracks until the projected step satisfies the
/// sufficient-decrease test. The best iterate is returned even when the
/// iteration cap is hit (`converged == false`).
pub fn dwa_with(input: &DwaInput, settings: &SolverSettings) -> Result<DwaOutcome, WeightError> {
    input.validate()?;
    let k = input.predictions.len();
    let n = input.truth.len();
    let preds = &input.predictions;
    let truth = &input.truth;

    let identical = preds.iter().all(|p| p == &preds[0]);
    if identical {
        let w = input.initial_guess.clone();
        let loss = mse_unchecked(truth, &combine_unchecked(preds, &w, n)).sqrt();
        return Ok(DwaOutcome {
            weights: WeightVector::new(w, WeightOrigin::Dynamic, 0)?,
            loss,
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let objective = |w: &[f64]| mse_unchecked(truth, &combine_unchecked(preds, w, n));
    let gradient = |w: &[f64]| -> Vec<f64> {
        let combined = combine_unchecked(preds, w, n);
        preds
            .iter()
            .map(|p| {
                2.0 * p
                    .iter()
                    .zip(&combined)
                    .zip(truth)
                    .map(|((pk, c), y)| pk * (c - y))
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    };

    let mut w = input.initial_guess.clone();
    let mut f = objective(&w);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        iterations += 1;
        let g = gradient(&w);
        let mean = g.iter().sum::<f64>() / k as f64;
        let tangent: Vec<f64> = g.iter().map(|gi| gi - mean).collect();
        let tangent_sq: f64 = tangent.iter().map(|t| t * t).sum();

        // curvature of the objective along the tangent direction
        let direction = combine_unchecked(preds, &tangent, n);
        let curvature = 2.0 * direction.iter().map(|d| d * d).sum::<f64>() / n as f64;

        let mut step = if curvature > 0.0 {
            tangent_sq / curvature
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let candidate = project_to_simplex(&trial);
            let delta: Vec<f64> = candidate.iter().zip(&w).map(|(c, wi)| c - wi).collect();
            let lin: f64 = g.iter().zip(&delta).map(|(gi, d)| gi * d).sum();
            let quad: f64 = delta.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            let fc = objective(&candidate);
            if fc <= f + lin + quad + 1e-15 * f.abs().max(1.0) {
                accepted = Some((candidate, fc, delta));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, fc, delta)) = accepted else {
            converged = true;
            break;
        };
        let moved = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if fc <= f {
            w = candidate;
            f = fc;
        }
        if moved < settings.tolerance {
            converged = true;
            break;
        }
    }

    // clean rounding so the returned vector passes the simplex check exactly
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x = (*x / sum).clamp(0.0, 1.0));
    let loss = objective(&w).sqrt();
    Ok(DwaOutcome {
        weights: WeightVector::new(w, WeightOrigin::Dynamic, 0)?,
        loss,
        iterations,
        converged,
        degenerate: false,
    })
}

/// Euclidean projection onto `{w : w_i >= 0, sum w_i = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(),
            (12.5f64).sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(rmse(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(
            rmse(&[1.0], &[1.0, 2.0]).unwrap_err(),
            WeightError::LengthMismatch(1, 2)
        );
        assert_eq!(rmse(&[], &[]).unwrap_err(), WeightError::Empty);
    }

    #[test]
    fn combine_examples() {
        let half = static_weights(0.5, 0.5).unwrap();
        assert_eq!(combine(&[vec![0.4], vec![0.6]], &half).unwrap(), vec![0.5]);
        let speed = vec![0.1, 0.9, 0.3];
        let pure = static_weights(1.0, 0.0).unwrap();
        assert_eq!(
            combine(&[speed.clone(), vec![7.0; 3]], &pure).unwrap(),
            speed
        );
        let w = static_weights(0.3, 0.7).unwrap();
        assert_abs_diff_eq!(combine(&[vec![1.0], vec![0.0]], &w).unwrap()[0], 0.3);
    }

    #[test]
    fn combine_rejects_bad_shapes() {
        let w = static_weights(0.5, 0.5).unwrap();
        assert!(matches!(
            combine(&[vec![1.0], vec![1.0, 2.0]], &w),
            Err(WeightError::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            combine(&[vec![1.0]], &w),
            Err(WeightError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn static_weights_validation() {
        assert!(static_weights(0.3, 0.7).is_ok());
        assert!(static_weights(1.0, 0.0).is_ok());
        assert!(static_weights(0.5, 0.6).is_err());
        assert!(static_weights(-0.1, 1.1).is_err());
    }

    #[test]
    fn closed_form_examples() {
        assert_abs_diff_eq!(
            closed_form_two_model(&[0.0, 0.0], &[1.0, 1.0], &[0.25, 0.25]).unwrap(),
            0.25
        );
        // unconstrained optimum is -0.5
        assert_eq!(closed_form_two_model(&[0.0], &[1.0], &[-0.5]).unwrap(), 0.0);
        assert_eq!(
            closed_form_two_model(&[0.3, 0.2], &[0.3, 0.2], &[1.0, 0.0]).unwrap(),
            0.5
        );
    }

    #[test]
    fn dwa_picks_perfect_speed_model() {
        let truth = vec![0.1, 0.5, 0.3, 0.8];
        let batch = vec![0.2, 0.1, 0.6, 0.4];
        let out = dwa(&DwaInput::new(vec![truth.clone(), batch], truth)).unwrap();
        assert_abs_diff_eq!(out.weights.speed(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.weights.batch(), 0.0, epsilon = 1e-9);
        assert!(out.loss < 1e-9);
        assert!(out.converged);
    }

    #[test]
    fn dwa_mirrored_errors_give_midpoint() {
        let truth: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let err: Vec<f64> = (0..20).map(|i| 0.1 + 0.01 * i as f64).collect();
        let speed: Vec<f64> = truth.iter().zip(&err).map(|(y, e)| y + e).collect();
        let batch: Vec<f64> = truth.iter().zip(&err).map(|(y, e)| y - e).collect();
        let out = dwa(&DwaInput::new(vec![speed, batch], truth)).unwrap();
        assert_abs_diff_eq!(out.weights.speed(), 0.5, epsilon = 1e-9);
        assert!(out.loss < 1e-12);
    }

    #[test]
    fn dwa_degenerate_returns_initial_guess() {
        let p = vec![0.2, 0.4];
        let out = dwa(&DwaInput::new(vec![p.clone(), p], vec![0.0, 1.0])).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.weights.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn dwa_rejects_non_finite() {
        let input = DwaInput::new(vec![vec![f64::NAN], vec![0.0]], vec![0.0]);
        assert_eq!(dwa(&input).unwrap_err(), WeightError::NonFinite);
    }

    #[test]
    fn dwa_three_models_stays_on_simplex() {
        let truth: Vec<f64> = (0..30).map(|i| (i as f64 * 0.2).cos()).collect();
        let preds: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                truth
                    .iter()
                    .enumerate()
                    .map(|(i, y)| y + 0.1 * ((i * (k + 2)) as f64).sin())
                    .collect()
            })
            .collect();
        let out = dwa(&DwaInput::new(preds.clone(), truth.clone())).unwrap();
        let sum: f64 = out.weights.weights().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        for vertex in 0..3 {
            let mut w = vec![0.0; 3];
            w[vertex] = 1.0;
            let v = WeightVector::new(w, WeightOrigin::Static, 0).unwrap();
            let loss = rmse(&truth, &combine(&preds, &v).unwrap()).unwrap();
            assert!(out.loss <= loss + 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.9, 0.3, -1.0]);
        assert_abs_diff_eq!(p[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.2, epsilon = 1e-12);
        assert_eq!(p[2], 0.0);
    }
}
