//! Per-window inference results and their binary encoding.
//!
//! ```text
//! "HSRS"  u32 version
//! u64 window index
//! f64s truth, f64s batch, u8 has_speed [f64s speed], f64s hybrid
//! f64s weights (speed, batch), u8 weight origin
//! u64 speed model version (0 = none), u64 trained-on window (MAX = none)
//! u8 flag bits
//! u8 has_fit [u64 fitting window, f64 hybrid, f64 batch, f64 speed, u64 iterations]
//! ```
//!
//! Flag bits: 1 first-window fallback, 2 no speed model, 4 solver did not
//! converge, 8 degenerate fit.

use hybrid_core::weighting::{rmse, WeightOrigin, WeightVector};
use serde::{Deserialize, Serialize};

use crate::fabric::codec::{Decoder, Encoder};
use crate::fabric::FabricError;

const RESULT_MAGIC: &[u8; 4] = b"HSRS";
const NONE_U64: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultFlags {
    /// Weights fell back to pure batch because no fitted weights existed.
    pub first_window_fallback: bool,
    /// The slot was empty when speed inference ran.
    pub no_speed_model: bool,
    pub solver_not_converged: bool,
    /// Speed and batch predictions were identical on the fitting window.
    pub degenerate_fit: bool,
}

impl ResultFlags {
    fn bits(&self) -> u8 {
        u8::from(self.first_window_fallback)
            | u8::from(self.no_speed_model) << 1
            | u8::from(self.solver_not_converged) << 2
            | u8::from(self.degenerate_fit) << 3
    }

    fn from_bits(b: u8) -> Self {
        Self {
            first_window_fallback: b & 1 != 0,
            no_speed_model: b & 2 != 0,
            solver_not_converged: b & 4 != 0,
            degenerate_fit: b & 8 != 0,
        }
    }
}

/// How the dynamic weights for a window did on the window they were fitted
/// on (the previous one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub fitting_window: u64,
    pub hybrid_rmse: f64,
    pub batch_rmse: f64,
    pub speed_rmse: f64,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window_index: u64,
    pub truth: Vec<f64>,
    pub batch: Vec<f64>,
    /// `None` when no speed model was available.
    pub speed: Option<Vec<f64>>,
    pub hybrid: Vec<f64>,
    pub weights: WeightVector,
    /// 0 when no speed model was used.
    pub speed_model_version: u64,
    pub speed_trained_on: Option<u64>,
    pub flags: ResultFlags,
    pub fit: Option<FitDiagnostics>,
}

fn origin_code(o: WeightOrigin) -> u8 {
    match o {
        WeightOrigin::Static => 0,
        WeightOrigin::Dynamic => 1,
        WeightOrigin::Fallback => 2,
    }
}

impl WindowResult {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn batch_rmse(&self) -> f64 {
        rmse(&self.truth, &self.batch).expect("lengths checked at construction")
    }

    pub fn speed_rmse(&self) -> Option<f64> {
        self.speed
            .as_ref()
            .map(|s| rmse(&self.truth, s).expect("lengths checked at construction"))
    }

    pub fn hybrid_rmse(&self) -> f64 {
        rmse(&self.truth, &self.hybrid).expect("lengths checked at construction")
    }

    /// Windows between the one the speed model was trained on and the one
    /// before this; 0 means the model came from the immediately preceding
    /// window.
    pub fn speed_staleness(&self) -> Option<u64> {
        self.speed_trained_on
            .map(|t| self.window_index.saturating_sub(t).saturating_sub(1))
    }

    pub fn lengths_consistent(&self) -> bool {
        let n = self.truth.len();
        self.batch.len() == n
            && self.hybrid.len() == n
            && self.speed.as_ref().is_none_or(|s| s.len() == n)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new(RESULT_MAGIC);
        e.u64(self.window_index).f64s(&self.truth).f64s(&self.batch);
        match &self.speed {
            Some(s) => e.u8(1).f64s(s),
            None => e.u8(0),
        };
        e.f64s(&self.hybrid)
            .f64s(self.weights.weights())
            .u8(origin_code(self.weights.origin))
            .u64(self.speed_model_version)
            .u64(self.speed_trained_on.unwrap_or(NONE_U64))
            .u8(self.flags.bits());
        match &self.fit {
            Some(f) => e
                .u8(1)
                .u64(f.fitting_window)
                .f64(f.hybrid_rmse)
                .f64(f.batch_rmse)
                .f64(f.speed_rmse)
                .u64(f.iterations),
            None => e.u8(0),
        };
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        let mut d = Decoder::new(bytes, RESULT_MAGIC, "window result")?;
        let bad = |m: &str| FabricError::Codec(format!("window result: {m}"));
        let window_index = d.u64()?;
        let truth = d.f64s()?;
        let batch = d.f64s()?;
        let speed = match d.u8()? {
            0 => None,
            1 => Some(d.f64s()?),
            _ => return Err(bad("bad speed marker")),
        };
        let hybrid = d.f64s()?;
        let weights = d.f64s()?;
        let origin = match d.u8()? {
            0 => WeightOrigin::Static,
            1 => WeightOrigin::Dynamic,
            2 => WeightOrigin::Fallback,
            _ => return Err(bad("bad weight origin")),
        };
        let weights =
            WeightVector::new(weights, origin, window_index).map_err(|e| bad(&e.to_string()))?;
        let speed_model_version = d.u64()?;
        let speed_trained_on = Some(d.u64()?).filter(|v| *v != NONE_U64);
        let flags = ResultFlags::from_bits(d.u8()?);
        let fit = match d.u8()? {
            0 => None,
            1 => Some(FitDiagnostics {
                fitting_window: d.u64()?,
                hybrid_rmse: d.f64()?,
                batch_rmse: d.f64()?,
                speed_rmse: d.f64()?,
                iterations: d.u64()?,
            }),
            _ => return Err(bad("bad fit marker")),
        };
        d.finish()?;
        let result = Self {
            window_index,
            truth,
            batch,
            speed,
            hybrid,
            weights,
            speed_model_version,
            speed_trained_on,
            flags,
            fit,
        };
        if !result.lengths_consistent() {
            return Err(bad("prediction lengths differ"));
        }
        Ok(result)
    }
}
