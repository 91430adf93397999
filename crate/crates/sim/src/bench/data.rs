//! Scenario data: base series, drift, historical/stream split.

use hybrid_core::drift::{
    abrupt_drift, gradual_drift, synth_base, BaseSignalConfig, DriftConfig, LambdaProcess,
};
use hybrid_core::series_csv::{load_csv, CsvSchema};
use hybrid_core::timeseries::{split, Series};

use super::config::{DataSource, DriftKind, ScenarioConfig};
use super::BenchError;

/// Offset separating the drift noise seed from the base-signal seed.
const DRIFT_SEED_OFFSET: u64 = 0x5eed_d41f;

pub fn base_series(cfg: &ScenarioConfig) -> Result<Series, BenchError> {
    match &cfg.data {
        DataSource::Synth => Ok(synth_base(&BaseSignalConfig::turbine(
            cfg.records,
            cfg.seed,
        ))),
        DataSource::Csv(path) => {
            load_csv(path, &CsvSchema::turbine()).map_err(|e| BenchError::Config {
                path: "data".into(),
                message: format!("{}: {e}", path.display()),
            })
        }
    }
}

/// Applies the configured drift to the whole series. Drift accumulates
/// over the full record index, so the stream continues the trend that the
/// historical part already shows.
pub fn drifted(base: &Series, cfg: &ScenarioConfig) -> Series {
    let drift_cfg = || {
        DriftConfig::spanning_range(
            base,
            cfg.drift_noise,
            cfg.seed.wrapping_add(DRIFT_SEED_OFFSET),
        )
    };
    match cfg.drift {
        DriftKind::None => base.clone(),
        DriftKind::Gradual => gradual_drift(base, &drift_cfg()),
        DriftKind::Abrupt => abrupt_drift(
            base,
            &drift_cfg().with_lambda(LambdaProcess::on_off(cfg.change_points)),
        ),
    }
}

/// Historical and stream parts of the scenario series.
pub fn scenario_series(cfg: &ScenarioConfig) -> Result<(Series, Series), BenchError> {
    let series = drifted(&base_series(cfg)?, cfg);
    split(&series, cfg.split).map_err(|e| BenchError::Config {
        path: "split".into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(drift: DriftKind) -> ScenarioConfig {
        ScenarioConfig {
            drift,
            records: 2000,
            ..Default::default()
        }
    }

    #[test]
    fn split_sizes() {
        let (h, s) = scenario_series(&cfg(DriftKind::None)).unwrap();
        assert_eq!(h.len(), 800);
        assert_eq!(s.len(), 1200);
    }

    #[test]
    fn drift_changes_stream_only_by_trend() {
        let (_, none) = scenario_series(&cfg(DriftKind::None)).unwrap();
        let (_, grad) = scenario_series(&cfg(DriftKind::Gradual)).unwrap();
        let t = none.target_index();
        let d0 = grad.records()[0].values[t] - none.records()[0].values[t];
        let dn =
            grad.records().last().unwrap().values[t] - none.records().last().unwrap().values[t];
        assert!(d0 > 0.0 && dn > d0);
    }

    #[test]
    fn abrupt_has_flat_segments() {
        let base = base_series(&cfg(DriftKind::None)).unwrap();
        let abrupt = drifted(&base, &cfg(DriftKind::Abrupt));
        let t = base.target_index();
        let unchanged = base
            .records()
            .iter()
            .zip(abrupt.records())
            .filter(|(a, b)| a.values[t] == b.values[t])
            .count();
        assert!(unchanged > 0 && unchanged < base.len());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = scenario_series(&cfg(DriftKind::Abrupt)).unwrap();
        let b = scenario_series(&cfg(DriftKind::Abrupt)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_csv_is_config_error() {
        let c = ScenarioConfig {
            data: DataSource::Csv("/nonexistent/x.csv".into()),
            ..Default::default()
        };
        assert!(matches!(base_series(&c), Err(BenchError::Config { .. })));
    }
}
