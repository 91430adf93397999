//! Scenario execution, output directory layout and resume.
//!
//! ```text
//! <out>/config.json    scenario config and its hash
//! <out>/store/         object store (models, archived data and results)
//! <out>/windows.csv, summary.json, best.csv, boxplot.csv, latency.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hybrid_core::timeseries::Series;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ScenarioConfig};
use super::data::scenario_series;
use super::report::{
    best_table, boxplots, emit, percentage_best, Conventions, Counters, FlagCounts, MeanRmse,
    ScenarioSummary, WindowReport, SCHEMA_VERSION,
};
use super::BenchError;
use crate::fabric::calibration::Calibration;
use crate::fabric::ledger::report_latency;
use crate::fabric::{LatencyLedger, ObjectStore};
use crate::pipeline::{
    run_session_with, SessionConfig, SessionOutcome, SessionResources, WindowResult,
};

const HYBRID_RESULTS_PREFIX: &str = "results/hybrid/";

#[derive(Debug)]
pub struct ScenarioReport {
    pub summary: ScenarioSummary,
    pub reports: Vec<WindowReport>,
    pub results: Vec<WindowResult>,
    pub ledger: LatencyLedger,
    /// Archived windows from an earlier run that were replayed and matched.
    pub resumed_windows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredConfig {
    config_hash: String,
    config: ScenarioConfig,
}

pub fn session_config(cfg: &ScenarioConfig, calibration: Calibration) -> SessionConfig {
    let mut s = SessionConfig::new(cfg.deployment, cfg.weighting, cfg.fidelity, cfg.seed);
    s.calibration = calibration;
    s.injection = cfg.injection();
    s.replay_rate = cfg.replay_rate;
    s.speed_init = cfg.speed_init;
    s.max_windows = Some(cfg.windows);
    s.bus.redelivery_probability = cfg.redelivery_probability;
    s.faults = cfg.faults.clone();
    s.clock = cfg.clock;
    s
}

/// SHA-256 over the scenario, the resolved calibration and, for CSV
/// input, the data file.
pub fn config_hash(cfg: &ScenarioConfig, calibration: &Calibration) -> Result<String, BenchError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).map_err(BenchError::runtime)?);
    h.update(calibration.to_toml_string().as_bytes());
    if let DataSource::Csv(path) = &cfg.data {
        let bytes = fs::read(path).map_err(|e| BenchError::Config {
            path: "data".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        h.update(bytes);
    }
    Ok(hex::encode(h.finalize()))
}

struct Prepared {
    session: SessionConfig,
    hash: String,
    historical: Series,
    stream: Series,
}

fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, BenchError> {
    cfg.validate()?;
    let calibration = cfg.resolve_calibration()?;
    let hash = config_hash(cfg, &calibration)?;
    let (historical, stream) = scenario_series(cfg)?;
    Ok(Prepared {
        session: session_config(cfg, calibration),
        hash,
        historical,
        stream,
    })
}

fn summarize(
    cfg: &ScenarioConfig,
    hash: String,
    outcome: SessionOutcome,
    resumed_windows: usize,
) -> ScenarioReport {
    let reports: Vec<WindowReport> = outcome
        .results
        .iter()
        .map(|r| WindowReport::from_result(r, &outcome.ledger))
        .collect();
    let latency = report_latency([(cfg.deployment.as_str(), &outcome.ledger)])
        .pop()
        .expect("one ledger in, one row out");
    let mut warnings = outcome.warnings;
    if reports.len() < cfg.windows {
        warnings.push(format!(
            "requested {} windows, stream produced {}",
            cfg.windows,
            reports.len()
        ));
    }
    let summary = ScenarioSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        config: cfg.clone(),
        conventions: Conventions::default(),
        windows: reports.len(),
        mean_rmse: MeanRmse::from_reports(&reports),
        best_reported: percentage_best(reports.iter().map(|r| r.best)),
        best_table: best_table(&outcome.results),
        boxplots: boxplots(&reports),
        solver_flags: FlagCounts::from_reports(&reports),
        latency,
        counters: Counters {
            windows_injected: outcome.windows_injected,
            messages_published: outcome.messages_published,
            deliveries: outcome.deliveries,
            redeliveries: outcome.redeliveries,
            speed_models_trained: outcome.speed_models_trained,
        },
        issues: outcome.issues,
        warnings,
    };
    ScenarioReport {
        summary,
        reports,
        results: outcome.results,
        ledger: outcome.ledger,
        resumed_windows,
    }
}

/// Runs a scenario against an in-memory store and writes nothing.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioReport, BenchError> {
    let p = prepare(cfg)?;
    let outcome = run_session_with(
        &p.session,
        &p.historical,
        &p.stream,
        SessionResources::in_memory(cfg.seed),
    )?;
    Ok(summarize(cfg, p.hash, outcome, 0))
}

fn stored_results(store: &ObjectStore) -> Result<BTreeMap<String, Vec<u8>>, BenchError> {
    store
        .list(HYBRID_RESULTS_PREFIX)
        .map_err(BenchError::runtime)?
        .into_iter()
        .map(|k| {
            let bytes = store.get_object(&k).map_err(BenchError::runtime)?;
            Ok((k, bytes))
        })
        .collect()
}

/// Runs a scenario and writes its reports under `out`.
///
/// With `resume`, the store left by an earlier run with the same config
/// hash is reused: trained models are loaded instead of retrained, and
/// every result archived earlier must be reproduced byte for byte.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out: &Path,
    resume: bool,
) -> Result<ScenarioReport, BenchError> {
    let p = prepare(cfg)?;
    let io =
        |path: &Path, e: std::io::Error| BenchError::Runtime(format!("{}: {e}", path.display()));
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let config_path = out.join("config.json");
    let store_dir: PathBuf = out.join("store");

    if resume {
        let text = fs::read_to_string(&config_path).map_err(|e| BenchError::Config {
            path: "resume".into(),
            message: format!("no earlier run in {}: {e}", out.display()),
        })?;
        let stored: StoredConfig = serde_json::from_str(&text).map_err(|e| BenchError::Config {
            path: "resume".into(),
            message: format!("{}: {e}", config_path.display()),
        })?;
        if stored.config_hash != p.hash {
            return Err(BenchError::Config {
                path: "resume".into(),
                message: format!(
                    "config hash {} differs from the earlier run's {}",
                    p.hash, stored.config_hash
                ),
            });
        }
    } else if store_dir.exists() {
        fs::remove_dir_all(&store_dir).map_err(|e| io(&store_dir, e))?;
    }

    let stored = StoredConfig {
        config_hash: p.hash.clone(),
        config: cfg.clone(),
    };
    let mut json = serde_json::to_string_pretty(&stored).map_err(BenchError::runtime)?;
    json.push('\n');
    fs::write(&config_path, json).map_err(|e| io(&config_path, e))?;

    let store = ObjectStore::in_directory(&store_dir, cfg.seed).map_err(BenchError::runtime)?;
    let earlier = if resume {
        stored_results(&store)?
    } else {
        BTreeMap::new()
    };
    let outcome = run_session_with(
        &p.session,
        &p.historical,
        &p.stream,
        SessionResources {
            store,
            reuse_artifacts: resume,
        },
    )?;
    let now = stored_results(&outcome.store)?;
    for (key, bytes) in &earlier {
        if now.get(key) != Some(bytes) {
            return Err(BenchError::Runtime(format!(
                "resumed run did not reproduce archived result `{key}`"
            )));
        }
    }
    let report = summarize(cfg, p.hash, outcome, earlier.len());
    emit(out, &report.reports, &report.summary)?;
    Ok(report)
}
