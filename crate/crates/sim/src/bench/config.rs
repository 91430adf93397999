//! Scenario configuration: defaults, TOML loading and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hybrid_core::forecaster::Fidelity;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::fabric::calibration::Calibration;
use crate::fabric::Preset;
use crate::pipeline::injector::{CloseRule, InjectionConfig};
use crate::pipeline::session::{ClockMode, FaultSchedule, SpeedInit};
use crate::pipeline::WeightingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    None,
    Gradual,
    Abrupt,
}

impl DriftKind {
    pub const ALL: [DriftKind; 3] = [DriftKind::None, DriftKind::Gradual, DriftKind::Abrupt];

    pub fn as_str(self) -> &'static str {
        match self {
            DriftKind::None => "none",
            DriftKind::Gradual => "gradual",
            DriftKind::Abrupt => "abrupt",
        }
    }
}

impl fmt::Display for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DriftKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DriftKind::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected none, gradual or abrupt)"))
    }
}

/// Where the base series comes from: the synthetic turbine signal or a
/// CSV file with the turbine column layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DataSource {
    Synth,
    Csv(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synth => f.write_str("synth"),
            DataSource::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" => Err("empty data source".into()),
            "synth" => Ok(DataSource::Synth),
            path => Ok(DataSource::Csv(PathBuf::from(path))),
        }
    }
}

impl TryFrom<String> for DataSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DataSource> for String {
    fn from(d: DataSource) -> Self {
        d.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub drift: DriftKind,
    pub deployment: Preset,
    pub weighting: WeightingMode,
    pub windows: usize,
    pub window: CloseRule,
    pub min_records: usize,
    pub fidelity: Fidelity,
    pub seed: u64,
    pub data: DataSource,
    /// Length of the synthetic base series.
    pub records: usize,
    /// Fraction of the series used as historical data.
    pub split: f64,
    /// Stream replay rate in records per second.
    pub replay_rate: f64,
    /// Extra Gaussian noise added by the drift generator.
    pub drift_noise: f64,
    /// Change points of the abrupt-drift switching process.
    pub change_points: usize,
    pub speed_init: SpeedInit,
    /// Calibration file; the shipped defaults when absent.
    pub calibration: Option<PathBuf>,
    /// Overrides the edge node's memory.
    pub edge_memory_mb: Option<u64>,
    pub redelivery_probability: f64,
    pub clock: ClockMode,
    pub faults: FaultSchedule,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            drift: DriftKind::Gradual,
            deployment: Preset::EdgeCloud,
            weighting: WeightingMode::Dynamic,
            windows: 100,
            window: CloseRule::Duration { seconds: 30.0 },
            min_records: 200,
            fidelity: Fidelity::Desk,
            seed: 0,
            data: DataSource::Synth,
            records: 50_000,
            split: 0.4,
            replay_rate: 7.0,
            drift_noise: 0.0,
            change_points: 6,
            speed_init: SpeedInit::Latest,
            calibration: None,
            edge_memory_mb: None,
            redelivery_probability: 0.0,
            clock: ClockMode::Simulated,
            faults: FaultSchedule::default(),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> BenchError {
    BenchError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid("<file>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(
                if path == "." { "<file>" } else { &path },
                e.inner().message().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn injection(&self) -> InjectionConfig {
        let min_records = match self.window {
            CloseRule::Count { records } => records.min(self.min_records),
            CloseRule::Duration { .. } => self.min_records,
        };
        InjectionConfig {
            close_rule: self.window,
            min_records,
            buffer_capacity: (min_records * 8).max(10_000),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.windows == 0 {
            return Err(invalid("windows", "must be at least 1"));
        }
        if let WeightingMode::Static { speed, batch } = self.weighting {
            hybrid_core::weighting::static_weights(speed, batch)
                .map_err(|e| invalid("weighting", e.to_string()))?;
        }
        self.injection()
            .validate()
            .map_err(|e| invalid("window", e.to_string()))?;
        if self.min_records == 0 {
            return Err(invalid("min_records", "must be at least 1"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(invalid("split", "must lie strictly between 0 and 1"));
        }
        if !(self.replay_rate > 0.0 && self.replay_rate.is_finite()) {
            return Err(invalid("replay_rate", "must be positive"));
        }
        if !(self.drift_noise >= 0.0 && self.drift_noise.is_finite()) {
            return Err(invalid("drift_noise", "must be finite and non-negative"));
        }
        if self.records < 2 {
            return Err(invalid("records", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.redelivery_probability) {
            return Err(invalid("redelivery_probability", "must lie in [0, 1]"));
        }
        if self.edge_memory_mb == Some(0) {
            return Err(invalid("edge_memory_mb", "must be positive"));
        }
        if let ClockMode::Wall { time_scale } = self.clock {
            if !(time_scale > 0.0 && time_scale.is_finite()) {
                return Err(invalid("clock.time_scale", "must be positive"));
            }
        }
        for (i, o) in self.faults.outages.iter().enumerate() {
            if !(o.start_s >= 0.0 && o.end_s > o.start_s) {
                return Err(invalid(
                    &format!("faults.outages[{i}]"),
                    "needs 0 <= start_s < end_s",
                ));
            }
        }
        for (i, p) in self.faults.partitions.iter().enumerate() {
            if !(p.start_s >= 0.0 && p.end_s > p.start_s) {
                return Err(invalid(
                    &format!("faults.partitions[{i}]"),
                    "needs 0 <= start_s < end_s",
                ));
            }
        }
        Ok(())
    }

    /// The calibration in effect, with the edge memory override applied.
    pub fn resolve_calibration(&self) -> Result<Calibration, BenchError> {
        let mut cal = match &self.calibration {
            Some(p) => Calibration::load(p).map_err(|e| invalid("calibration", e.to_string()))?,
            None => Calibration::default(),
        };
        if let Some(mb) = self.edge_memory_mb {
            let edge = cal.sites.edge.clone();
            cal.node_mut(&edge)
                .ok_or_else(|| invalid("edge_memory_mb", "calibration has no edge node"))?
                .memory_mb = mb;
        }
        let topo = cal
            .topology()
            .map_err(|e| invalid("calibration", e.to_string()))?;
        for (i, o) in self.faults.outages.iter().enumerate() {
            topo.node(&o.node)
                .map_err(|e| invalid(&format!("faults.outages[{i}].node"), e.to_string()))?;
        }
        for (i, p) in self.faults.partitions.iter().enumerate() {
            for (key, n) in [("a", &p.a), ("b", &p.b)] {
                topo.node(n).map_err(|e| {
                    invalid(&format!("faults.partitions[{i}].{key}"), e.to_string())
                })?;
            }
        }
        Ok(cal)
    }

    /// Directory-friendly name such as `gradual-edge-cloud-dynamic-s0`.
    pub fn slug(&self) -> String {
        format!(
            "{}-{}-{}-s{}",
            self.drift,
            self.deployment,
            self.weighting.label(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(e: BenchError) -> String {
        match e {
            BenchError::Config { path, .. } => path,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ScenarioConfig {
            drift: DriftKind::Abrupt,
            weighting: WeightingMode::Static {
                speed: 0.3,
                batch: 0.7,
            },
            window: CloseRule::Count { records: 200 },
            edge_memory_mb: Some(8192),
            ..Default::default()
        };
        assert_eq!(
            ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
            cfg
        );
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str("drift = \"none\"\nwindows = 3\n").unwrap();
        assert_eq!(cfg.drift, DriftKind::None);
        assert_eq!(cfg.windows, 3);
        assert_eq!(cfg.records, 50_000);
    }

    #[test]
    fn errors_carry_key_paths() {
        let e = ScenarioConfig::from_toml_str("weighting = \"static:0.3:0.9\"").unwrap_err();
        assert_eq!(path_of(e), "weighting");
        let e = ScenarioConfig::from_toml_str("windows = 0").unwrap_err();
        assert_eq!(path_of(e), "windows");
        let e = ScenarioConfig::from_toml_str(
            "[faults]\n[[faults.outages]]\nnode = \"x\"\nstart_s = 5.0\nend_s = \"late\"\n",
        )
        .unwrap_err();
        assert_eq!(path_of(e), "faults.outages[0].end_s");
        let e = ScenarioConfig::from_toml_str("colour = 1").unwrap_err();
        assert!(matches!(e, BenchError::Config { .. }));
        let e = ScenarioConfig::from_toml_str("split = 1.5").unwrap_err();
        assert_eq!(path_of(e), "split");
    }

    #[test]
    fn unknown_fault_node_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.faults.outages.push(crate::pipeline::session::Outage {
            node: "mars".into(),
            start_s: 0.0,
            end_s: 1.0,
        });
        assert_eq!(
            path_of(cfg.resolve_calibration().unwrap_err()),
            "faults.outages[0].node"
        );
    }

    #[test]
    fn edge_memory_override_applies() {
        let cfg = ScenarioConfig {
            edge_memory_mb: Some(8192),
            ..Default::default()
        };
        let cal = cfg.resolve_calibration().unwrap();
        let edge = cal.sites.edge.clone();
        assert_eq!(
            cal.nodes.iter().find(|n| n.id == edge).unwrap().memory_mb,
            8192
        );
    }

    #[test]
    fn data_source_parses() {
        assert_eq!("synth".parse::<DataSource>().unwrap(), DataSource::Synth);
        assert_eq!(
            "data/t.csv".parse::<DataSource>().unwrap(),
            DataSource::Csv(PathBuf::from("data/t.csv"))
        );
    }
}
