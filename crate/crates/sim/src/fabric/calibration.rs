//! Topology and cost calibration loaded from TOML.
//!
//! The shipped defaults live in `calibration/default.toml`; a custom file
//! uses the same keys (`nodes`, `links`, `sites`, `costs`, `footprints_mb`,
//! `token_ttl_ms`).

use std::collections::BTreeMap;
use std::path::Path;

use hybrid_core::timeseries::Tick;
use serde::{Deserialize, Serialize};

use super::clock::ms_to_ticks;
use super::placement::{Module, Sites};
use super::topology::{LinkSpec, NodeId, NodeSpec, Topology};
use super::FabricError;

pub const DEFAULT_CALIBRATION: &str = include_str!("../../calibration/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpCost {
    pub base_ms: f64,
    #[serde(default)]
    pub per_record_ms: f64,
    #[serde(default)]
    pub per_iteration_ms: f64,
}

impl OpCost {
    pub fn ms(&self, records: usize, iterations: usize) -> f64 {
        self.base_ms
            + self.per_record_ms * records as f64
            + self.per_iteration_ms * iterations as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Costs {
    pub batch_inference: OpCost,
    pub speed_inference: OpCost,
    pub combine: OpCost,
    /// Dynamic weight fitting; charged on top of `combine`.
    pub weight_fit: OpCost,
    pub speed_training: OpCost,
    pub model_sync: OpCost,
    pub data_sync: OpCost,
    pub archiving: OpCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub token_ttl_ms: f64,
    pub sites: Sites,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub costs: Costs,
    pub footprints_mb: BTreeMap<Module, u64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CALIBRATION).expect("shipped calibration parses")
    }
}

impl Calibration {
    pub fn from_toml_str(text: &str) -> Result<Self, FabricError> {
        let cal: Calibration =
            toml::from_str(text).map_err(|e| FabricError::Calibration(e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FabricError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    fn validate(&self) -> Result<(), FabricError> {
        let topo = self.topology()?;
        for (key, n) in [
            ("sites.edge", &self.sites.edge),
            ("sites.compute", &self.sites.compute),
            ("sites.services", &self.sites.services),
        ] {
            topo.node(n)
                .map_err(|_| FabricError::Calibration(format!("{key}: unknown node `{n}`")))?;
        }
        if self.token_ttl_ms.is_nan() || self.token_ttl_ms <= 0.0 {
            return Err(FabricError::Calibration(
                "token_ttl_ms: must be positive".into(),
            ));
        }
        let costs = [
            ("batch_inference", &self.costs.batch_inference),
            ("speed_inference", &self.costs.speed_inference),
            ("combine", &self.costs.combine),
            ("weight_fit", &self.costs.weight_fit),
            ("speed_training", &self.costs.speed_training),
            ("model_sync", &self.costs.model_sync),
            ("data_sync", &self.costs.data_sync),
            ("archiving", &self.costs.archiving),
        ];
        for (key, c) in costs {
            let fields = [c.base_ms, c.per_record_ms, c.per_iteration_ms];
            if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(FabricError::Calibration(format!(
                    "costs.{key}: values must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, FabricError> {
        Topology::new(self.nodes.clone(), self.links.clone())
    }

    pub fn token_ttl(&self) -> Tick {
        ms_to_ticks(self.token_ttl_ms)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }
}
