//! Module placement under the three deployment presets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::topology::{NodeId, Topology};
use super::FabricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    DataInjection,
    BatchInference,
    SpeedInference,
    HybridInference,
    ModelSync,
    DataSync,
    SpeedTraining,
    DataArchiving,
    PredictionArchiving,
}

impl Module {
    /// Placement order; capacity is consumed in this order, so the module
    /// named in an out-of-memory error is the first that does not fit.
    pub const ALL: [Module; 9] = [
        Module::DataInjection,
        Module::BatchInference,
        Module::SpeedInference,
        Module::HybridInference,
        Module::ModelSync,
        Module::DataSync,
        Module::SpeedTraining,
        Module::DataArchiving,
        Module::PredictionArchiving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Module::DataInjection => "data_injection",
            Module::BatchInference => "batch_inference",
            Module::SpeedInference => "speed_inference",
            Module::HybridInference => "hybrid_inference",
            Module::ModelSync => "model_sync",
            Module::DataSync => "data_sync",
            Module::SpeedTraining => "speed_training",
            Module::DataArchiving => "data_archiving",
            Module::PredictionArchiving => "prediction_archiving",
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "edge", alias = "edge-centric")]
    EdgeCentric,
    #[serde(rename = "cloud", alias = "cloud-centric")]
    CloudCentric,
    #[serde(rename = "edge-cloud")]
    EdgeCloud,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::EdgeCentric, Preset::CloudCentric, Preset::EdgeCloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::EdgeCentric => "edge",
            Preset::CloudCentric => "cloud",
            Preset::EdgeCloud => "edge-cloud",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge" | "edge-centric" => Ok(Preset::EdgeCentric),
            "cloud" | "cloud-centric" => Ok(Preset::CloudCentric),
            "edge-cloud" => Ok(Preset::EdgeCloud),
            other => Err(format!(
                "unknown deployment `{other}` (expected edge, cloud or edge-cloud)"
            )),
        }
    }
}

/// The three kinds of location a preset assigns modules to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sites {
    /// On-premise device next to the sensors.
    pub edge: NodeId,
    /// Cloud virtual machine for training and cloud-side inference.
    pub compute: NodeId,
    /// Serverless tier hosting the broker rules, handlers and object store.
    pub services: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub preset: Preset,
    pub placement: BTreeMap<Module, NodeId>,
    pub services: NodeId,
}

impl DeploymentPlan {
    pub fn node_of(&self, module: Module) -> &NodeId {
        &self.placement[&module]
    }

    /// Where the speed-training handler receives windows: the serverless
    /// tier when training runs in the cloud, the training node otherwise.
    pub fn training_dispatch(&self, topo: &Topology) -> Result<NodeId, FabricError> {
        let trainer = self.node_of(Module::SpeedTraining);
        Ok(match topo.node(trainer)?.role {
            super::topology::NodeRole::Cloud => self.services.clone(),
            super::topology::NodeRole::Edge => trainer.clone(),
        })
    }
}

fn preset_site(preset: Preset, module: Module, sites: &Sites) -> NodeId {
    use Module::*;
    let site = match (preset, module) {
        (_, DataArchiving | PredictionArchiving) => &sites.services,
        (_, DataInjection) => &sites.edge,
        (Preset::EdgeCentric, _) => &sites.edge,
        (Preset::CloudCentric, _) => &sites.compute,
        (Preset::EdgeCloud, SpeedTraining) => &sites.compute,
        (Preset::EdgeCloud, _) => &sites.edge,
    };
    site.clone()
}

/// Assigns every module to a node and checks memory. A module whose
/// footprint exceeds its node's remaining capacity fails placement.
pub fn place(
    preset: Preset,
    topo: &Topology,
    sites: &Sites,
    footprints_mb: &BTreeMap<Module, u64>,
) -> Result<DeploymentPlan, FabricError> {
    for n in [&sites.edge, &sites.compute, &sites.services] {
        topo.node(n)?;
    }
    let mut remaining: BTreeMap<NodeId, u64> =
        topo.nodes().map(|n| (n.id.clone(), n.memory_mb)).collect();
    let mut placement = BTreeMap::new();
    for module in Module::ALL {
        let node = preset_site(preset, module, sites);
        let required = footprints_mb.get(&module).copied().unwrap_or(0);
        let free = remaining.get_mut(&node).expect("node checked above");
        if required > *free {
            return Err(FabricError::OutOfMemory {
                module,
                node,
                required_mb: required,
                available_mb: *free,
            });
        }
        *free -= required;
        placement.insert(module, node);
    }
    Ok(DeploymentPlan {
        preset,
        placement,
        services: sites.services.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::topology::{NodeRole, NodeSpec};
    use super::*;

    fn topo(edge_mb: u64) -> Topology {
        let node = |id: &str, role, mb| NodeSpec {
            id: id.into(),
            role,
            compute_factor: 1.0,
            memory_mb: mb,
        };
        Topology::new(
            vec![
                node("pi", NodeRole::Edge, edge_mb),
                node("vm", NodeRole::Cloud, 32_768),
                node("svc", NodeRole::Cloud, 3_008),
            ],
            vec![],
        )
        .unwrap()
    }

    fn sites() -> Sites {
        Sites {
            edge: "pi".into(),
            compute: "vm".into(),
            services: "svc".into(),
        }
    }

    fn footprints() -> BTreeMap<Module, u64> {
        let mut f: BTreeMap<Module, u64> = Module::ALL.iter().map(|m| (*m, 200)).collect();
        f.insert(Module::SpeedTraining, 3_000);
        f
    }

    #[test]
    fn edge_cloud_splits_inference_and_training() {
        let plan = place(Preset::EdgeCloud, &topo(4096), &sites(), &footprints()).unwrap();
        for m in [
            Module::BatchInference,
            Module::SpeedInference,
            Module::HybridInference,
            Module::ModelSync,
            Module::DataSync,
        ] {
            assert_eq!(plan.node_of(m).as_str(), "pi");
        }
        assert_eq!(plan.node_of(Module::SpeedTraining).as_str(), "vm");
        assert_eq!(plan.node_of(Module::DataArchiving).as_str(), "svc");
        assert_eq!(plan.training_dispatch(&topo(4096)).unwrap().as_str(), "svc");
    }

    #[test]
    fn cloud_centric_leaves_only_injection_on_edge() {
        let plan = place(Preset::CloudCentric, &topo(4096), &sites(), &footprints()).unwrap();
        let on_edge: Vec<Module> = plan
            .placement
            .iter()
            .filter(|(_, n)| n.as_str() == "pi")
            .map(|(m, _)| *m)
            .collect();
        assert_eq!(on_edge, vec![Module::DataInjection]);
    }

    #[test]
    fn edge_centric_training_runs_out_of_memory() {
        match place(Preset::EdgeCentric, &topo(4096), &sites(), &footprints()) {
            Err(FabricError::OutOfMemory { module, node, .. }) => {
                assert_eq!(module, Module::SpeedTraining);
                assert_eq!(node.as_str(), "pi");
            }
            other => panic!("{other:?}"),
        }
        let plan = place(Preset::EdgeCentric, &topo(8192), &sites(), &footprints()).unwrap();
        assert_eq!(plan.training_dispatch(&topo(8192)).unwrap().as_str(), "pi");
    }

    #[test]
    fn every_module_placed_once() {
        for p in Preset::ALL {
            let plan = place(p, &topo(8192), &sites(), &footprints()).unwrap();
            assert_eq!(plan.placement.len(), Module::ALL.len());
        }
    }

    #[test]
    fn preset_names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("fog".parse::<Preset>().is_err());
    }
}
