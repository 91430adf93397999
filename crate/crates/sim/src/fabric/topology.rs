//! Nodes, links and routed transfer costs.
//!
//! A transfer between two nodes follows the lowest-latency path over the
//! declared links and is charged store-and-forward: every hop adds its
//! one-way latency plus `size / bandwidth`. Transfers within a node are free.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use hybrid_core::timeseries::Tick;
use serde::{Deserialize, Serialize};

use super::clock::{ms_to_ticks, TICKS_PER_SECOND};
use super::FabricError;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    /// Multiplier on calibrated operation cost; larger is slower.
    pub compute_factor: f64,
    pub memory_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ms: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl LinkSpec {
    pub fn transfer_ticks(&self, size: usize) -> Tick {
        let serialization = if self.bandwidth_bytes_per_s.is_finite() {
            (size as f64 / self.bandwidth_bytes_per_s * TICKS_PER_SECOND as f64).round() as Tick
        } else {
            0
        };
        ms_to_ticks(self.latency_ms) + serialization
    }

    fn joins(&self, x: &NodeId, y: &NodeId) -> bool {
        (&self.a == x && &self.b == y) || (&self.a == y && &self.b == x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: Vec<LinkSpec>,
    down: BTreeSet<NodeId>,
    partitioned: BTreeSet<(NodeId, NodeId)>,
}

fn pair(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> Result<Self, FabricError> {
        let mut map = BTreeMap::new();
        for n in nodes {
            if !(n.compute_factor > 0.0 && n.compute_factor.is_finite()) || n.memory_mb == 0 {
                return Err(FabricError::InvalidTopology(format!(
                    "node `{}` needs a positive compute factor and memory",
                    n.id
                )));
            }
            if map.insert(n.id.clone(), n.clone()).is_some() {
                return Err(FabricError::InvalidTopology(format!(
                    "duplicate node `{}`",
                    n.id
                )));
            }
        }
        for l in &links {
            for end in [&l.a, &l.b] {
                if !map.contains_key(end) {
                    return Err(FabricError::UnknownNode(end.clone()));
                }
            }
            if l.a == l.b {
                return Err(FabricError::InvalidTopology(format!(
                    "self-link on `{}`",
                    l.a
                )));
            }
            if l.latency_ms.is_nan()
                || l.latency_ms < 0.0
                || l.bandwidth_bytes_per_s.is_nan()
                || l.bandwidth_bytes_per_s <= 0.0
            {
                return Err(FabricError::InvalidTopology(format!(
                    "link {}-{} needs latency >= 0 and bandwidth > 0",
                    l.a, l.b
                )));
            }
        }
        Ok(Self {
            nodes: map,
            links,
            down: BTreeSet::new(),
            partitioned: BTreeSet::new(),
        })
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeSpec, FabricError> {
        self.nodes
            .get(id)
            .ok_or_else(|| FabricError::UnknownNode(id.clone()))
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Result<&mut NodeSpec, FabricError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| FabricError::UnknownNode(id.clone()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn is_up(&self, id: &NodeId) -> bool {
        !self.down.contains(id)
    }

    pub fn set_down(&mut self, id: &NodeId, down: bool) -> Result<(), FabricError> {
        self.node(id)?;
        if down {
            self.down.insert(id.clone());
        } else {
            self.down.remove(id);
        }
        Ok(())
    }

    pub fn set_partitioned(
        &mut self,
        a: &NodeId,
        b: &NodeId,
        partitioned: bool,
    ) -> Result<(), FabricError> {
        if !self.links.iter().any(|l| l.joins(a, b)) {
            return Err(FabricError::InvalidTopology(format!("no link {a}-{b}")));
        }
        if partitioned {
            self.partitioned.insert(pair(a, b));
        } else {
            self.partitioned.remove(&pair(a, b));
        }
        Ok(())
    }

    fn link_usable(&self, l: &LinkSpec) -> bool {
        !self.partitioned.contains(&pair(&l.a, &l.b))
    }

    /// Lowest-latency usable path, as the list of links traversed. Ties are
    /// broken by node order so routing is deterministic. `None` when the
    /// destination is unreachable or either endpoint is down.
    pub fn route(&self, from: &NodeId, to: &NodeId) -> Result<Option<Vec<&LinkSpec>>, FabricError> {
        self.node(from)?;
        self.node(to)?;
        if !self.is_up(from) || !self.is_up(to) {
            return Ok(None);
        }
        if from == to {
            return Ok(Some(Vec::new()));
        }
        let mut dist: BTreeMap<&NodeId, (f64, Option<usize>)> = BTreeMap::new();
        let mut done: BTreeSet<&NodeId> = BTreeSet::new();
        dist.insert(from, (0.0, None));
        loop {
            let current = dist
                .iter()
                .filter(|(n, _)| !done.contains(*n))
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(b.0)))
                .map(|(n, (d, _))| (*n, *d));
            let Some((node, d)) = current else {
                return Ok(None);
            };
            if node == to {
                break;
            }
            done.insert(node);
            for (i, l) in self.links.iter().enumerate() {
                if !self.link_usable(l) {
                    continue;
                }
                let next = if &l.a == node {
                    &l.b
                } else if &l.b == node {
                    &l.a
                } else {
                    continue;
                };
                // intermediate hops must be up to forward traffic
                if done.contains(next) || (!self.is_up(next) && next != to) {
                    continue;
                }
                let nd = d + l.latency_ms;
                let better = dist.get(next).is_none_or(|(old, _)| nd < *old);
                if better {
                    dist.insert(next, (nd, Some(i)));
                }
            }
        }
        let mut path = Vec::new();
        let mut at = to;
        while let Some((_, Some(i))) = dist.get(at) {
            let l = &self.links[*i];
            path.push(l);
            at = if &l.a == at { &l.b } else { &l.a };
        }
        path.reverse();
        Ok(Some(path))
    }

    /// Ticks to move `size` bytes from `from` to `to`, or `None` if the
    /// destination is currently unreachable.
    pub fn transfer_ticks(
        &self,
        from: &NodeId,
        to: &NodeId,
        size: usize,
    ) -> Result<Option<Tick>, FabricError> {
        Ok(self
            .route(from, to)?
            .map(|path| path.iter().map(|l| l.transfer_ticks(size)).sum()))
    }

    /// Computation ticks for an operation with `base_ms` calibrated cost on
    /// `node`.
    pub fn compute_ticks(&self, node: &NodeId, base_ms: f64) -> Result<Tick, FabricError> {
        Ok(ms_to_ticks(base_ms * self.node(node)?.compute_factor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn three_nodes() -> Topology {
        let node = |id: &str, role, f| NodeSpec {
            id: id.into(),
            role,
            compute_factor: f,
            memory_mb: 1024,
        };
        let link = |a: &str, b: &str, ms| LinkSpec {
            a: a.into(),
            b: b.into(),
            latency_ms: ms,
            bandwidth_bytes_per_s: 1_000_000.0,
        };
        Topology::new(
            vec![
                node("edge", NodeRole::Edge, 1.1),
                node("hub", NodeRole::Cloud, 1.0),
                node("vm", NodeRole::Cloud, 0.98),
            ],
            vec![link("edge", "hub", 50.0), link("hub", "vm", 20.0)],
        )
        .unwrap()
    }

    #[test]
    fn one_megabyte_over_one_megabyte_per_second() {
        let t = three_nodes();
        let ticks = t
            .transfer_ticks(&"edge".into(), &"hub".into(), 1_000_000)
            .unwrap();
        assert_eq!(ticks, Some(ms_to_ticks(1050.0)));
    }

    #[test]
    fn same_node_is_free() {
        let t = three_nodes();
        assert_eq!(
            t.transfer_ticks(&"vm".into(), &"vm".into(), 10_000)
                .unwrap(),
            Some(0)
        );
    }

    #[test]
    fn multi_hop_route_sums_links() {
        let t = three_nodes();
        let ticks = t.transfer_ticks(&"edge".into(), &"vm".into(), 0).unwrap();
        assert_eq!(ticks, Some(ms_to_ticks(70.0)));
    }

    #[test]
    fn partition_and_down_nodes_block_routes() {
        let mut t = three_nodes();
        t.set_partitioned(&"edge".into(), &"hub".into(), true)
            .unwrap();
        assert_eq!(
            t.transfer_ticks(&"edge".into(), &"vm".into(), 1).unwrap(),
            None
        );
        t.set_partitioned(&"edge".into(), &"hub".into(), false)
            .unwrap();
        t.set_down(&"hub".into(), true).unwrap();
        assert_eq!(
            t.transfer_ticks(&"edge".into(), &"vm".into(), 1).unwrap(),
            None
        );
        assert_eq!(
            t.transfer_ticks(&"edge".into(), &"hub".into(), 1).unwrap(),
            None
        );
    }

    #[test]
    fn compute_factor_scales_cost() {
        let t = three_nodes();
        assert_eq!(
            t.compute_ticks(&"edge".into(), 9000.0).unwrap(),
            ms_to_ticks(9900.0)
        );
    }

    #[test]
    fn unknown_node_rejected() {
        let t = three_nodes();
        assert!(matches!(
            t.transfer_ticks(&"nope".into(), &"vm".into(), 1),
            Err(FabricError::UnknownNode(_))
        ));
    }
}
