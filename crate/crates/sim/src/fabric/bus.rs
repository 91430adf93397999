//! Topic-based publish/subscribe with MQTT-style filters.
//!
//! Delivery is at-least-once: every matching subscriber receives each
//! message one or more times (seeded redelivery), so consumers must be
//! idempotent. Messages from one publisher reach a given subscriber in
//! publication order. When a subscriber is unreachable (node down or link
//! partitioned) its messages are held and released in order on heal.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use hybrid_core::timeseries::Tick;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::topology::{NodeId, Topology};
use super::FabricError;

/// A subscription filter: `/`-separated levels, `+` matches one level,
/// a trailing `#` matches any remainder including none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter(String);

impl TopicFilter {
    pub fn new(filter: &str) -> Result<Self, FabricError> {
        let levels: Vec<&str> = filter.split('/').collect();
        let bad = filter.is_empty()
            || levels.iter().enumerate().any(|(i, l)| {
                (l.contains('#') && (*l != "#" || i + 1 != levels.len()))
                    || (l.contains('+') && *l != "+")
            });
        if bad {
            return Err(FabricError::InvalidTopic(filter.to_string()));
        }
        Ok(Self(filter.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut f = self.0.split('/');
        let mut t = topic.split('/');
        loop {
            match (f.next(), t.next()) {
                (Some("#"), _) => return true,
                (Some("+"), Some(_)) => {}
                (Some(a), Some(b)) if a == b => {}
                (None, None) => return true,
                _ => return false,
            }
        }
    }
}

pub fn validate_topic(topic: &str) -> Result<(), FabricError> {
    if topic.is_empty() || topic.contains(['+', '#']) {
        return Err(FabricError::InvalidTopic(topic.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriberId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub publisher: NodeId,
    pub topic: String,
    pub payload: Vec<u8>,
    pub published_at: Tick,
    /// Bus-wide publication counter.
    pub seq: u64,
}

impl Message {
    pub fn size(&self) -> usize {
        self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub subscriber: SubscriberId,
    pub node: NodeId,
    pub message: Arc<Message>,
    pub deliver_at: Tick,
    /// Transfer time charged to this delivery.
    pub communication: Tick,
    pub redelivery: bool,
}

#[derive(Debug, Clone)]
struct Subscription {
    node: NodeId,
    filter: TopicFilter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusConfig {
    /// Probability that a delivery is followed by a duplicate.
    pub redelivery_probability: f64,
    pub seed: u64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            redelivery_probability: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct Bus {
    subscriptions: Vec<Subscription>,
    held: VecDeque<(SubscriberId, Arc<Message>)>,
    last_delivery: BTreeMap<(NodeId, SubscriberId), Tick>,
    next_seq: u64,
    rng: ChaCha8Rng,
    redelivery_probability: f64,
}

impl Bus {
    pub fn new(config: BusConfig) -> Self {
        Self {
            subscriptions: Vec::new(),
            held: VecDeque::new(),
            last_delivery: BTreeMap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            redelivery_probability: config.redelivery_probability.clamp(0.0, 1.0),
        }
    }

    pub fn subscribe(
        &mut self,
        topo: &Topology,
        node: &NodeId,
        filter: &str,
    ) -> Result<SubscriberId, FabricError> {
        topo.node(node)?;
        let filter = TopicFilter::new(filter)?;
        self.subscriptions.push(Subscription {
            node: node.clone(),
            filter,
        });
        Ok(SubscriberId(self.subscriptions.len() - 1))
    }

    pub fn subscriber_node(&self, id: SubscriberId) -> Option<&NodeId> {
        self.subscriptions.get(id.0).map(|s| &s.node)
    }

    pub fn held_len(&self) -> usize {
        self.held.len()
    }

    pub fn published(&self) -> u64 {
        self.next_seq
    }

    pub fn publish(
        &mut self,
        topo: &Topology,
        from: &NodeId,
        topic: &str,
        payload: Vec<u8>,
        now: Tick,
    ) -> Result<Vec<Delivery>, FabricError> {
        topo.node(from)?;
        validate_topic(topic)?;
        let message = Arc::new(Message {
            publisher: from.clone(),
            topic: topic.to_string(),
            payload,
            published_at: now,
            seq: self.next_seq,
        });
        self.next_seq += 1;
        let blocked: BTreeSet<SubscriberId> = self
            .held
            .iter()
            .filter(|(_, m)| &m.publisher == from)
            .map(|(s, _)| *s)
            .collect();
        let targets: Vec<SubscriberId> = self
            .subscriptions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.filter.matches(topic))
            .map(|(i, _)| SubscriberId(i))
            .collect();
        let mut out = Vec::new();
        for sub in targets {
            if blocked.contains(&sub) || !self.try_deliver(topo, sub, &message, now, &mut out)? {
                self.held.push_back((sub, Arc::clone(&message)));
            }
        }
        Ok(out)
    }

    /// Re-examines held messages after a topology change and delivers the
    /// ones that became reachable, preserving per-publisher order.
    pub fn release(&mut self, topo: &Topology, now: Tick) -> Result<Vec<Delivery>, FabricError> {
        let mut out = Vec::new();
        let mut still_held = VecDeque::new();
        let mut blocked: BTreeSet<(NodeId, SubscriberId)> = BTreeSet::new();
        while let Some((sub, msg)) = self.held.pop_front() {
            let key = (msg.publisher.clone(), sub);
            if blocked.contains(&key) || !self.try_deliver(topo, sub, &msg, now, &mut out)? {
                blocked.insert(key);
                still_held.push_back((sub, msg));
            }
        }
        self.held = still_held;
        Ok(out)
    }

    fn try_deliver(
        &mut self,
        topo: &Topology,
        sub: SubscriberId,
        message: &Arc<Message>,
        now: Tick,
        out: &mut Vec<Delivery>,
    ) -> Result<bool, FabricError> {
        let node = self.subscriptions[sub.0].node.clone();
        let Some(cost) = topo.transfer_ticks(&message.publisher, &node, message.size())? else {
            return Ok(false);
        };
        let key = (message.publisher.clone(), sub);
        let floor = self.last_delivery.get(&key).copied().unwrap_or(0);
        let deliver_at = (now + cost).max(floor);
        out.push(Delivery {
            subscriber: sub,
            node: node.clone(),
            message: Arc::clone(message),
            deliver_at,
            communication: cost,
            redelivery: false,
        });
        let mut last = deliver_at;
        if self.redelivery_probability > 0.0 && self.rng.random_bool(self.redelivery_probability) {
            last = deliver_at + cost.max(1);
            out.push(Delivery {
                subscriber: sub,
                node,
                message: Arc::clone(message),
                deliver_at: last,
                communication: cost,
                redelivery: true,
            });
        }
        self.last_delivery.insert(key, last);
        Ok(true)
    }
}
