//! Store tokens and bus delivery under randomized schedules.

use std::collections::{BTreeMap, BTreeSet};

use hybrid_sim::fabric::{
    Bus, BusConfig, Calibration, Delivery, FabricError, NodeId, ObjectStore, SignedToken, Topology,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum TokenOp {
    Presign { key: u8, ttl: u16 },
    Fetch { token: usize },
    ForgeKey { token: usize, key: u8 },
    ForgeExpiry { token: usize, extra: u16 },
    Advance { ticks: u16 },
}

fn token_op() -> impl Strategy<Value = TokenOp> {
    prop_oneof![
        (0u8..4, 1u16..500).prop_map(|(key, ttl)| TokenOp::Presign { key, ttl }),
        (0usize..16).prop_map(|token| TokenOp::Fetch { token }),
        (0usize..16).prop_map(|token| TokenOp::Fetch { token }),
        (0usize..16, 0u8..4).prop_map(|(token, key)| TokenOp::ForgeKey { token, key }),
        (0usize..16, 1u16..1000).prop_map(|(token, extra)| TokenOp::ForgeExpiry { token, extra }),
        (1u16..300).prop_map(|ticks| TokenOp::Advance { ticks }),
    ]
}

fn key(k: u8) -> String {
    format!("models/speed/v{k:06}.bin")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn tokens_redeem_at_most_once(ops in prop::collection::vec(token_op(), 1..40), seed in any::<u64>()) {
        let mut store = ObjectStore::in_memory(seed);
        for k in 0..4 {
            store.put_object(&key(k), &[k]).unwrap();
        }
        let mut now = 0u64;
        let mut tokens: Vec<SignedToken> = Vec::new();
        let mut redeemed: BTreeSet<u64> = BTreeSet::new();
        for op in ops {
            match op {
                TokenOp::Presign { key: k, ttl } => tokens.push(store.presign(&key(k), ttl as u64, now).unwrap()),
                TokenOp::Advance { ticks } => now += ticks as u64,
                TokenOp::Fetch { token } => {
                    let Some(t) = tokens.get(token % tokens.len().max(1)).cloned() else { continue };
                    let res = store.fetch_with_token(&t, now);
                    let fresh = !redeemed.contains(&t.nonce) && now <= t.expires_at;
                    match res {
                        Ok(bytes) => {
                            prop_assert!(fresh, "redeemed a used or expired token");
                            prop_assert_eq!(bytes, store.get_object(&t.key).unwrap());
                            redeemed.insert(t.nonce);
                        }
                        Err(FabricError::TokenConsumed) => prop_assert!(redeemed.contains(&t.nonce)),
                        Err(FabricError::TokenExpired) => prop_assert!(now > t.expires_at),
                        Err(e) => prop_assert!(false, "unexpected {e}"),
                    }
                }
                TokenOp::ForgeKey { token, key: k } => {
                    let Some(mut t) = tokens.get(token % tokens.len().max(1)).cloned() else { continue };
                    if t.key == key(k) { continue }
                    t.key = key(k);
                    prop_assert_eq!(store.fetch_with_token(&t, now), Err(FabricError::UnknownToken));
                }
                TokenOp::ForgeExpiry { token, extra } => {
                    let Some(mut t) = tokens.get(token % tokens.len().max(1)).cloned() else { continue };
                    t.expires_at += extra as u64;
                    prop_assert_eq!(store.fetch_with_token(&t, now), Err(FabricError::UnknownToken));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum BusOp {
    Publish { from: usize, topic: usize },
    Partition { link: usize },
    Heal,
    Down { node: usize },
    Advance { ms: u16 },
}

const TOPICS: [&str; 4] = [
    "stream/window",
    "results/inference/batch",
    "results/inference/speed",
    "model/speed",
];
const FILTERS: [&str; 5] = [
    "stream/window",
    "results/inference/+",
    "results/inference/#",
    "model/speed",
    "#",
];

fn bus_op() -> impl Strategy<Value = BusOp> {
    prop_oneof![
        4 => (0usize..3, 0usize..4).prop_map(|(from, topic)| BusOp::Publish { from, topic }),
        1 => (0usize..8).prop_map(|link| BusOp::Partition { link }),
        1 => Just(BusOp::Heal),
        1 => (0usize..3).prop_map(|node| BusOp::Down { node }),
        1 => (1u16..5000).prop_map(|ms| BusOp::Advance { ms }),
    ]
}

fn fabric() -> (Topology, Vec<NodeId>) {
    let cal = Calibration::default();
    let topo = cal.topology().unwrap();
    let nodes = vec![
        cal.sites.edge.clone(),
        cal.sites.services.clone(),
        cal.sites.compute.clone(),
    ];
    (topo, nodes)
}

fn heal_all(topo: &mut Topology, nodes: &[NodeId]) {
    for n in nodes {
        topo.set_down(n, false).unwrap();
    }
    for l in topo.links().to_vec() {
        topo.set_partitioned(&l.a, &l.b, false).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Every (subscriber, matching message) pair gets exactly one original
    /// delivery once all faults heal, and per publisher the originals reach
    /// each subscriber in publication order.
    #[test]
    fn messages_are_conserved(ops in prop::collection::vec(bus_op(), 1..60), redelivery in 0.0..0.5f64, seed in any::<u64>()) {
        let (mut topo, nodes) = fabric();
        let mut bus = Bus::new(BusConfig { redelivery_probability: redelivery, seed });
        let subs: Vec<_> = FILTERS
            .iter()
            .enumerate()
            .map(|(i, f)| bus.subscribe(&topo, &nodes[i % 3], f).unwrap())
            .collect();
        let mut now = 0u64;
        let mut expected: BTreeSet<(usize, u64)> = BTreeSet::new();
        let mut delivered: Vec<Delivery> = Vec::new();
        for op in ops {
            match op {
                BusOp::Publish { from, topic } => {
                    let seq = bus.published();
                    for (i, f) in FILTERS.iter().enumerate() {
                        if hybrid_sim::fabric::TopicFilter::new(f).unwrap().matches(TOPICS[topic]) {
                            expected.insert((subs[i].0, seq));
                        }
                    }
                    delivered.extend(bus.publish(&topo, &nodes[from], TOPICS[topic], vec![0; 64], now).unwrap());
                }
                BusOp::Partition { link } => {
                    let l = topo.links()[link % topo.links().len()].clone();
                    topo.set_partitioned(&l.a, &l.b, true).unwrap();
                }
                BusOp::Down { node } => topo.set_down(&nodes[node], true).unwrap(),
                BusOp::Heal => {
                    heal_all(&mut topo, &nodes);
                    delivered.extend(bus.release(&topo, now).unwrap());
                }
                BusOp::Advance { ms } => now += ms as u64 * 1000,
            }
        }
        heal_all(&mut topo, &nodes);
        delivered.extend(bus.release(&topo, now).unwrap());
        prop_assert_eq!(bus.held_len(), 0);

        let originals: Vec<&Delivery> = delivered.iter().filter(|d| !d.redelivery).collect();
        let got: BTreeSet<(usize, u64)> = originals.iter().map(|d| (d.subscriber.0, d.message.seq)).collect();
        prop_assert_eq!(got.len(), originals.len(), "duplicate original delivery");
        prop_assert_eq!(got, expected);

        let mut last: BTreeMap<(NodeId, usize), (u64, u64)> = BTreeMap::new();
        let mut ordered = originals.clone();
        ordered.sort_by_key(|d| d.message.seq);
        for d in ordered {
            let k = (d.message.publisher.clone(), d.subscriber.0);
            if let Some(&(_, at)) = last.get(&k) {
                prop_assert!(d.deliver_at >= at, "publisher order violated");
            }
            last.insert(k, (d.message.seq, d.deliver_at));
        }
        for d in delivered.iter().filter(|d| d.redelivery) {
            prop_assert!(originals.iter().any(|o| o.subscriber == d.subscriber && o.message.seq == d.message.seq));
        }
    }
}
