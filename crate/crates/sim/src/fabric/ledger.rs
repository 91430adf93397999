//! Per-window, per-phase latency accounting.

use std::collections::BTreeMap;
use std::fmt;

use hybrid_core::timeseries::Tick;
use serde::{Deserialize, Serialize};

use super::clock::ticks_to_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SpeedInference,
    BatchInference,
    HybridInference,
    SpeedTraining,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::SpeedInference,
        Phase::BatchInference,
        Phase::HybridInference,
        Phase::SpeedTraining,
    ];

    pub const INFERENCE: [Phase; 3] = [
        Phase::SpeedInference,
        Phase::BatchInference,
        Phase::HybridInference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SpeedInference => "speed_inference",
            Phase::BatchInference => "batch_inference",
            Phase::HybridInference => "hybrid_inference",
            Phase::SpeedTraining => "speed_training",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLatency {
    pub computation: Tick,
    pub communication: Tick,
}

impl PhaseLatency {
    pub fn total(&self) -> Tick {
        self.computation + self.communication
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyLedger {
    windows: BTreeMap<u64, BTreeMap<Phase, PhaseLatency>>,
}

impl LatencyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&mut self, window: u64, phase: Phase) -> &mut PhaseLatency {
        self.windows
            .entry(window)
            .or_default()
            .entry(phase)
            .or_default()
    }

    pub fn add_computation(&mut self, window: u64, phase: Phase, ticks: Tick) {
        self.entry(window, phase).computation += ticks;
    }

    pub fn add_communication(&mut self, window: u64, phase: Phase, ticks: Tick) {
        self.entry(window, phase).communication += ticks;
    }

    pub fn get(&self, window: u64, phase: Phase) -> Option<PhaseLatency> {
        self.windows
            .get(&window)
            .and_then(|m| m.get(&phase))
            .copied()
    }

    pub fn window(&self, window: u64) -> BTreeMap<Phase, PhaseLatency> {
        self.windows.get(&window).cloned().unwrap_or_default()
    }

    pub fn window_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.windows.keys().copied()
    }

    /// Mean computation and communication of `phase` over the windows that
    /// recorded it, in milliseconds.
    pub fn average_ms(&self, phase: Phase) -> Option<PhaseAverage> {
        let entries: Vec<PhaseLatency> = self
            .windows
            .values()
            .filter_map(|m| m.get(&phase))
            .copied()
            .collect();
        if entries.is_empty() {
            return None;
        }
        let n = entries.len() as f64;
        let computation_ms = entries
            .iter()
            .map(|e| ticks_to_ms(e.computation))
            .sum::<f64>()
            / n;
        let communication_ms = entries
            .iter()
            .map(|e| ticks_to_ms(e.communication))
            .sum::<f64>()
            / n;
        Some(PhaseAverage {
            phase,
            windows: entries.len(),
            computation_ms,
            communication_ms,
            total_ms: computation_ms + communication_ms,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAverage {
    pub phase: Phase,
    pub windows: usize,
    pub computation_ms: f64,
    pub communication_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub deployment: String,
    pub phases: Vec<PhaseAverage>,
}

impl LatencyRow {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseAverage> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    /// Sum of the inference-phase totals, in milliseconds.
    pub fn inference_total_ms(&self) -> f64 {
        Phase::INFERENCE
            .iter()
            .filter_map(|p| self.phase(*p))
            .map(|p| p.total_ms)
            .sum()
    }
}

/// One row per deployment with phase averages.
pub fn report_latency<'a>(
    ledgers: impl IntoIterator<Item = (&'a str, &'a LatencyLedger)>,
) -> Vec<LatencyRow> {
    ledgers
        .into_iter()
        .map(|(name, ledger)| LatencyRow {
            deployment: name.to_string(),
            phases: Phase::ALL
                .iter()
                .filter_map(|p| ledger.average_ms(*p))
                .collect(),
        })
        .collect()
}

/// Tab-free fixed-width rendering in seconds.
pub fn render_latency_table(rows: &[LatencyRow]) -> String {
    let mut out = format!("{:<12}", "deployment");
    for p in Phase::ALL {
        out.push_str(&format!(" | {:^26}", p.as_str()));
    }
    out.push('\n');
    out.push_str(&format!("{:<12}", ""));
    for _ in Phase::ALL {
        out.push_str(&format!(" | {:>8} {:>8} {:>8}", "comp", "comm", "total"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:<12}", row.deployment));
        for p in Phase::ALL {
            match row.phase(p) {
                Some(a) => out.push_str(&format!(
                    " | {:>8.2} {:>8.2} {:>8.2}",
                    a.computation_ms / 1e3,
                    a.communication_ms / 1e3,
                    a.total_ms / 1e3
                )),
                None => out.push_str(&format!(" | {:>8} {:>8} {:>8}", "-", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_additive() {
        let mut l = LatencyLedger::new();
        l.add_computation(0, Phase::SpeedInference, 9_000_000);
        l.add_communication(0, Phase::SpeedInference, 2_000_000);
        l.add_computation(1, Phase::SpeedInference, 11_000_000);
        let p = l.get(0, Phase::SpeedInference).unwrap();
        assert_eq!(p.total(), 11_000_000);
        let avg = l.average_ms(Phase::SpeedInference).unwrap();
        assert_eq!(avg.computation_ms, 10_000.0);
        assert_eq!(avg.communication_ms, 1_000.0);
        assert_eq!(avg.total_ms, avg.computation_ms + avg.communication_ms);
        assert!(l.average_ms(Phase::SpeedTraining).is_none());
    }

    #[test]
    fn report_has_row_per_deployment() {
        let mut a = LatencyLedger::new();
        a.add_computation(0, Phase::BatchInference, 1000);
        let b = LatencyLedger::new();
        let rows = report_latency([("edge", &a), ("cloud", &b)]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].phases.len(), 1);
        assert!(rows[1].phases.is_empty());
        assert!(render_latency_table(&rows).contains("edge"));
    }
}
