//! Data injection: throttles a timestamp-ordered record stream into
//! indexed time windows.

use hybrid_core::timeseries::{Record, Tick, TimeWindow};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::PipelineError;
use crate::fabric::clock::{ticks_to_seconds, TICKS_PER_SECOND};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CloseRule {
    /// Close once `seconds` have elapsed since the window opened and at
    /// least `min_records` are buffered.
    Duration { seconds: f64 },
    /// Close as soon as `records` are buffered.
    Count { records: usize },
}

impl fmt::Display for CloseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CloseRule::Duration { seconds } => write!(f, "seconds:{seconds}"),
            CloseRule::Count { records } => write!(f, "count:{records}"),
        }
    }
}

impl FromStr for CloseRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `count:N` or `seconds:S`, got `{s}`"))?;
        match kind {
            "count" => value
                .parse()
                .map(|records| CloseRule::Count { records })
                .map_err(|_| format!("bad record count `{value}`")),
            "seconds" => value
                .parse()
                .map(|seconds| CloseRule::Duration { seconds })
                .map_err(|_| format!("bad duration `{value}`")),
            other => Err(format!("unknown window rule `{other}`")),
        }
    }
}

impl TryFrom<String> for CloseRule {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CloseRule> for String {
    fn from(r: CloseRule) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub close_rule: CloseRule,
    pub min_records: usize,
    pub buffer_capacity: usize,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            close_rule: CloseRule::Duration { seconds: 30.0 },
            min_records: 200,
            buffer_capacity: 10_000,
        }
    }
}

impl InjectionConfig {
    pub fn by_count(records: usize) -> Self {
        Self {
            close_rule: CloseRule::Count { records },
            min_records: records,
            buffer_capacity: records.max(1) * 4,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        match self.close_rule {
            CloseRule::Duration { seconds } if !(seconds > 0.0 && seconds.is_finite()) => {
                return bad("window duration must be positive");
            }
            CloseRule::Count { records: 0 } => return bad("window record count must be positive"),
            CloseRule::Count { records } if records > self.buffer_capacity => {
                return bad("buffer capacity must hold a full window");
            }
            _ => {}
        }
        if self.buffer_capacity < self.min_records || self.buffer_capacity == 0 {
            return bad("buffer capacity must be at least the minimum window size");
        }
        Ok(())
    }
}

/// Arrival ticks for a replay at a constant rate, starting at tick 0.
pub fn replay_ticks(count: usize, records_per_second: f64) -> impl Iterator<Item = Tick> {
    let spacing = TICKS_PER_SECOND as f64 / records_per_second;
    (0..count).map(move |k| (k as f64 * spacing).round() as Tick)
}

#[derive(Debug, Clone)]
pub struct Injector {
    cfg: InjectionConfig,
    next_index: u64,
    open_tick: Option<Tick>,
    buffer: Vec<Record>,
    last_arrival: Option<Tick>,
    last_timestamp: Option<i64>,
}

impl Injector {
    pub fn new(cfg: InjectionConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            next_index: 0,
            open_tick: None,
            buffer: Vec::new(),
            last_arrival: None,
            last_timestamp: None,
        })
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    fn deadline(&self) -> Option<Tick> {
        match self.cfg.close_rule {
            CloseRule::Duration { seconds } => self
                .open_tick
                .map(|o| o + (seconds * TICKS_PER_SECOND as f64).round() as Tick),
            CloseRule::Count { .. } => None,
        }
    }

    fn close(&mut self, close_tick: Tick) -> TimeWindow {
        let window = TimeWindow {
            index: self.next_index,
            records: std::mem::take(&mut self.buffer),
            open_tick: self.open_tick.unwrap_or(close_tick),
            close_tick,
        };
        self.next_index += 1;
        self.open_tick = Some(close_tick);
        window
    }

    /// Closes the open window if its deadline has passed at `now` and it
    /// holds enough records.
    pub fn poll(&mut self, now: Tick) -> Option<TimeWindow> {
        let deadline = self.deadline()?;
        if now >= deadline && self.buffer.len() >= self.cfg.min_records && !self.buffer.is_empty() {
            let close_tick = deadline.max(self.last_arrival.unwrap_or(0));
            return Some(self.close(close_tick));
        }
        None
    }

    /// Accepts one record arriving at `arrival`. On `Backpressure` the
    /// record is not consumed and the producer must retry after polling.
    pub fn push(
        &mut self,
        record: Record,
        arrival: Tick,
    ) -> Result<Option<TimeWindow>, PipelineError> {
        if let Some(prev) = self.last_timestamp {
            if record.timestamp <= prev {
                return Err(PipelineError::OutOfOrder {
                    previous: prev,
                    found: record.timestamp,
                });
            }
        }
        if self.last_arrival.is_some_and(|a| arrival < a) {
            return Err(PipelineError::InvalidConfig(
                "arrival ticks must not decrease".into(),
            ));
        }
        let closed = self.poll(arrival);
        if self.buffer.len() >= self.cfg.buffer_capacity {
            return Err(PipelineError::Backpressure {
                capacity: self.cfg.buffer_capacity,
            });
        }
        if self.open_tick.is_none() {
            self.open_tick = Some(arrival);
        }
        self.last_timestamp = Some(record.timestamp);
        self.last_arrival = Some(arrival);
        self.buffer.push(record);
        if closed.is_some() {
            return Ok(closed);
        }
        let full = match self.cfg.close_rule {
            CloseRule::Count { records } => self.buffer.len() >= records,
            CloseRule::Duration { .. } => {
                self.deadline().is_some_and(|d| arrival >= d)
                    && self.buffer.len() >= self.cfg.min_records
            }
        };
        Ok(full.then(|| self.close(arrival)))
    }

    /// Records still buffered in the unfinished window.
    pub fn into_remainder(self) -> Vec<Record> {
        self.buffer
    }
}

/// Runs a whole arrival sequence through an injector. Returns the closed
/// windows and the records left in the unfinished one.
pub fn inject(
    records: impl IntoIterator<Item = (Record, Tick)>,
    cfg: InjectionConfig,
) -> Result<(Vec<TimeWindow>, Vec<Record>), PipelineError> {
    let mut injector = Injector::new(cfg)?;
    let mut windows = Vec::new();
    for (record, arrival) in records {
        let closed = match injector.push(record.clone(), arrival) {
            Err(PipelineError::Backpressure { .. }) => {
                // a replay cannot wait; force the overdue window out
                let w = injector
                    .poll(Tick::MAX)
                    .ok_or(PipelineError::Backpressure {
                        capacity: cfg.buffer_capacity,
                    })?;
                windows.push(w);
                injector.push(record, arrival)?
            }
            other => other?,
        };
        windows.extend(closed);
    }
    Ok((windows, injector.into_remainder()))
}

pub fn describe_window(w: &TimeWindow) -> String {
    format!(
        "window {} with {} records over {:.1}s",
        w.index,
        w.len(),
        ticks_to_seconds(w.close_tick.saturating_sub(w.open_tick))
    )
}
