//! Serverless-style handlers on the cloud side.

use std::collections::VecDeque;

use hybrid_core::timeseries::Tick;

use super::codec::WindowPayload;
use super::store::ObjectStore;
use super::FabricError;

pub fn data_key(window: u64) -> String {
    format!("data/window-{window:06}.bin")
}

pub fn result_key(kind: &str, window: u64) -> String {
    format!("results/{kind}/window-{window:06}.bin")
}

pub fn speed_model_key(version: u64) -> String {
    format!("models/speed/v{version:06}.bin")
}

pub fn training_failure_key(window: u64) -> String {
    format!("failures/training-window-{window:06}.txt")
}

/// Idempotent put: an identical object already under `key` is left alone.
/// Returns whether anything was written.
pub fn archive_idempotent(
    store: &mut ObjectStore,
    key: &str,
    bytes: &[u8],
) -> Result<bool, FabricError> {
    match store.get_object(key) {
        Ok(existing) if existing == bytes => Ok(false),
        Ok(_) | Err(FabricError::MissingKey(_)) => {
            store.put_object(key, bytes)?;
            Ok(true)
        }
        Err(e) => Err(e),
    }
}

/// Data archiving: stores a raw window payload under its window index.
pub fn handle_data_archiving(
    store: &mut ObjectStore,
    payload: &[u8],
) -> Result<String, FabricError> {
    let index = WindowPayload::decode(payload)?.window.index;
    let key = data_key(index);
    archive_idempotent(store, &key, payload)?;
    Ok(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRequest {
    pub window_index: u64,
    pub payload: Vec<u8>,
    pub received_at: Tick,
}

/// Speed-training dispatcher. Runs one training job at a time on its
/// compute node; events that arrive while the node is down or busy wait
/// in a FIFO queue.
#[derive(Debug, Default)]
pub struct SpeedTrainingHandler {
    waiting: VecDeque<TrainingRequest>,
    busy: bool,
}

impl SpeedTrainingHandler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn queue_depth(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// A new window event. Returns the request to dispatch now, if any.
    pub fn on_event(
        &mut self,
        request: TrainingRequest,
        compute_up: bool,
    ) -> Option<TrainingRequest> {
        self.waiting.push_back(request);
        self.next(compute_up)
    }

    /// The running job finished (successfully or not).
    pub fn on_complete(&mut self, compute_up: bool) -> Option<TrainingRequest> {
        self.busy = false;
        self.next(compute_up)
    }

    /// The compute node came back.
    pub fn on_recovery(&mut self) -> Option<TrainingRequest> {
        self.next(true)
    }

    fn next(&mut self, compute_up: bool) -> Option<TrainingRequest> {
        if self.busy || !compute_up {
            return None;
        }
        let req = self.waiting.pop_front()?;
        self.busy = true;
        Some(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hybrid_core::timeseries::{Record, TimeWindow};

    fn req(i: u64) -> TrainingRequest {
        TrainingRequest {
            window_index: i,
            payload: vec![],
            received_at: i,
        }
    }

    #[test]
    fn available_node_dispatches_immediately() {
        let mut h = SpeedTrainingHandler::new();
        assert_eq!(h.on_event(req(0), true), Some(req(0)));
        assert!(h.is_busy());
    }

    #[test]
    fn outage_queues_and_drains_in_order() {
        let mut h = SpeedTrainingHandler::new();
        assert_eq!(h.on_event(req(3), false), None);
        assert_eq!(h.on_event(req(4), false), None);
        assert_eq!(h.queue_depth(), 2);
        assert_eq!(h.on_recovery(), Some(req(3)));
        assert_eq!(h.on_event(req(5), true), None);
        assert_eq!(h.on_complete(true), Some(req(4)));
        assert_eq!(h.on_complete(true), Some(req(5)));
        assert_eq!(h.on_complete(true), None);
    }

    #[test]
    fn data_archiving_is_idempotent() {
        let mut store = ObjectStore::in_memory(0);
        let payload = WindowPayload {
            window: TimeWindow {
                index: 7,
                records: vec![Record::new(1, vec![1.0])],
                open_tick: 0,
                close_tick: 1,
            },
            context: vec![],
        }
        .encode();
        let k1 = handle_data_archiving(&mut store, &payload).unwrap();
        let k2 = handle_data_archiving(&mut store, &payload).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(store.list("data/").unwrap(), vec![k1.clone()]);
        assert_eq!(store.get_object(&k1).unwrap(), payload);
    }
}
