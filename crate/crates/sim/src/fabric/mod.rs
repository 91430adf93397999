//! Simulated edge-cloud substrate: topology, pub/sub bus, object store,
//! handlers, placement, discrete-event clock and latency ledger.

pub mod bus;
pub mod calibration;
pub mod clock;
pub mod codec;
pub mod handlers;
pub mod ledger;
pub mod placement;
pub mod store;
pub mod topology;

use thiserror::Error;

pub use bus::{Bus, BusConfig, Delivery, Message, SubscriberId, TopicFilter};
pub use calibration::Calibration;
pub use clock::Scheduler;
pub use ledger::{LatencyLedger, Phase};
pub use placement::{place, DeploymentPlan, Module, Preset, Sites};
pub use store::{ObjectStore, SignedToken};
pub use topology::{LinkSpec, NodeId, NodeRole, NodeSpec, Topology};

pub const TOPIC_WINDOW: &str = "stream/window";
pub const TOPIC_MODEL: &str = "model/speed";
pub const TOPIC_RESULTS: &str = "results/inference";
pub const TOPIC_ARCHIVE_DATA: &str = "archive/data";
pub const TOPIC_BATCH_PREDICTIONS: &str = "results/inference/batch";
pub const TOPIC_SPEED_PREDICTIONS: &str = "results/inference/speed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("invalid object key `{0}`")]
    InvalidKey(String),
    #[error("no object under key `{0}`")]
    MissingKey(String),
    #[error("token already used")]
    TokenConsumed,
    #[error("token expired")]
    TokenExpired,
    #[error("token was not issued by this store")]
    UnknownToken,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("decode error: {0}")]
    Codec(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("out of memory placing {module} on `{node}`: needs {required_mb} MB, {available_mb} MB free")]
    OutOfMemory {
        module: Module,
        node: NodeId,
        required_mb: u64,
        available_mb: u64,
    },
}

impl From<std::io::Error> for FabricError {
    fn from(e: std::io::Error) -> Self {
        FabricError::Io(e.to_string())
    }
}
