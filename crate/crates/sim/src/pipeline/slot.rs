//! The speed-model slot: the single point shared between the training and
//! inference phases.

use std::sync::{Arc, RwLock};

use hybrid_core::forecaster::ModelArtifact;

use super::PipelineError;

/// Holds the newest speed artifact. Readers get an `Arc` snapshot, so a
/// swap is atomic: a reader sees the old artifact or the new one, never a
/// mix. Installs never lower the version.
#[derive(Debug, Clone, Default)]
pub struct SpeedModelSlot {
    inner: Arc<RwLock<Option<Arc<ModelArtifact>>>>,
}

impl SpeedModelSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<Arc<ModelArtifact>> {
        self.inner.read().expect("slot lock poisoned").clone()
    }

    /// Version of the installed artifact, 0 when empty.
    pub fn version(&self) -> u64 {
        self.current().map_or(0, |a| a.version())
    }

    /// Installs `artifact` unless a newer or equal version is already
    /// present. Returns whether the slot changed.
    pub fn install(&self, artifact: ModelArtifact) -> bool {
        let mut guard = self.inner.write().expect("slot lock poisoned");
        if guard
            .as_ref()
            .is_some_and(|cur| cur.version() >= artifact.version())
        {
            return false;
        }
        *guard = Some(Arc::new(artifact));
        true
    }

    /// Verifies and installs a serialized artifact.
    pub fn install_bytes(&self, bytes: &[u8]) -> Result<bool, PipelineError> {
        Ok(self.install(ModelArtifact::deserialize(bytes)?))
    }
}
