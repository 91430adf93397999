//! Binary container for synchronizing trained models between nodes.
//!
//! ```text
//! offset    size  field
//! 0         4     magic "HSMA"
//! 4         4     format version (u32 LE)
//! 8         4     header length H (u32 LE)
//! 12        H     header: input_dim, seq_len, lstm_units, dense_units,
//!                 output_units (u32 LE each), seed, version (u64 LE),
//!                 trained_on_window (i64 LE, -1 = none), param_count (u64 LE)
//! 12+H      32    SHA-256 of header bytes followed by payload bytes
//! 44+H      8     payload length P (u64 LE)
//! 52+H      P     parameters as f64 LE, in `Layout` order
//! ```

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelParams, NetworkConfig};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HSMA";
const HEADER_LEN: usize = 5 * 4 + 4 * 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArtifactError {
    #[error("not a model artifact (bad magic)")]
    BadMagic,
    #[error("unsupported artifact format version {0}")]
    UnsupportedFormat(u32),
    #[error("artifact truncated")]
    Truncated,
    #[error("artifact checksum mismatch")]
    ChecksumMismatch,
    #[error("artifact header is inconsistent: {0}")]
    BadHeader(String),
}

/// A versioned model snapshot plus the checksum of its serialized form.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    params: ModelParams,
    version: u64,
    trained_on_window: Option<u64>,
    checksum: [u8; 32],
}

impl ModelArtifact {
    pub fn new(params: ModelParams, version: u64, trained_on_window: Option<u64>) -> Self {
        let header = encode_header(
            params.config(),
            version,
            trained_on_window,
            params.param_count(),
        );
        let payload = encode_payload(&params);
        let checksum = digest(&header, &payload);
        Self {
            params,
            version,
            trained_on_window,
            checksum,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &NetworkConfig {
        self.params.config()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn trained_on_window(&self) -> Option<u64> {
        self.trained_on_window
    }

    pub fn checksum(&self) -> &[u8; 32] {
        &self.checksum
    }

    pub fn serialize(&self) -> Vec<u8> {
        let header = encode_header(
            self.config(),
            self.version,
            self.trained_on_window,
            self.params.param_count(),
        );
        let payload = encode_payload(&self.params);
        let mut out = Vec::with_capacity(52 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(ARTIFACT_FORMAT_VERSION)
            .unwrap();
        out.write_u32::<LittleEndian>(header.len() as u32).unwrap();
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.checksum);
        out.write_u64::<LittleEndian>(payload.len() as u64).unwrap();
        out.extend_from_slice(&payload);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| ArtifactError::Truncated)?;
        if &magic != MAGIC {
            return Err(ArtifactError::BadMagic);
        }
        let format = read_u32(&mut cur)?;
        if format != ARTIFACT_FORMAT_VERSION {
            return Err(ArtifactError::UnsupportedFormat(format));
        }
        let header_len = read_u32(&mut cur)? as usize;
        if header_len != HEADER_LEN {
            return Err(ArtifactError::BadHeader(format!(
                "header length {header_len}"
            )));
        }
        let header = take(&mut cur, header_len)?;
        let mut checksum = [0u8; 32];
        cur.read_exact(&mut checksum)
            .map_err(|_| ArtifactError::Truncated)?;
        let payload_len = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| ArtifactError::Truncated)? as usize;
        let payload = take(&mut cur, payload_len)?;
        if (cur.position() as usize) != bytes.len() {
            return Err(ArtifactError::BadHeader("trailing bytes".into()));
        }
        if digest(&header, &payload) != checksum {
            return Err(ArtifactError::ChecksumMismatch);
        }

        let mut h = Cursor::new(header.as_slice());
        let mut dim = || read_u32(&mut h).map(|v| v as usize);
        let (input_dim, seq_len, lstm_units, dense_units, output_units) =
            (dim()?, dim()?, dim()?, dim()?, dim()?);
        let seed = read_u64(&mut h)?;
        let version = read_u64(&mut h)?;
        let trained = h
            .read_i64::<LittleEndian>()
            .map_err(|_| ArtifactError::Truncated)?;
        let param_count = read_u64(&mut h)? as usize;
        let config = NetworkConfig {
            input_dim,
            seq_len,
            lstm_units,
            dense_units,
            output_units,
            seed,
        };
        if config.validate().is_err()
            || config.param_count() != param_count
            || payload_len != param_count * 8
        {
            return Err(ArtifactError::BadHeader(
                "parameter count does not match config".into(),
            ));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ModelParams::from_values(config, values)
            .map_err(|e| ArtifactError::BadHeader(e.to_string()))?;
        Ok(Self {
            params,
            version,
            trained_on_window: u64::try_from(trained).ok(),
            checksum,
        })
    }
}

/// Hands out strictly increasing artifact versions, starting at 1.
#[derive(Debug, Clone, Default)]
pub struct ArtifactProducer {
    last_version: u64,
}

impl ArtifactProducer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(
        &mut self,
        params: ModelParams,
        trained_on_window: Option<u64>,
    ) -> ModelArtifact {
        self.last_version += 1;
        ModelArtifact::new(params, self.last_version, trained_on_window)
    }

    pub fn last_version(&self) -> u64 {
        self.last_version
    }
}

fn encode_header(
    cfg: &NetworkConfig,
    version: u64,
    trained_on_window: Option<u64>,
    params: usize,
) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    for d in [
        cfg.input_dim,
        cfg.seq_len,
        cfg.lstm_units,
        cfg.dense_units,
        cfg.output_units,
    ] {
        h.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    h.write_u64::<LittleEndian>(cfg.seed).unwrap();
    h.write_u64::<LittleEndian>(version).unwrap();
    h.write_i64::<LittleEndian>(trained_on_window.map_or(-1, |w| w as i64))
        .unwrap();
    h.write_u64::<LittleEndian>(params as u64).unwrap();
    h
}

fn encode_payload(params: &ModelParams) -> Vec<u8> {
    params
        .values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn digest(header: &[u8], payload: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(header);
    hasher.update(payload);
    hasher.finalize().into()
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32, ArtifactError> {
    cur.read_u32::<LittleEndian>()
        .map_err(|_| ArtifactError::Truncated)
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64, ArtifactError> {
    cur.read_u64::<LittleEndian>()
        .map_err(|_| ArtifactError::Truncated)
}

fn take(cur: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>, ArtifactError> {
    let start = cur.position() as usize;
    let data = *cur.get_ref();
    let end = start.checked_add(len).ok_or(ArtifactError::Truncated)?;
    if end > data.len() {
        return Err(ArtifactError::Truncated);
    }
    cur.set_position(end as u64);
    Ok(data[start..end].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn artifact() -> ModelArtifact {
        let params = ModelParams::init(NetworkConfig::default().with_seed(8)).unwrap();
        ModelArtifact::new(params, 3, Some(41))
    }

    #[test]
    fn roundtrip_is_identity() {
        let a = artifact();
        let back = ModelArtifact::deserialize(&a.serialize()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.trained_on_window(), Some(41));
    }

    #[test]
    fn untrained_window_roundtrips_as_none() {
        let params = ModelParams::init(NetworkConfig::default()).unwrap();
        let a = ModelArtifact::new(params, 1, None);
        assert_eq!(
            ModelArtifact::deserialize(&a.serialize())
                .unwrap()
                .trained_on_window(),
            None
        );
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = artifact().serialize();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert_eq!(
            ModelArtifact::deserialize(&bytes).unwrap_err(),
            ArtifactError::ChecksumMismatch
        );
    }

    #[test]
    fn flipped_header_byte_fails_checksum() {
        let mut bytes = artifact().serialize();
        bytes[12 + 28] ^= 0x01; // low byte of the version field
        assert_eq!(
            ModelArtifact::deserialize(&bytes).unwrap_err(),
            ArtifactError::ChecksumMismatch
        );
    }

    #[test]
    fn format_and_magic_are_checked() {
        let mut bytes = artifact().serialize();
        bytes[4] = 9;
        assert_eq!(
            ModelArtifact::deserialize(&bytes).unwrap_err(),
            ArtifactError::UnsupportedFormat(9)
        );
        bytes[0] = b'X';
        assert_eq!(
            ModelArtifact::deserialize(&bytes).unwrap_err(),
            ArtifactError::BadMagic
        );
        assert_eq!(
            ModelArtifact::deserialize(&[]).unwrap_err(),
            ArtifactError::Truncated
        );
        let full = artifact().serialize();
        assert_eq!(
            ModelArtifact::deserialize(&full[..full.len() - 1]).unwrap_err(),
            ArtifactError::Truncated
        );
    }

    #[test]
    fn default_payload_size() {
        let bytes = artifact().serialize();
        assert_eq!(bytes.len(), 10_981 * 8 + 52 + HEADER_LEN);
    }

    #[test]
    fn producer_versions_strictly_increase() {
        let params = ModelParams::init(NetworkConfig::default()).unwrap();
        let mut producer = ArtifactProducer::new();
        let versions: Vec<u64> = (0..5)
            .map(|w| producer.publish(params.clone(), Some(w)).version())
            .collect();
        assert_eq!(versions, vec![1, 2, 3, 4, 5]);
    }
}
