//! Key-value object store with one-time presigned tokens.
//!
//! The store can live in memory or in a directory tree, one file per key.
//! Keys are `/`-separated and restricted to `[A-Za-z0-9._-]` segments so
//! they map safely onto paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use hybrid_core::timeseries::Tick;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FabricError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedToken {
    pub key: String,
    pub expires_at: Tick,
    pub single_use: bool,
    pub nonce: u64,
}

impl SignedToken {
    /// Compact text form carried in `model/speed` messages.
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("token serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        serde_json::from_slice(bytes).map_err(|e| FabricError::Codec(format!("token: {e}")))
    }
}

#[derive(Debug)]
enum Backing {
    Memory(BTreeMap<String, Vec<u8>>),
    Directory(PathBuf),
}

#[derive(Debug)]
pub struct ObjectStore {
    backing: Backing,
    issued: BTreeMap<u64, SignedToken>,
    consumed: BTreeSet<u64>,
    rng: ChaCha8Rng,
}

fn validate_key(key: &str) -> Result<(), FabricError> {
    let ok = !key.is_empty()
        && key.split('/').all(|seg| {
            !seg.is_empty()
                && seg != "."
                && seg != ".."
                && seg
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
        });
    if ok {
        Ok(())
    } else {
        Err(FabricError::InvalidKey(key.to_string()))
    }
}

impl ObjectStore {
    pub fn in_memory(seed: u64) -> Self {
        Self::with_backing(Backing::Memory(BTreeMap::new()), seed)
    }

    pub fn in_directory(root: impl Into<PathBuf>, seed: u64) -> Result<Self, FabricError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self::with_backing(Backing::Directory(root), seed))
    }

    fn with_backing(backing: Backing, seed: u64) -> Self {
        Self {
            backing,
            issued: BTreeMap::new(),
            consumed: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stores `bytes` under `key`, replacing any previous object.
    pub fn put_object(&mut self, key: &str, bytes: &[u8]) -> Result<(), FabricError> {
        validate_key(key)?;
        match &mut self.backing {
            Backing::Memory(map) => {
                map.insert(key.to_string(), bytes.to_vec());
            }
            Backing::Directory(root) => {
                let path = root.join(key);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                let tmp = path.with_extension("partial");
                fs::write(&tmp, bytes)?;
                fs::rename(&tmp, &path)?;
            }
        }
        Ok(())
    }

    pub fn get_object(&self, key: &str) -> Result<Vec<u8>, FabricError> {
        validate_key(key)?;
        match &self.backing {
            Backing::Memory(map) => map
                .get(key)
                .cloned()
                .ok_or_else(|| FabricError::MissingKey(key.to_string())),
            Backing::Directory(root) => match fs::read(root.join(key)) {
                Ok(b) => Ok(b),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(FabricError::MissingKey(key.to_string()))
                }
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get_object(key).is_ok()
    }

    /// All keys under `prefix`, sorted.
    pub fn list(&self, prefix: &str) -> Result<Vec<String>, FabricError> {
        match &self.backing {
            Backing::Memory(map) => Ok(map
                .keys()
                .filter(|k| k.starts_with(prefix))
                .cloned()
                .collect()),
            Backing::Directory(root) => {
                let mut keys = Vec::new();
                let mut stack = vec![root.clone()];
                while let Some(dir) = stack.pop() {
                    for entry in fs::read_dir(&dir)? {
                        let path = entry?.path();
                        if path.is_dir() {
                            stack.push(path);
                        } else if path.extension().is_none_or(|e| e != "partial") {
                            let rel = path.strip_prefix(root).expect("under root");
                            let key = rel
                                .iter()
                                .map(|s| s.to_string_lossy())
                                .collect::<Vec<_>>()
                                .join("/");
                            if key.starts_with(prefix) {
                                keys.push(key);
                            }
                        }
                    }
                }
                keys.sort();
                Ok(keys)
            }
        }
    }

    /// Issues a single-use token for `key` valid until `now + ttl`.
    pub fn presign(&mut self, key: &str, ttl: Tick, now: Tick) -> Result<SignedToken, FabricError> {
        if !self.contains(key) {
            return Err(FabricError::MissingKey(key.to_string()));
        }
        let nonce = loop {
            let n: u64 = self.rng.random();
            if !self.issued.contains_key(&n) {
                break n;
            }
        };
        let token = SignedToken {
            key: key.to_string(),
            expires_at: now.saturating_add(ttl),
            single_use: true,
            nonce,
        };
        self.issued.insert(nonce, token.clone());
        Ok(token)
    }

    /// Redeems a token. A single-use token works at most once; any token
    /// stops working once `now` passes its expiry. Tokens whose fields do
    /// not match what was issued are rejected.
    pub fn fetch_with_token(
        &mut self,
        token: &SignedToken,
        now: Tick,
    ) -> Result<Vec<u8>, FabricError> {
        let issued = self
            .issued
            .get(&token.nonce)
            .ok_or(FabricError::UnknownToken)?;
        if issued != token {
            return Err(FabricError::UnknownToken);
        }
        if token.single_use && self.consumed.contains(&token.nonce) {
            return Err(FabricError::TokenConsumed);
        }
        if now > token.expires_at {
            return Err(FabricError::TokenExpired);
        }
        let bytes = self.get_object(&token.key)?;
        if token.single_use {
            self.consumed.insert(token.nonce);
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_roundtrip() {
        let mut s = ObjectStore::in_memory(0);
        s.put_object("a/b.bin", b"hello").unwrap();
        assert_eq!(s.get_object("a/b.bin").unwrap(), b"hello");
        assert!(matches!(
            s.get_object("a/c.bin"),
            Err(FabricError::MissingKey(_))
        ));
    }

    #[test]
    fn token_is_single_use() {
        let mut s = ObjectStore::in_memory(1);
        s.put_object("m", b"x").unwrap();
        let t = s.presign("m", 100, 0).unwrap();
        assert_eq!(s.fetch_with_token(&t, 10).unwrap(), b"x");
        assert_eq!(s.fetch_with_token(&t, 11), Err(FabricError::TokenConsumed));
    }

    #[test]
    fn token_expires() {
        let mut s = ObjectStore::in_memory(1);
        s.put_object("m", b"x").unwrap();
        let t = s.presign("m", 100, 0).unwrap();
        assert_eq!(s.fetch_with_token(&t, 101), Err(FabricError::TokenExpired));
        assert!(s.fetch_with_token(&t, 100).is_ok());
    }

    #[test]
    fn forged_token_rejected() {
        let mut s = ObjectStore::in_memory(1);
        s.put_object("m", b"x").unwrap();
        s.put_object("other", b"y").unwrap();
        let mut t = s.presign("m", 100, 0).unwrap();
        t.key = "other".into();
        assert_eq!(s.fetch_with_token(&t, 1), Err(FabricError::UnknownToken));
        t.key = "m".into();
        t.expires_at = u64::MAX;
        assert_eq!(s.fetch_with_token(&t, 1), Err(FabricError::UnknownToken));
    }

    #[test]
    fn presign_requires_object() {
        let mut s = ObjectStore::in_memory(1);
        assert!(matches!(
            s.presign("nope", 1, 0),
            Err(FabricError::MissingKey(_))
        ));
    }

    #[test]
    fn directory_backing_lists_sorted_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ObjectStore::in_directory(dir.path(), 0).unwrap();
        s.put_object("data/window-000001.bin", b"1").unwrap();
        s.put_object("data/window-000000.bin", b"0").unwrap();
        s.put_object("models/v1.bin", b"m").unwrap();
        assert_eq!(
            s.list("data/").unwrap(),
            vec!["data/window-000000.bin", "data/window-000001.bin"]
        );
        let reopened = ObjectStore::in_directory(dir.path(), 0).unwrap();
        assert_eq!(reopened.get_object("models/v1.bin").unwrap(), b"m");
    }

    #[test]
    fn unsafe_keys_rejected() {
        let mut s = ObjectStore::in_memory(0);
        for k in ["", "../x", "a//b", "a/./b", "sp ace"] {
            assert!(s.put_object(k, b"").is_err(), "{k}");
        }
    }
}
