//! Durable sessions sealed at rest: `nonce(12) || AES-GCM(seal_key("storage"))`.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::session::DurableSession;
use super::BrokerError;
use crate::attestation::EmulatedTee;
use crate::crypto::{self, IV_LEN};

const STORE_AAD: &[u8] = b"attested-pubsub store v1";
const SEAL_CONTEXT: &str = "storage";

#[derive(Serialize, Deserialize)]
struct StoreImage {
    version: u32,
    sessions: Vec<DurableSession>,
}

/// Serializes and seals `sessions` under the device's storage key.
pub fn store_save(tee: &EmulatedTee, sessions: &[DurableSession]) -> Result<Vec<u8>, BrokerError> {
    let key = tee.seal_key(SEAL_CONTEXT).map_err(|e| BrokerError::Config(e.to_string()))?;
    let image = serde_json::to_vec(&StoreImage { version: 1, sessions: sessions.to_vec() })
        .map_err(|e| BrokerError::Store(e.to_string()))?;
    let mut nonce = [0u8; IV_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    let mut out = nonce.to_vec();
    out.extend(crypto::aead_seal_with_nonce(&key.key, &nonce, STORE_AAD, &image));
    Ok(out)
}

/// Opens a sealed store. Any tampering, truncation or foreign key is refused.
pub fn store_load(tee: &EmulatedTee, bytes: &[u8]) -> Result<Vec<DurableSession>, BrokerError> {
    let key = tee.seal_key(SEAL_CONTEXT).map_err(|e| BrokerError::Config(e.to_string()))?;
    if bytes.len() < IV_LEN {
        return Err(BrokerError::Store("store truncated".into()));
    }
    let (nonce, body) = bytes.split_at(IV_LEN);
    let nonce: [u8; IV_LEN] = nonce.try_into().expect("split at IV_LEN");
    let plain = crypto::aead_open_with_nonce(&key.key, &nonce, STORE_AAD, body)
        .map_err(|_| BrokerError::Store("store failed integrity check".into()))?;
    let image: StoreImage = serde_json::from_slice(&plain).map_err(|e| BrokerError::Store(e.to_string()))?;
    if image.version != 1 {
        return Err(BrokerError::Store(format!("unsupported store version {}", image.version)));
    }
    Ok(image.sessions)
}

/// Writes atomically: a crash leaves either the old or the new file.
/// Concurrent writers each use their own temporary file; the last rename wins.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BrokerError> {
    let io = |e| BrokerError::Io(path.display().to_string(), e);
    let tmp = path.with_extension(format!("tmp.{}.{:08x}", std::process::id(), rand::rngs::OsRng.next_u32()));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}
