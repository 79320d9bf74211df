//! Resumption tickets on disk. With a TEE the file is sealed under the
//! device's `tickets` key so the PSK never rests in plaintext.

use std::path::Path;

use rand::RngCore;

use super::ClientError;
use crate::attestation::EmulatedTee;
use crate::broker::write_atomic;
use crate::crypto::{self, IV_LEN};
use crate::handshake::ClientTicket;

const AAD: &[u8] = b"attested-pubsub ticket v1";

pub fn store(path: &Path, ticket: &ClientTicket, tee: Option<&EmulatedTee>) -> Result<(), ClientError> {
    let json = serde_json::to_vec(ticket).map_err(|e| ClientError::Config(e.to_string()))?;
    let bytes = match tee {
        Some(tee) => {
            let key = tee.seal_key("tickets").map_err(|e| ClientError::Config(e.to_string()))?;
            let mut nonce = [0u8; IV_LEN];
            rand::rngs::OsRng.fill_bytes(&mut nonce);
            let mut out = nonce.to_vec();
            out.extend(crypto::aead_seal_with_nonce(&key.key, &nonce, AAD, &json));
            out
        }
        None => json,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ClientError::Config(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, &bytes).map_err(|e| ClientError::Config(e.to_string()))
}

/// Reads the cached ticket; `Ok(None)` when there is none.
pub fn load(path: &Path, tee: Option<&EmulatedTee>) -> Result<Option<ClientTicket>, ClientError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(ClientError::Config(format!("{}: {e}", path.display()))),
    };
    let json = match tee {
        Some(tee) => {
            let key = tee.seal_key("tickets").map_err(|e| ClientError::Config(e.to_string()))?;
            if bytes.len() < IV_LEN {
                return Err(ClientError::Config("ticket cache truncated".into()));
            }
            let (nonce, body) = bytes.split_at(IV_LEN);
            crypto::aead_open_with_nonce(&key.key, nonce.try_into().expect("IV_LEN"), AAD, body)
                .map_err(|_| ClientError::Config("ticket cache failed integrity check".into()))?
        }
        None => bytes,
    };
    serde_json::from_slice(&json).map(Some).map_err(|e| ClientError::Config(format!("ticket cache: {e}")))
}

/// Removes a used ticket so a failed run cannot present it again.
pub fn discard(path: &Path) {
    let _ = std::fs::remove_file(path);
}
