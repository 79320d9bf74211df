//! Keys and certificates on disk are single-line lowercase hex.

use std::path::Path;

use crate::crypto::{KeyPair, KeyRole};
use crate::handshake::Certificate;

#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Format(String, String),
}

fn read_text(path: &Path) -> Result<String, KeyFileError> {
    std::fs::read_to_string(path).map_err(|e| KeyFileError::Io(path.display().to_string(), e))
}

pub fn read_key32(path: &Path) -> Result<[u8; 32], KeyFileError> {
    let text = read_text(path)?;
    hex::decode(text.trim())
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| KeyFileError::Format(path.display().to_string(), "expected 32 hex bytes".into()))
}

pub fn read_keypair(path: &Path, role: KeyRole) -> Result<KeyPair, KeyFileError> {
    Ok(KeyPair::from_private(role, read_key32(path)?))
}

pub fn read_certificate(path: &Path) -> Result<Certificate, KeyFileError> {
    Certificate::from_hex(&read_text(path)?)
        .map_err(|e| KeyFileError::Format(path.display().to_string(), e.to_string()))
}

pub fn write_hex(path: &Path, bytes: &[u8]) -> Result<(), KeyFileError> {
    std::fs::write(path, hex::encode(bytes) + "\n").map_err(|e| KeyFileError::Io(path.display().to_string(), e))
}
