use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ClientError;
use crate::attestation::{EmulatedTee, ReferenceValueStore, DEFAULT_MAX_AGE_S};
use crate::broker::TeeFiles;
use crate::crypto::KeyRole;
use crate::handshake::{ClientHandshakeConfig, Clock, Credentials, Mode};
use crate::keyfile;

/// Connection settings in memory.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub broker_addr: String,
    pub handshake: ClientHandshakeConfig,
    /// Where the next resumption ticket is kept between runs.
    pub ticket_cache: Option<PathBuf>,
    pub client_id: String,
    pub clean_session: bool,
    pub keep_alive_s: u16,
    pub timeout: Duration,
}

fn yes() -> bool {
    true
}

fn default_max_age() -> u64 {
    DEFAULT_MAX_AGE_S
}

/// Client configuration file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfigFile {
    pub broker_addr: String,
    pub broker_name: String,
    pub ech_public: PathBuf,
    pub ca_anchor: PathBuf,
    pub reference_values: PathBuf,
    pub attestation_roots: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "yes")]
    pub att_required: bool,
    #[serde(default)]
    pub ticket_cache: Option<PathBuf>,
    #[serde(default)]
    pub cert: Option<PathBuf>,
    #[serde(default)]
    pub key: Option<PathBuf>,
    #[serde(default)]
    pub tee: Option<TeeFiles>,
    pub client_id: String,
    #[serde(default = "yes")]
    pub clean_session: bool,
    #[serde(default = "default_max_age")]
    pub max_evidence_age_s: u64,
}

fn default_mode() -> Mode {
    Mode::Ecdh
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_owned()
    }
}

impl ClientConfig {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let raw = std::fs::read(path).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        let file: ClientConfigFile =
            serde_json::from_slice(&raw).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        Self::from_file(&file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_file(f: &ClientConfigFile, base: &Path) -> Result<Self, ClientError> {
        let cfg = |e: &dyn std::fmt::Display| ClientError::Config(e.to_string());
        let r = |p: &Path| resolve(base, p);
        let ref_store =
            ReferenceValueStore::load(&r(&f.reference_values), &r(&f.attestation_roots)).map_err(|e| cfg(&e))?;
        let credentials = match (&f.cert, &f.key) {
            (Some(c), Some(k)) => {
                let cert = keyfile::read_certificate(&r(c)).map_err(|e| cfg(&e))?;
                let key = keyfile::read_keypair(&r(k), KeyRole::Signing).map_err(|e| cfg(&e))?;
                if key.public() != cert.public_key {
                    return Err(ClientError::Config("client key does not match its certificate".into()));
                }
                Some(Credentials { cert, key })
            }
            (None, None) => None,
            _ => return Err(ClientError::Config("cert and key must be given together".into())),
        };
        let tee = match &f.tee {
            Some(t) => Some(Arc::new(EmulatedTee::load(&r(&t.device), &r(&t.image)).map_err(|e| cfg(&e))?)),
            None => None,
        };
        Ok(ClientConfig {
            broker_addr: f.broker_addr.clone(),
            handshake: ClientHandshakeConfig {
                broker_name: f.broker_name.clone(),
                ech_public: keyfile::read_key32(&r(&f.ech_public)).map_err(|e| cfg(&e))?,
                ca_anchor: keyfile::read_key32(&r(&f.ca_anchor)).map_err(|e| cfg(&e))?,
                att_required: f.att_required,
                mode: f.mode,
                ticket: None,
                ref_store: Arc::new(ref_store),
                credentials,
                tee,
                max_age_s: f.max_evidence_age_s,
                clock: Clock::System,
            },
            ticket_cache: f.ticket_cache.as_deref().map(r),
            client_id: f.client_id.clone(),
            clean_session: f.clean_session,
            keep_alive_s: 60,
            timeout: Duration::from_secs(10),
        })
    }
}
