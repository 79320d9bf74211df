use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::session::DEFAULT_QUEUE_CAP;
use super::BrokerError;
use crate::attestation::DEFAULT_MAX_AGE_S;

/// Emulated device backing a TEE: device record plus the measured code image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeeFiles {
    pub device: PathBuf,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistenceConfig {
    pub path: PathBuf,
    #[serde(default = "default_interval")]
    pub interval_ms: u64,
}

fn default_interval() -> u64 {
    1000
}

fn default_max_age() -> u64 {
    DEFAULT_MAX_AGE_S
}

fn default_queue_cap() -> usize {
    DEFAULT_QUEUE_CAP
}

/// Broker configuration file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub listen: String,
    pub cert: PathBuf,
    pub key: PathBuf,
    pub ca_anchor: PathBuf,
    pub ech_key: PathBuf,
    pub reference_values: PathBuf,
    pub attestation_roots: PathBuf,
    pub acl: PathBuf,
    #[serde(default)]
    pub tee: Option<TeeFiles>,
    #[serde(default)]
    pub require_peer_attestation: bool,
    #[serde(default = "default_max_age")]
    pub max_evidence_age_s: u64,
    #[serde(default)]
    pub persistence: Option<PersistenceConfig>,
    #[serde(default = "default_queue_cap")]
    pub queue_cap_bytes: usize,
}

pub(crate) fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl BrokerConfig {
    pub fn load(path: &Path) -> Result<Self, BrokerError> {
        let raw = std::fs::read(path).map_err(|e| BrokerError::Io(path.display().to_string(), e))?;
        let mut cfg: BrokerConfig =
            serde_json::from_slice(&raw).map_err(|e| BrokerError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.cert,
            &mut cfg.key,
            &mut cfg.ca_anchor,
            &mut cfg.ech_key,
            &mut cfg.reference_values,
            &mut cfg.attestation_roots,
            &mut cfg.acl,
        ] {
            resolve(base, p);
        }
        if let Some(t) = &mut cfg.tee {
            resolve(base, &mut t.device);
            resolve(base, &mut t.image);
        }
        if let Some(p) = &mut cfg.persistence {
            resolve(base, &mut p.path);
        }
        Ok(cfg)
    }
}
