use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttestationError, Role};

/// A trusted measurement for one role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub role: Role,
    pub measurement_hex: String,
    #[serde(default)]
    pub note: String,
}

impl ReferenceValue {
    pub fn new(role: Role, measurement: [u8; 32], note: &str) -> Self {
        ReferenceValue { role, measurement_hex: hex::encode(measurement), note: note.to_owned() }
    }
}

/// Reference measurements plus the attestation roots a verifier trusts.
/// Read-only once built; reloads build a new store.
#[derive(Debug, Clone, Default)]
pub struct ReferenceValueStore {
    entries: Vec<(Role, [u8; 32], String)>,
    roots: Vec<[u8; 32]>,
}

fn parse_key(s: &str) -> Result<[u8; 32], AttestationError> {
    hex::decode(s.trim())
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| AttestationError::Config(format!("expected 32 hex bytes, got {s:?}")))
}

impl ReferenceValueStore {
    pub fn new(entries: Vec<ReferenceValue>, roots: Vec<[u8; 32]>) -> Self {
        let entries = entries
            .into_iter()
            .filter_map(|e| parse_key(&e.measurement_hex).ok().map(|m| (e.role, m, e.note)))
            .collect();
        ReferenceValueStore { entries, roots }
    }

    /// Loads the reference-value file (array of `{role, measurement_hex, note}`)
    /// and the roots file (array of hex public keys).
    pub fn load(reference_file: &Path, roots_file: &Path) -> Result<Self, AttestationError> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| AttestationError::Io(p.display().to_string(), e));
        let entries: Vec<ReferenceValue> = serde_json::from_slice(&read(reference_file)?)
            .map_err(|e| AttestationError::Config(format!("{}: {e}", reference_file.display())))?;
        let roots: Vec<String> = serde_json::from_slice(&read(roots_file)?)
            .map_err(|e| AttestationError::Config(format!("{}: {e}", roots_file.display())))?;
        for e in &entries {
            parse_key(&e.measurement_hex)?;
        }
        let roots = roots.iter().map(|r| parse_key(r)).collect::<Result<_, _>>()?;
        Ok(Self::new(entries, roots))
    }

    pub fn contains(&self, role: Role, measurement: &[u8; 32]) -> bool {
        self.entries.iter().any(|(r, m, _)| *r == role && m == measurement)
    }

    pub fn roots(&self) -> &[[u8; 32]] {
        &self.roots
    }

    pub fn entries(&self) -> Vec<ReferenceValue> {
        self.entries.iter().map(|(r, m, n)| ReferenceValue::new(*r, *m, n)).collect()
    }

    /// Copy of this store without any entry for `(role, measurement)`.
    pub fn without(&self, role: Role, measurement: &[u8; 32]) -> Self {
        let mut s = self.clone();
        s.entries.retain(|(r, m, _)| !(*r == role && m == measurement));
        s
    }
}
