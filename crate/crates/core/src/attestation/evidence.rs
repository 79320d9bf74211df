use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::SIGNATURE_LEN;

/// Signed attestation payload.
///
/// The JSON form uses lowercase hex for every binary field, sorted keys and no
/// insignificant whitespace. The signature covers the canonical JSON of every
/// other field.
#[derive(Clone, PartialEq, Eq)]
pub struct Evidence {
    pub tee_type: String,
    pub measurement: [u8; 32],
    pub platform_claims: BTreeMap<String, String>,
    pub binding: [u8; 32],
    pub issued_at: u64,
    pub device_public: [u8; 32],
    pub device_cert: [u8; SIGNATURE_LEN],
    pub signature: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Evidence")
            .field("tee_type", &self.tee_type)
            .field("measurement", &hex::encode(self.measurement))
            .field("binding", &hex::encode(self.binding))
            .field("issued_at", &self.issued_at)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed evidence: {0}")]
pub struct MalformedEvidence(pub String);

// Field declaration order is alphabetical so serde_json emits sorted keys.
#[derive(Serialize)]
struct UnsignedJson<'a> {
    binding: String,
    device_cert: String,
    device_public: String,
    issued_at: u64,
    measurement: String,
    platform_claims: &'a BTreeMap<String, String>,
    tee_type: &'a str,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignedJson {
    binding: String,
    device_cert: String,
    device_public: String,
    issued_at: u64,
    measurement: String,
    platform_claims: BTreeMap<String, String>,
    signature: String,
    tee_type: String,
}

fn unhex<const N: usize>(field: &str, s: &str) -> Result<[u8; N], MalformedEvidence> {
    let bytes = hex::decode(s).map_err(|e| MalformedEvidence(format!("{field}: {e}")))?;
    bytes.try_into().map_err(|b: Vec<u8>| MalformedEvidence(format!("{field}: expected {N} bytes, got {}", b.len())))
}

impl Evidence {
    /// Canonical JSON of every field except `signature`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let unsigned = UnsignedJson {
            binding: hex::encode(self.binding),
            device_cert: hex::encode(self.device_cert),
            device_public: hex::encode(self.device_public),
            issued_at: self.issued_at,
            measurement: hex::encode(self.measurement),
            platform_claims: &self.platform_claims,
            tee_type: &self.tee_type,
        };
        serde_json::to_vec(&unsigned).expect("serializable")
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        let signed = SignedJson {
            binding: hex::encode(self.binding),
            device_cert: hex::encode(self.device_cert),
            device_public: hex::encode(self.device_public),
            issued_at: self.issued_at,
            measurement: hex::encode(self.measurement),
            platform_claims: self.platform_claims.clone(),
            signature: hex::encode(self.signature),
            tee_type: self.tee_type.clone(),
        };
        serde_json::to_vec(&signed).expect("serializable")
    }

    /// Parses evidence JSON in any key order. Unknown fields and wrong field
    /// lengths are rejected.
    pub fn from_json(bytes: &[u8]) -> Result<Self, MalformedEvidence> {
        let j: SignedJson = serde_json::from_slice(bytes).map_err(|e| MalformedEvidence(e.to_string()))?;
        Ok(Evidence {
            tee_type: j.tee_type,
            measurement: unhex("measurement", &j.measurement)?,
            platform_claims: j.platform_claims,
            binding: unhex("binding", &j.binding)?,
            issued_at: j.issued_at,
            device_public: unhex("device_public", &j.device_public)?,
            device_cert: unhex("device_cert", &j.device_cert)?,
            signature: unhex("signature", &j.signature)?,
        })
    }
}

/// Bytes the attestation root signs to certify a device key.
pub fn device_cert_message(device_public: &[u8; 32], tee_type: &str) -> Vec<u8> {
    [device_public.as_slice(), tee_type.as_bytes()].concat()
}
