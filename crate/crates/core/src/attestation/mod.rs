//! Evidence model, the generate/verify provider pair, the emulated TEE and
//! the reference values verifiers compare against.

mod evidence;
mod reference;
mod tee;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use evidence::{device_cert_message, Evidence, MalformedEvidence};
pub use reference::{ReferenceValue, ReferenceValueStore};
pub use tee::{DeviceRecord, EmulatedTee, DEFAULT_TEE_TYPE};

use crate::crypto;

/// Evidence older than this many seconds is refused unless configured otherwise.
pub const DEFAULT_MAX_AGE_S: u64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum AttestationError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("invalid attestation configuration: {0}")]
    Config(String),
}

/// Which side of the channel a measurement is registered for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Broker,
    Peer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Ok,
    BadSignature,
    UnknownRoot,
    BindingMismatch,
    MeasurementUnknown,
    Malformed,
    Stale,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "ok",
            Reason::BadSignature => "bad_signature",
            Reason::UnknownRoot => "unknown_root",
            Reason::BindingMismatch => "binding_mismatch",
            Reason::MeasurementUnknown => "measurement_unknown",
            Reason::Malformed => "malformed",
            Reason::Stale => "stale",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of [`verify_evidence`]. `accepted` holds exactly when the reason is `Ok`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationResult {
    reason: Reason,
}

impl VerificationResult {
    pub fn from_reason(reason: Reason) -> Self {
        VerificationResult { reason }
    }

    pub fn accepted(&self) -> bool {
        self.reason == Reason::Ok
    }

    pub fn reason(&self) -> Reason {
        self.reason
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Generates evidence stamped with the current wall clock.
pub fn generate_evidence(tee: &EmulatedTee, binding: [u8; 32], extra_claims: &BTreeMap<String, String>) -> Evidence {
    tee.generate_evidence_at(binding, extra_claims, unix_now())
}

/// Checks, in order: root chain, evidence signature, binding, registered
/// measurement, freshness. The first failing check decides the reason.
pub fn verify_evidence(
    e: &Evidence,
    expected_binding: &[u8; 32],
    role: Role,
    store: &ReferenceValueStore,
    now: u64,
    max_age_s: u64,
) -> VerificationResult {
    let cert_msg = device_cert_message(&e.device_public, &e.tee_type);
    let chained = store.roots().iter().any(|root| crypto::verify_sig(root, &cert_msg, &e.device_cert).unwrap_or(false));
    if !chained {
        return VerificationResult::from_reason(Reason::UnknownRoot);
    }
    if !crypto::verify_sig(&e.device_public, &e.signing_bytes(), &e.signature).unwrap_or(false) {
        return VerificationResult::from_reason(Reason::BadSignature);
    }
    if &e.binding != expected_binding {
        return VerificationResult::from_reason(Reason::BindingMismatch);
    }
    if !store.contains(role, &e.measurement) {
        return VerificationResult::from_reason(Reason::MeasurementUnknown);
    }
    // Evidence from further in the future than the window is treated as stale too.
    let age = now.abs_diff(e.issued_at);
    if age > max_age_s {
        return VerificationResult::from_reason(Reason::Stale);
    }
    VerificationResult::from_reason(Reason::Ok)
}

/// Parses then verifies; parse failures yield `malformed`.
pub fn verify_evidence_json(
    json: &[u8],
    expected_binding: &[u8; 32],
    role: Role,
    store: &ReferenceValueStore,
    now: u64,
    max_age_s: u64,
) -> (VerificationResult, Option<Evidence>) {
    match Evidence::from_json(json) {
        Ok(e) => (verify_evidence(&e, expected_binding, role, store, now, max_age_s), Some(e)),
        Err(_) => (VerificationResult::from_reason(Reason::Malformed), None),
    }
}
