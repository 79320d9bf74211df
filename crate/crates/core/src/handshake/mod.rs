//! The three-flight attested handshake.
//!
//! ```text
//! client                                              broker
//! ClientHello{random, dh, mode, ticket?, sealed AttReq}  ->
//!                <-  ServerHello{random, dh}
//!                    {EncryptedExtensions(AttServer), Certificate*,
//!                     CertificateVerify*, Finished}
//! {Certificate(att-client)*, CertificateVerify*, AttClient*, Finished}  ->
//!                <-  [NewSessionTicket] (first application-layer record)
//! ```
//!
//! `{}` is protected under handshake traffic keys; `*` depends on mode and
//! policy. The API is sans-IO: every step takes and returns flight bytes.

mod cert;
mod client;
pub mod codec;
pub mod messages;
pub mod record;
pub mod schedule;
mod server;
mod ticket;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::{unix_now, EmulatedTee, Reason, ReferenceValueStore};
use crate::crypto::{CryptoError, KeyPair};

pub use cert::{Certificate, ATT_CLIENT_EXTENSION};
pub use client::{client_begin, client_finish, client_finish_presenting, ClientFinished, ClientHandshake};
pub use record::{ContentType, DirectionState, RecordError, RecordLayer};
pub use server::{server_complete, server_respond, ServerComplete, ServerHandshake};
pub use ticket::{ClientTicket, SessionTicket, TicketTable, DEFAULT_TICKET_LIFETIME_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ecdh,
    Psk,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Ecdh => 0,
            Mode::Psk => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, HandshakeError> {
        match c {
            0 => Ok(Mode::Ecdh),
            1 => Ok(Mode::Psk),
            _ => Err(HandshakeError::Decode(format!("unknown mode {c}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ecdh => "ecdh",
            Mode::Psk => "psk",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ecdh" => Ok(Mode::Ecdh),
            "psk" => Ok(Mode::Psk),
            other => Err(format!("unknown mode {other:?} (expected ecdh or psk)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

/// Why an attestation step failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttestationFailure {
    /// Required evidence was not sent.
    Absent,
    Rejected(Reason),
}

impl fmt::Display for AttestationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttestationFailure::Absent => f.write_str("absent"),
            AttestationFailure::Rejected(r) => f.write_str(r.as_str()),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("attreq_unreadable")]
    AttReqUnreadable,
    #[error("unknown_psk")]
    UnknownPsk,
    #[error("bad_cert_chain")]
    BadCertChain,
    #[error("name_mismatch")]
    NameMismatch,
    #[error("bad_certificate_verify")]
    BadCertificateVerify,
    #[error("broker_attestation_failed{{{0}}}")]
    BrokerAttestationFailed(AttestationFailure),
    #[error("peer_attestation_failed{{{0}}}")]
    PeerAttestationFailed(AttestationFailure),
    #[error("bad_finished")]
    BadFinished,
    #[error("decrypt_error")]
    Decrypt,
    #[error("unexpected_message({0})")]
    UnexpectedMessage(&'static str),
    #[error("decode_error({0})")]
    Decode(String),
    #[error("crypto_error({0})")]
    Crypto(#[from] CryptoError),
    #[error("remote_alert({0})")]
    Alert(String),
    #[error("config_error({0})")]
    Config(String),
}

impl HandshakeError {
    /// Stable short code for logs and alerts.
    pub fn code(&self) -> String {
        match self {
            HandshakeError::Decode(_) => "decode_error".into(),
            HandshakeError::Crypto(_) => "crypto_error".into(),
            HandshakeError::Config(_) => "config_error".into(),
            HandshakeError::UnexpectedMessage(_) => "unexpected_message".into(),
            other => other.to_string(),
        }
    }
}

/// Authenticated identity of the other endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerIdentity {
    pub subject: String,
    pub cert_key: Option<[u8; 32]>,
    /// Present exactly when attestation of this peer succeeded.
    pub measurement: Option<[u8; 32]>,
}

impl PeerIdentity {
    pub fn new(subject: &str, cert_key: Option<[u8; 32]>, measurement: Option<[u8; 32]>) -> Self {
        PeerIdentity { subject: subject.to_owned(), cert_key, measurement }
    }

    /// A peer that presented no certificate.
    pub fn anonymous() -> Self {
        Self::new("", None, None)
    }

    pub fn attested(&self) -> bool {
        self.measurement.is_some()
    }

    pub fn is_anonymous(&self) -> bool {
        self.subject.is_empty()
    }

    /// Identity without the per-session attestation result.
    pub fn snapshot(&self) -> Self {
        PeerIdentity { measurement: None, ..self.clone() }
    }
}

/// Everything both endpoints agree on after a successful handshake.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub mode: Mode,
    pub client_app_traffic: schedule::Secret,
    pub server_app_traffic: schedule::Secret,
    pub binding_server: schedule::Secret,
    pub binding_client: schedule::Secret,
    pub resumption: schedule::Secret,
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKeys").field("mode", &self.mode).finish_non_exhaustive()
    }
}

/// Counts of expensive operations one endpoint performed during a handshake.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// X25519 key generations and shared-secret computations (including sealing the request).
    pub dh: u32,
    /// Certificate / CertificateVerify signatures produced.
    pub cert_sign: u32,
    /// Certificate / CertificateVerify signatures checked.
    pub cert_verify: u32,
    pub evidence_generated: u32,
    pub evidence_verified: u32,
}

impl OpCounters {
    pub fn signature_ops(&self) -> u32 {
        self.cert_sign + self.cert_verify
    }
}

/// Source of "now" for evidence timestamps and freshness checks.
#[derive(Debug, Clone, Copy, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now(&self) -> u64 {
        match self {
            Clock::System => unix_now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// A certificate and the key that proves possession of it.
#[derive(Debug, Clone)]
pub struct Credentials {
    pub cert: Certificate,
    pub key: KeyPair,
}

#[derive(Debug, Clone)]
pub struct ClientHandshakeConfig {
    pub broker_name: String,
    pub ech_public: [u8; 32],
    pub ca_anchor: [u8; 32],
    /// Ask the broker for evidence and refuse to proceed without valid evidence.
    pub att_required: bool,
    pub mode: Mode,
    pub ticket: Option<ClientTicket>,
    pub ref_store: Arc<ReferenceValueStore>,
    pub credentials: Option<Credentials>,
    /// When set, this client attests itself to the broker.
    pub tee: Option<Arc<EmulatedTee>>,
    pub max_age_s: u64,
    pub clock: Clock,
}

#[derive(Debug, Clone)]
pub struct ServerHandshakeConfig {
    pub credentials: Credentials,
    pub ech_key: KeyPair,
    pub ca_anchor: [u8; 32],
    pub tee: Option<Arc<EmulatedTee>>,
    pub ref_store: Arc<ReferenceValueStore>,
    pub tickets: Arc<TicketTable>,
    pub require_peer_attestation: bool,
    pub max_age_s: u64,
    pub clock: Clock,
}

/// Plaintext alert sent when a handshake aborts before traffic keys exist.
pub fn alert_message(err: &HandshakeError) -> Vec<u8> {
    messages::HandshakeMessage::Alert { reason: err.to_string() }.encode()
}
