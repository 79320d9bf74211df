//! TLS 1.3 shaped key schedule, plus the two channel-binding values that
//! attestation evidence is tied to.
//!
//! ```text
//! early      = Extract(0, psk | 0)
//! handshake  = Extract(Derive(early, "derived"), dh | 0)
//!   c/s hs traffic  = Expand(handshake, "c|s hs traffic", H(CH..SH))
//!   binding_server  = Expand(handshake, "att binding srv", H(CH..SH))
//! master     = Extract(Derive(handshake, "derived"), 0)
//!   c/s ap traffic  = Expand(master, "c|s ap traffic", H(CH..server Finished))
//!   binding_client  = Expand(master, "att binding cli", H(CH..server Finished))
//!   resumption      = Expand(master, "res master", H(CH..client Finished))
//! ```

use crate::crypto::{self, AeadKeyIv, Digest, HASH_LEN};

pub type Secret = [u8; HASH_LEN];

const ZERO: Secret = [0u8; HASH_LEN];

fn derived(secret: &Secret) -> Secret {
    let empty: [&[u8]; 0] = [];
    crypto::expand_secret(secret, "derived", crypto::transcript_hash(&empty).as_bytes())
}

pub fn early_secret(psk: Option<&Secret>) -> Secret {
    crypto::hkdf_extract(&ZERO, psk.unwrap_or(&ZERO))
}

pub fn handshake_secret(early: &Secret, dh_shared: Option<&Secret>) -> Secret {
    crypto::hkdf_extract(&derived(early), dh_shared.unwrap_or(&ZERO))
}

pub fn master_secret(handshake: &Secret) -> Secret {
    crypto::hkdf_extract(&derived(handshake), &ZERO)
}

/// Secrets available once ServerHello is on the transcript.
#[derive(Clone)]
pub struct HandshakeStage {
    pub handshake: Secret,
    pub client_hs_traffic: Secret,
    pub server_hs_traffic: Secret,
    pub binding_server: Secret,
}

impl HandshakeStage {
    pub fn derive(handshake: Secret, th_ch_sh: &Digest) -> Self {
        HandshakeStage {
            client_hs_traffic: crypto::expand_secret(&handshake, "c hs traffic", th_ch_sh.as_bytes()),
            server_hs_traffic: crypto::expand_secret(&handshake, "s hs traffic", th_ch_sh.as_bytes()),
            binding_server: crypto::expand_secret(&handshake, "att binding srv", th_ch_sh.as_bytes()),
            handshake,
        }
    }
}

/// Secrets available once the server Finished is on the transcript.
#[derive(Clone)]
pub struct ApplicationStage {
    pub master: Secret,
    pub client_app_traffic: Secret,
    pub server_app_traffic: Secret,
    pub binding_client: Secret,
}

impl ApplicationStage {
    pub fn derive(handshake: &Secret, th_through_server_finished: &Digest) -> Self {
        let master = master_secret(handshake);
        let th = th_through_server_finished.as_bytes();
        ApplicationStage {
            client_app_traffic: crypto::expand_secret(&master, "c ap traffic", th),
            server_app_traffic: crypto::expand_secret(&master, "s ap traffic", th),
            binding_client: crypto::expand_secret(&master, "att binding cli", th),
            master,
        }
    }

    pub fn resumption(&self, th_through_client_finished: &Digest) -> Secret {
        crypto::expand_secret(&self.master, "res master", th_through_client_finished.as_bytes())
    }
}

pub fn finished_verify_data(traffic_secret: &Secret, th: &Digest) -> Secret {
    crypto::expand_secret(traffic_secret, "finished", th.as_bytes())
}

pub fn ticket_psk(resumption: &Secret, ticket_id: &[u8; 16]) -> Secret {
    crypto::expand_secret(resumption, "ticket", ticket_id)
}

/// Key for the attestation request in PSK mode: the client already shares a
/// secret with the broker, so no public-key sealing is needed.
pub fn psk_attreq_key(early: &Secret, info: &[u8]) -> AeadKeyIv {
    let block = crypto::hkdf_expand_label(early, "attreq", info, 44).expect("in range");
    AeadKeyIv::from_block(&block).expect("44 bytes")
}

pub fn certificate_verify_input(server: bool, th: &Digest) -> Vec<u8> {
    let context: &[u8] =
        if server { b"mini-tls server CertificateVerify\0" } else { b"mini-tls client CertificateVerify\0" };
    [context, th.as_bytes()].concat()
}
