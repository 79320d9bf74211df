use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::client::attreq_info;
use super::messages::{split_messages, AttReq, HandshakeMessage, ServerHello};
use super::record::{ContentType, DirectionState};
use super::schedule::{self, ApplicationStage, HandshakeStage};
use super::{
    AttestationFailure, HandshakeError, Mode, OpCounters, PeerIdentity, ServerHandshakeConfig, SessionKeys,
    SessionTicket,
};
use crate::attestation::{verify_evidence_json, Role};
use crate::crypto::{self, transcript_hash, AeadKeyIv};

/// Broker state between flight 2 and flight 3.
pub struct ServerHandshake {
    mode: Mode,
    hs: HandshakeStage,
    app: ApplicationStage,
    transcript: Vec<u8>,
    resumed: Option<PeerIdentity>,
    client_requested_attestation: bool,
    ops: OpCounters,
}

impl ServerHandshake {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Whether the client asked this broker for evidence.
    pub fn client_requested_attestation(&self) -> bool {
        self.client_requested_attestation
    }

    /// First server application record announcing why the handshake failed.
    pub fn alert_record(&self, err: &HandshakeError) -> Vec<u8> {
        let mut dir = DirectionState::new(AeadKeyIv::from_traffic_secret(&self.app.server_app_traffic));
        dir.seal(ContentType::Alert, &super::alert_message(err)).expect("fresh direction")
    }
}

/// Result of [`server_complete`].
#[derive(Debug)]
pub struct ServerComplete {
    pub keys: SessionKeys,
    pub peer: PeerIdentity,
    /// Already stored in the ticket table; announce it with [`ServerComplete::ticket_message`].
    pub ticket: SessionTicket,
    pub ops: OpCounters,
}

impl ServerComplete {
    pub fn ticket_message(&self) -> Vec<u8> {
        HandshakeMessage::NewSessionTicket { ticket_id: self.ticket.ticket_id, lifetime_s: self.ticket.lifetime_s }
            .encode()
    }
}

/// Processes flight 1 and produces flight 2.
pub fn server_respond<R: RngCore + CryptoRng>(
    cfg: &ServerHandshakeConfig,
    flight1: &[u8],
    rng: &mut R,
) -> Result<(ServerHandshake, Vec<u8>), HandshakeError> {
    let HandshakeMessage::ClientHello(ch) = HandshakeMessage::decode(flight1)? else {
        return Err(HandshakeError::UnexpectedMessage("ClientHello"));
    };
    let mut ops = OpCounters::default();
    let now = cfg.clock.now();
    let info = attreq_info(&ch.random);

    let (early, dh_shared, server_dh, attreq_plain, resumed) = match ch.mode {
        Mode::Psk => {
            if ch.dh_public.is_some() || ch.ech_enc.is_some() {
                return Err(HandshakeError::Decode("psk hello carries a key share".into()));
            }
            let id = ch.ticket_id.ok_or(HandshakeError::UnknownPsk)?;
            let ticket = cfg.tickets.take(&id, now).ok_or(HandshakeError::UnknownPsk)?;
            let early = schedule::early_secret(Some(&ticket.psk));
            let key = schedule::psk_attreq_key(&early, &info);
            let plain =
                crypto::aead_open(&key, 0, &id, &ch.ech_payload).map_err(|_| HandshakeError::AttReqUnreadable)?;
            (early, None, None, plain, Some(ticket.peer_identity))
        }
        Mode::Ecdh => {
            let client_pub = ch.dh_public.ok_or(HandshakeError::Decode("missing key share".into()))?;
            let enc = ch.ech_enc.ok_or(HandshakeError::AttReqUnreadable)?;
            ops.dh += 1;
            let plain = crypto::pk_open(&cfg.ech_key, &enc, &info, &ch.ech_payload)
                .map_err(|_| HandshakeError::AttReqUnreadable)?;
            let kp = crypto::dh_generate(rng);
            ops.dh += 2;
            let shared = crypto::dh_shared(&kp, &client_pub)?;
            (schedule::early_secret(None), Some(shared), Some(kp.public()), plain, None)
        }
    };
    let attreq = AttReq::decode(&attreq_plain).map_err(|_| HandshakeError::AttReqUnreadable)?;

    let mut random = [0u8; 32];
    rng.fill_bytes(&mut random);
    let sh = HandshakeMessage::ServerHello(ServerHello { random, dh_public: server_dh, mode: ch.mode }).encode();
    let mut transcript = [flight1, &sh].concat();
    let hs = HandshakeStage::derive(
        schedule::handshake_secret(&early, dh_shared.as_ref()),
        &transcript_hash(&[&transcript]),
    );

    let att_server = match (&cfg.tee, attreq.att_required) {
        (Some(tee), true) => {
            ops.evidence_generated += 1;
            Some(tee.generate_evidence_at(hs.binding_server, &BTreeMap::new(), now).to_canonical_json())
        }
        _ => None,
    };
    let mut inner = Vec::new();
    let ee = HandshakeMessage::EncryptedExtensions { att_server }.encode();
    transcript.extend_from_slice(&ee);
    inner.extend_from_slice(&ee);
    if ch.mode == Mode::Ecdh {
        let cert = HandshakeMessage::Certificate(cfg.credentials.cert.clone()).encode();
        transcript.extend_from_slice(&cert);
        let input = schedule::certificate_verify_input(true, &transcript_hash(&[&transcript]));
        ops.cert_sign += 1;
        let cv = HandshakeMessage::CertificateVerify { signature: crypto::sign(&cfg.credentials.key, &input) }.encode();
        transcript.extend_from_slice(&cv);
        inner.extend_from_slice(&cert);
        inner.extend_from_slice(&cv);
    }
    let verify_data = schedule::finished_verify_data(&hs.server_hs_traffic, &transcript_hash(&[&transcript]));
    let fin = HandshakeMessage::Finished { verify_data }.encode();
    transcript.extend_from_slice(&fin);
    inner.extend_from_slice(&fin);

    let mut server_hs = DirectionState::new(AeadKeyIv::from_traffic_secret(&hs.server_hs_traffic));
    let record = server_hs.seal(ContentType::Handshake, &inner).map_err(|e| HandshakeError::Decode(e.to_string()))?;
    let app = ApplicationStage::derive(&hs.handshake, &transcript_hash(&[&transcript]));

    let flight2 = [sh, record].concat();
    let state = ServerHandshake {
        mode: ch.mode,
        hs,
        app,
        transcript,
        resumed,
        client_requested_attestation: attreq.att_required,
        ops,
    };
    Ok((state, flight2))
}

/// Processes flight 3, authenticates the peer and issues a resumption ticket.
///
/// On error the caller may still send [`ServerHandshake::alert_record`].
pub fn server_complete<R: RngCore + CryptoRng>(
    state: &mut ServerHandshake,
    cfg: &ServerHandshakeConfig,
    flight3: &[u8],
    rng: &mut R,
) -> Result<ServerComplete, HandshakeError> {
    let mut client_hs = DirectionState::new(AeadKeyIv::from_traffic_secret(&state.hs.client_hs_traffic));
    let (ct, plain) = client_hs.open(flight3).map_err(|_| HandshakeError::Decrypt)?;
    if ct != ContentType::Handshake {
        return Err(HandshakeError::UnexpectedMessage("handshake record"));
    }
    let msgs = split_messages(&plain)?;
    let (fin_bytes, body) = msgs.split_last().ok_or(HandshakeError::UnexpectedMessage("Finished"))?;

    let mut cert = None;
    let mut cv = None;
    let mut att_client = None;
    let mut th_cert = None;
    for (i, m) in body.iter().enumerate() {
        let decoded = HandshakeMessage::decode(m)?;
        match (state.mode, i, decoded) {
            (Mode::Ecdh, 0, HandshakeMessage::Certificate(c)) => {
                cert = Some(c);
                state.transcript.extend_from_slice(m);
                th_cert = Some(transcript_hash(&[&state.transcript]));
                continue;
            }
            (Mode::Ecdh, 1, HandshakeMessage::CertificateVerify { signature }) if cert.is_some() => {
                cv = Some(signature)
            }
            (Mode::Psk, 0, HandshakeMessage::AttClient { evidence }) => att_client = Some(evidence),
            _ => return Err(HandshakeError::UnexpectedMessage("client flight")),
        }
        state.transcript.extend_from_slice(m);
    }
    if cert.is_some() && cv.is_none() {
        return Err(HandshakeError::UnexpectedMessage("CertificateVerify"));
    }

    let HandshakeMessage::Finished { verify_data } = HandshakeMessage::decode(fin_bytes)? else {
        return Err(HandshakeError::UnexpectedMessage("Finished"));
    };
    let expected = schedule::finished_verify_data(&state.hs.client_hs_traffic, &transcript_hash(&[&state.transcript]));
    if expected != verify_data {
        return Err(HandshakeError::BadFinished);
    }
    state.transcript.extend_from_slice(fin_bytes);

    if let (Some(c), Some(sig), Some(th)) = (&cert, &cv, &th_cert) {
        state.ops.cert_verify += 1;
        if !(c.is_signed_by(&cfg.ca_anchor) || c.is_self_signed()) {
            return Err(HandshakeError::BadCertChain);
        }
        state.ops.cert_verify += 1;
        let input = schedule::certificate_verify_input(false, th);
        if !crypto::verify_sig(&c.public_key, &input, sig).unwrap_or(false) {
            return Err(HandshakeError::BadCertificateVerify);
        }
        if let Some(ext) = c.att_client_extension()? {
            att_client = Some(ext.to_vec());
        }
    }

    let now = cfg.clock.now();
    let mut measurement = None;
    match att_client {
        Some(json) => {
            state.ops.evidence_verified += 1;
            let (result, evidence) =
                verify_evidence_json(&json, &state.app.binding_client, Role::Peer, &cfg.ref_store, now, cfg.max_age_s);
            if !result.accepted() {
                return Err(HandshakeError::PeerAttestationFailed(AttestationFailure::Rejected(result.reason())));
            }
            measurement = evidence.map(|e| e.measurement);
        }
        None if cfg.require_peer_attestation => {
            return Err(HandshakeError::PeerAttestationFailed(AttestationFailure::Absent));
        }
        None => {}
    }

    let peer = match (&cert, state.resumed.take()) {
        (Some(c), _) => PeerIdentity::new(&c.subject, Some(c.public_key), measurement),
        (None, Some(snapshot)) => PeerIdentity { measurement, ..snapshot },
        (None, None) => PeerIdentity { measurement, ..PeerIdentity::anonymous() },
    };

    let keys = SessionKeys {
        mode: state.mode,
        client_app_traffic: state.app.client_app_traffic,
        server_app_traffic: state.app.server_app_traffic,
        binding_server: state.hs.binding_server,
        binding_client: state.app.binding_client,
        resumption: state.app.resumption(&transcript_hash(&[&state.transcript])),
    };
    let ticket = SessionTicket::issue(&keys.resumption, peer.clone(), now, rng);
    cfg.tickets.insert(ticket.clone(), now);
    Ok(ServerComplete { keys, peer, ticket, ops: state.ops })
}
