use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::codec::split_message;
use super::messages::{self, split_messages, AttReq, ClientHello, HandshakeMessage};
use super::record::{ContentType, DirectionState};
use super::schedule::{self, ApplicationStage, HandshakeStage, Secret};
use super::{
    AttestationFailure, Certificate, ClientHandshakeConfig, HandshakeError, Mode, OpCounters, PeerIdentity,
    SessionKeys, ATT_CLIENT_EXTENSION,
};
use crate::attestation::{verify_evidence_json, Role};
use crate::crypto::{self, transcript_hash, AeadKeyIv, KeyPair};

/// Client state between flight 1 and flight 3.
pub struct ClientHandshake {
    random: [u8; 32],
    mode: Mode,
    dh: Option<KeyPair>,
    early: Secret,
    transcript: Vec<u8>,
    ops: OpCounters,
}

/// Result of [`client_finish`].
#[derive(Debug)]
pub struct ClientFinished {
    pub keys: SessionKeys,
    pub flight3: Vec<u8>,
    pub broker: PeerIdentity,
    pub ops: OpCounters,
}

pub(crate) fn attreq_info(random: &[u8; 32]) -> Vec<u8> {
    [b"attreq".as_slice(), random].concat()
}

fn check_config(cfg: &ClientHandshakeConfig) -> Result<(), HandshakeError> {
    if cfg.mode == Mode::Psk && cfg.ticket.is_none() {
        return Err(HandshakeError::Config("psk mode requires a ticket".into()));
    }
    if cfg.mode == Mode::Ecdh && cfg.tee.is_some() && cfg.credentials.is_none() {
        return Err(HandshakeError::Config("an attesting client needs a certificate".into()));
    }
    Ok(())
}

/// Builds flight 1: ClientHello carrying the sealed attestation request.
pub fn client_begin<R: RngCore + CryptoRng>(
    cfg: &ClientHandshakeConfig,
    rng: &mut R,
) -> Result<(ClientHandshake, Vec<u8>), HandshakeError> {
    check_config(cfg)?;
    let mut ops = OpCounters::default();
    let mut random = [0u8; 32];
    rng.fill_bytes(&mut random);
    let attreq = AttReq::new(cfg.att_required).encode();
    let info = attreq_info(&random);

    let (dh, early, ticket_id, ech_enc, ech_payload) = match cfg.mode {
        Mode::Ecdh => {
            let dh = crypto::dh_generate(rng);
            let (enc, sealed) = crypto::pk_seal(&cfg.ech_public, &info, &attreq, rng)?;
            // key share generation + ephemeral generation + sealing DH
            ops.dh += 3;
            (Some(dh), schedule::early_secret(None), None, Some(enc), sealed)
        }
        Mode::Psk => {
            let ticket = cfg.ticket.as_ref().expect("checked above");
            let early = schedule::early_secret(Some(&ticket.psk));
            let key = schedule::psk_attreq_key(&early, &info);
            let sealed = crypto::aead_seal(&key, 0, &ticket.ticket_id, &attreq);
            (None, early, Some(ticket.ticket_id), None, sealed)
        }
    };

    let hello = HandshakeMessage::ClientHello(ClientHello {
        random,
        dh_public: dh.as_ref().map(|k| k.public()),
        mode: cfg.mode,
        ticket_id,
        ech_enc,
        ech_payload,
    })
    .encode();

    let state = ClientHandshake { random, mode: cfg.mode, dh, early, transcript: hello.clone(), ops };
    Ok((state, hello))
}

impl ClientHandshake {
    pub fn random(&self) -> &[u8; 32] {
        &self.random
    }
}

/// Processes flight 2 and produces flight 3 plus the session keys.
pub fn client_finish(
    state: ClientHandshake,
    cfg: &ClientHandshakeConfig,
    flight2: &[u8],
) -> Result<ClientFinished, HandshakeError> {
    finish(state, cfg, flight2, None)
}

/// Like [`client_finish`], but presents `evidence` verbatim instead of
/// generating fresh evidence. Models a peer replaying captured evidence.
#[doc(hidden)]
pub fn client_finish_presenting(
    state: ClientHandshake,
    cfg: &ClientHandshakeConfig,
    flight2: &[u8],
    evidence: Vec<u8>,
) -> Result<ClientFinished, HandshakeError> {
    finish(state, cfg, flight2, Some(evidence))
}

fn finish(
    mut state: ClientHandshake,
    cfg: &ClientHandshakeConfig,
    flight2: &[u8],
    presented: Option<Vec<u8>>,
) -> Result<ClientFinished, HandshakeError> {
    let (msg_type, sh_bytes, protected) = split_message(flight2)?;
    if msg_type == messages::ALERT {
        if let HandshakeMessage::Alert { reason } = HandshakeMessage::decode(sh_bytes)? {
            return Err(HandshakeError::Alert(reason));
        }
    }
    let HandshakeMessage::ServerHello(sh) = HandshakeMessage::decode(sh_bytes)? else {
        return Err(HandshakeError::UnexpectedMessage("ServerHello"));
    };
    if sh.mode != state.mode {
        return Err(HandshakeError::Decode("server changed handshake mode".into()));
    }
    let dh_shared = match (state.mode, &state.dh, sh.dh_public) {
        (Mode::Ecdh, Some(kp), Some(server_pub)) => {
            state.ops.dh += 1;
            Some(crypto::dh_shared(kp, &server_pub)?)
        }
        (Mode::Psk, None, None) => None,
        _ => return Err(HandshakeError::Decode("key share does not match mode".into())),
    };
    state.transcript.extend_from_slice(sh_bytes);

    let hs = HandshakeStage::derive(
        schedule::handshake_secret(&state.early, dh_shared.as_ref()),
        &transcript_hash(&[&state.transcript]),
    );

    let mut server_hs = DirectionState::new(AeadKeyIv::from_traffic_secret(&hs.server_hs_traffic));
    let (ct, plain) = server_hs.open(protected).map_err(|_| HandshakeError::Decrypt)?;
    if ct != ContentType::Handshake {
        return Err(HandshakeError::UnexpectedMessage("handshake record"));
    }
    let msgs = split_messages(&plain)?;
    let mut it = msgs.into_iter();

    let ee = it.next().ok_or(HandshakeError::UnexpectedMessage("EncryptedExtensions"))?;
    let HandshakeMessage::EncryptedExtensions { att_server } = HandshakeMessage::decode(ee)? else {
        return Err(HandshakeError::UnexpectedMessage("EncryptedExtensions"));
    };
    state.transcript.extend_from_slice(ee);

    let mut server_cert = None;
    if state.mode == Mode::Ecdh {
        let cert_bytes = it.next().ok_or(HandshakeError::UnexpectedMessage("Certificate"))?;
        let HandshakeMessage::Certificate(cert) = HandshakeMessage::decode(cert_bytes)? else {
            return Err(HandshakeError::UnexpectedMessage("Certificate"));
        };
        state.transcript.extend_from_slice(cert_bytes);
        let th_cert = transcript_hash(&[&state.transcript]);

        let cv_bytes = it.next().ok_or(HandshakeError::UnexpectedMessage("CertificateVerify"))?;
        let HandshakeMessage::CertificateVerify { signature } = HandshakeMessage::decode(cv_bytes)? else {
            return Err(HandshakeError::UnexpectedMessage("CertificateVerify"));
        };
        state.transcript.extend_from_slice(cv_bytes);
        server_cert = Some((cert, th_cert, signature));
    }

    let fin_bytes = it.next().ok_or(HandshakeError::UnexpectedMessage("Finished"))?;
    let HandshakeMessage::Finished { verify_data } = HandshakeMessage::decode(fin_bytes)? else {
        return Err(HandshakeError::UnexpectedMessage("Finished"));
    };
    if it.next().is_some() {
        return Err(HandshakeError::UnexpectedMessage("end of server flight"));
    }
    let expected = schedule::finished_verify_data(&hs.server_hs_traffic, &transcript_hash(&[&state.transcript]));
    if expected != verify_data {
        return Err(HandshakeError::BadFinished);
    }
    state.transcript.extend_from_slice(fin_bytes);

    if let Some((cert, th_cert, signature)) = &server_cert {
        state.ops.cert_verify += 1;
        if !cert.is_signed_by(&cfg.ca_anchor) {
            return Err(HandshakeError::BadCertChain);
        }
        state.ops.cert_verify += 1;
        let input = schedule::certificate_verify_input(true, th_cert);
        if !crypto::verify_sig(&cert.public_key, &input, signature).unwrap_or(false) {
            return Err(HandshakeError::BadCertificateVerify);
        }
        if cert.subject != cfg.broker_name {
            return Err(HandshakeError::NameMismatch);
        }
    }

    let mut broker_measurement = None;
    if cfg.att_required {
        let json = att_server.ok_or(HandshakeError::BrokerAttestationFailed(AttestationFailure::Absent))?;
        state.ops.evidence_verified += 1;
        let (result, evidence) = verify_evidence_json(
            &json,
            &hs.binding_server,
            Role::Broker,
            &cfg.ref_store,
            cfg.clock.now(),
            cfg.max_age_s,
        );
        if !result.accepted() {
            return Err(HandshakeError::BrokerAttestationFailed(AttestationFailure::Rejected(result.reason())));
        }
        broker_measurement = evidence.map(|e| e.measurement);
    }

    let app = ApplicationStage::derive(&hs.handshake, &transcript_hash(&[&state.transcript]));

    let mut out_msgs: Vec<Vec<u8>> = Vec::new();
    let evidence = presented.or_else(|| {
        cfg.tee.as_ref().map(|tee| {
            state.ops.evidence_generated += 1;
            tee.generate_evidence_at(app.binding_client, &BTreeMap::new(), cfg.clock.now()).to_canonical_json()
        })
    });
    match state.mode {
        Mode::Ecdh => {
            if let Some(creds) = &cfg.credentials {
                let cert = match &evidence {
                    Some(ev) => {
                        state.ops.cert_sign += 1;
                        Certificate::self_signed(
                            &creds.cert.subject,
                            &creds.key,
                            vec![(ATT_CLIENT_EXTENSION.to_owned(), ev.clone())],
                        )
                    }
                    None => creds.cert.clone(),
                };
                let cert_msg = HandshakeMessage::Certificate(cert).encode();
                state.transcript.extend_from_slice(&cert_msg);
                let input = schedule::certificate_verify_input(false, &transcript_hash(&[&state.transcript]));
                state.ops.cert_sign += 1;
                let cv = HandshakeMessage::CertificateVerify { signature: crypto::sign(&creds.key, &input) }.encode();
                state.transcript.extend_from_slice(&cv);
                out_msgs.push(cert_msg);
                out_msgs.push(cv);
            }
        }
        Mode::Psk => {
            if let Some(ev) = evidence {
                let m = HandshakeMessage::AttClient { evidence: ev }.encode();
                state.transcript.extend_from_slice(&m);
                out_msgs.push(m);
            }
        }
    }
    let verify_data = schedule::finished_verify_data(&hs.client_hs_traffic, &transcript_hash(&[&state.transcript]));
    let fin = HandshakeMessage::Finished { verify_data }.encode();
    state.transcript.extend_from_slice(&fin);
    out_msgs.push(fin);

    let mut client_hs = DirectionState::new(AeadKeyIv::from_traffic_secret(&hs.client_hs_traffic));
    let flight3 = client_hs
        .seal(ContentType::Handshake, &out_msgs.concat())
        .map_err(|e| HandshakeError::Decode(e.to_string()))?;

    let keys = SessionKeys {
        mode: state.mode,
        client_app_traffic: app.client_app_traffic,
        server_app_traffic: app.server_app_traffic,
        binding_server: hs.binding_server,
        binding_client: app.binding_client,
        resumption: app.resumption(&transcript_hash(&[&state.transcript])),
    };
    let broker = match server_cert {
        Some((cert, _, _)) => PeerIdentity::new(&cert.subject, Some(cert.public_key), broker_measurement),
        None => PeerIdentity::new(&cfg.broker_name, None, broker_measurement),
    };
    Ok(ClientFinished { keys, flight3, broker, ops: state.ops })
}
