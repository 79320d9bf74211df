mod common;

use attested_pubsub::attestation::Reason;
use attested_pubsub::crypto::{KeyPair, KeyRole};
use attested_pubsub::handshake::messages::HandshakeMessage;
use attested_pubsub::handshake::{
    AttestationFailure, Certificate, ClientTicket, Credentials, HandshakeError, Mode, OpCounters,
};
use common::hs::{self, Ev, Flight, EVIDENCE_STATES};

#[test]
fn both_sides_agree_in_every_mode() {
    let f = hs::fixtures(1);
    let s = f.server_config(false);
    let mut rng = hs::rng(2);
    for mode in [Mode::Ecdh, Mode::Psk] {
        for attested in [false, true] {
            for _ in 0..10 {
                hs::agreement_trial(&f, &s, mode, attested, &mut rng)
                    .unwrap_or_else(|e| panic!("{mode:?} attested={attested}: {e}"));
            }
        }
    }
}

#[test]
fn bindings_differ_between_handshakes() {
    let f = hs::fixtures(3);
    let s = f.server_config(true);
    let c = f.client_handshake(Mode::Ecdh, true);
    let mut rng = hs::rng(4);
    let a = hs::run(&c, &s, &mut rng);
    let b = hs::run(&c, &s, &mut rng);
    let (ka, kb) = (&a.client.unwrap().keys, &b.client.unwrap().keys);
    assert_ne!(ka.binding_server, kb.binding_server);
    assert_ne!(ka.binding_client, kb.binding_client);
}

#[test]
fn required_policies_admit_only_valid_valid() {
    let f = hs::fixtures(5);
    for broker in EVIDENCE_STATES {
        for peer in EVIDENCE_STATES {
            hs::check_matrix_cell(&f, broker, peer, 6).unwrap();
        }
    }
}

#[test]
fn optional_policies_connect_without_evidence() {
    let f = hs::fixtures(7);
    let mut rng = hs::rng(8);

    // Broker has no TEE and the client does not ask for evidence.
    let (mut c, mut s) = hs::matrix_configs(&f, Ev::Absent, Ev::Valid);
    c.att_required = false;
    let r = hs::run(&c, &s, &mut rng);
    assert!(r.established());
    assert!(!r.client.as_ref().unwrap().broker.attested());
    assert!(r.server.unwrap().unwrap().peer.attested());

    // Peer has no TEE and the broker does not require peer evidence.
    let (c, _) = hs::matrix_configs(&f, Ev::Valid, Ev::Absent);
    s = f.server_config(false);
    let r = hs::run(&c, &s, &mut rng);
    assert!(r.established());
    assert!(!r.server.unwrap().unwrap().peer.attested());

    // Invalid evidence is refused even when it was optional.
    let (c, _) = hs::matrix_configs(&f, Ev::Valid, Ev::Invalid);
    let r = hs::run(&c, &s, &mut rng);
    assert_eq!(
        r.server_err(),
        Some(&HandshakeError::PeerAttestationFailed(AttestationFailure::Rejected(Reason::UnknownRoot)))
    );
}

#[test]
fn broker_omits_evidence_when_not_asked() {
    let f = hs::fixtures(9);
    let s = f.server_config(false);
    let c = f.client_handshake(Mode::Ecdh, false);
    let r = hs::run(&c, &s, &mut hs::rng(10));
    let done = r.server.unwrap().unwrap();
    assert_eq!(done.ops.evidence_generated, 0);
}

#[test]
fn replayed_peer_evidence_is_bound_to_its_session() {
    let f = hs::fixtures(11);
    let s = f.server_config(true);
    let mut rng = hs::rng(12);
    for mode in [Mode::Ecdh, Mode::Psk] {
        hs::replay_trial(&f, &s, mode, &mut rng).unwrap();
    }
}

#[test]
fn corrupting_any_message_prevents_a_session() {
    let f = hs::fixtures(13);
    let s = f.server_config(true);
    let mut rng = hs::rng(14);
    let base = {
        let c = f.client_handshake(Mode::Ecdh, true);
        hs::run(&c, &s, &mut rng)
    };
    let sizes = [
        (Flight::One, base.flight1.len()),
        (Flight::Two, base.flight2.len()),
        (Flight::Three, base.flight3.as_ref().unwrap().len()),
    ];
    for (flight, len) in sizes {
        // Every byte of the hello, then a stride through the protected records.
        let step = if flight == Flight::One { 1 } else { 5 };
        for pos in (0..len).step_by(step) {
            let c = f.client_handshake(Mode::Ecdh, true);
            let r = hs::run_tampered(&c, &s, &mut rng, None, &mut |which, bytes| {
                if which == flight && pos < bytes.len() {
                    bytes[pos] ^= 0x01;
                }
            });
            assert!(!r.established(), "flip of byte {pos} in {flight:?} went unnoticed");
        }
    }
}

#[test]
fn psk_hello_corruption_is_detected() {
    let f = hs::fixtures(15);
    let s = f.server_config(false);
    let mut rng = hs::rng(16);
    let len = {
        let c = hs::client_for(&f, &s, Mode::Psk, true, &mut rng).unwrap();
        hs::run(&c, &s, &mut rng).flight1.len()
    };
    for pos in 0..len {
        let c = hs::client_for(&f, &s, Mode::Psk, true, &mut rng).unwrap();
        let r = hs::run_tampered(&c, &s, &mut rng, None, &mut |which, bytes| {
            if which == Flight::One {
                bytes[pos] ^= 0x80;
            }
        });
        assert!(!r.established(), "byte {pos}");
    }
}

#[test]
fn broker_name_must_match_certificate() {
    let f = hs::fixtures(17);
    let s = f.server_config(true);
    let mut c = f.client_handshake(Mode::Ecdh, true);
    c.broker_name = "other-broker.example".into();
    let r = hs::run(&c, &s, &mut hs::rng(18));
    assert_eq!(r.client.err(), Some(HandshakeError::NameMismatch));
}

#[test]
fn broker_certificate_must_chain_to_the_anchor() {
    let f = hs::fixtures(19);
    let mut rng = hs::rng(20);
    let rogue_ca = KeyPair::generate(KeyRole::Signing, &mut rng);
    let mut s = f.server_config(true);
    let cert = Certificate::issue(&f.broker_name, f.broker.key.public(), vec![], "Rogue CA", &rogue_ca);
    s.credentials = Credentials { cert, key: f.broker.key.clone() };
    let c = f.client_handshake(Mode::Ecdh, true);
    assert_eq!(hs::run(&c, &s, &mut rng).client.err(), Some(HandshakeError::BadCertChain));

    // A self-signed broker certificate is not enough either.
    let mut s = f.server_config(true);
    s.credentials.cert = Certificate::self_signed(&f.broker_name, &f.broker.key, vec![]);
    assert_eq!(hs::run(&c, &s, &mut rng).client.err(), Some(HandshakeError::BadCertChain));
}

#[test]
fn stolen_certificate_without_key_fails_certificate_verify() {
    let f = hs::fixtures(21);
    let mut rng = hs::rng(22);
    let mut s = f.server_config(true);
    s.credentials.key = KeyPair::generate(KeyRole::Signing, &mut rng);
    let c = f.client_handshake(Mode::Ecdh, true);
    assert_eq!(hs::run(&c, &s, &mut rng).client.err(), Some(HandshakeError::BadCertificateVerify));
}

#[test]
fn operation_counts_per_mode() {
    let f = hs::fixtures(23);
    let s = f.server_config(true);
    let mut rng = hs::rng(24);
    let c = f.client_handshake(Mode::Ecdh, true);
    let r = hs::run(&c, &s, &mut rng);
    let client = r.client.as_ref().unwrap();
    let server = r.server.as_ref().unwrap().as_ref().unwrap();
    let full_client = OpCounters { dh: 4, cert_sign: 2, cert_verify: 2, evidence_generated: 1, evidence_verified: 1 };
    let full_server = OpCounters { dh: 3, cert_sign: 1, cert_verify: 2, evidence_generated: 1, evidence_verified: 1 };
    assert_eq!(client.ops, full_client);
    assert_eq!(server.ops, full_server);

    let mut c = c.clone();
    c.mode = Mode::Psk;
    c.ticket = Some(r.client_ticket());
    let r = hs::run(&c, &s, &mut rng);
    for ops in [r.client.as_ref().unwrap().ops, r.server.as_ref().unwrap().as_ref().unwrap().ops] {
        assert_eq!((ops.dh, ops.signature_ops()), (0, 0), "{ops:?}");
        assert_eq!((ops.evidence_generated, ops.evidence_verified), (1, 1));
    }
}

#[test]
fn tickets_are_single_use_and_must_exist() {
    let f = hs::fixtures(25);
    let s = f.server_config(false);
    let mut rng = hs::rng(26);
    let c = hs::client_for(&f, &s, Mode::Psk, false, &mut rng).unwrap();
    assert!(hs::run(&c, &s, &mut rng).established());
    let again = hs::run(&c, &s, &mut rng);
    assert_eq!(again.server_err(), Some(&HandshakeError::UnknownPsk));
    assert_eq!(again.client.err(), Some(HandshakeError::Alert("unknown_psk".into())));

    let mut forged = c.clone();
    forged.ticket = Some(ClientTicket { ticket_id: [7; 16], psk: [7; 32] });
    assert_eq!(hs::run(&forged, &s, &mut rng).server_err(), Some(&HandshakeError::UnknownPsk));
}

#[test]
fn resumption_keeps_the_certificate_identity() {
    let f = hs::fixtures(27);
    let s = f.server_config(true);
    let mut rng = hs::rng(28);
    let c = hs::client_for(&f, &s, Mode::Psk, true, &mut rng).unwrap();
    let r = hs::run(&c, &s, &mut rng);
    let peer = r.server.unwrap().unwrap().peer;
    assert_eq!(peer.subject, f.peer.cert.subject);
    assert_eq!(peer.measurement, Some(f.peer_tee().measurement()));
}

#[test]
fn attestation_request_size_does_not_reveal_policy() {
    let f = hs::fixtures(29);
    let mut rng = hs::rng(30);
    let plain = attested_pubsub::handshake::client_begin(&f.client_handshake(Mode::Ecdh, false), &mut rng).unwrap().1;
    let attested = attested_pubsub::handshake::client_begin(&f.client_handshake(Mode::Ecdh, true), &mut rng).unwrap().1;
    assert_eq!(plain.len(), attested.len());
}

#[test]
fn attested_client_sends_reissued_certificate() {
    let f = hs::fixtures(31);
    let s = f.server_config(true);
    let r = hs::run(&f.client_handshake(Mode::Ecdh, true), &s, &mut hs::rng(32));
    assert!(r.established());
    assert!(matches!(hs::client_reads_post(&r), Ok(HandshakeMessage::NewSessionTicket { .. })));
}
