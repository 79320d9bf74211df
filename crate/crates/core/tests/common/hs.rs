//! In-memory handshake driver: runs both sides over byte buffers so tests
//! can inspect and tamper with every flight.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use attested_pubsub::attestation::{DeviceRecord, EmulatedTee, DEFAULT_TEE_TYPE};
use attested_pubsub::crypto::{KeyPair, KeyRole};
use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use attested_pubsub::handshake::messages::HandshakeMessage;
use attested_pubsub::handshake::{
    self, alert_message, AttestationFailure, ClientFinished, ClientHandshakeConfig, ClientTicket, ContentType,
    HandshakeError, Mode, RecordLayer, ServerComplete, ServerHandshakeConfig, Side,
};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn fixtures(seed: u64) -> Fixtures {
    Fixtures::generate(DEFAULT_BROKER_NAME, &mut rng(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flight {
    One,
    Two,
    Three,
}

pub struct Run {
    pub flight1: Vec<u8>,
    pub flight2: Vec<u8>,
    pub flight3: Option<Vec<u8>>,
    /// The broker's first protected record: ticket or alert.
    pub post: Option<Vec<u8>>,
    pub client: Result<ClientFinished, HandshakeError>,
    /// `None` when the client aborted before sending flight 3.
    pub server: Option<Result<ServerComplete, HandshakeError>>,
}

impl Run {
    pub fn established(&self) -> bool {
        self.client.is_ok() && matches!(self.server, Some(Ok(_)))
    }

    pub fn server_err(&self) -> Option<&HandshakeError> {
        self.server.as_ref().and_then(|r| r.as_ref().err())
    }

    /// Every byte a passive observer sees, in order.
    pub fn wire(&self) -> Vec<u8> {
        let mut w = self.flight1.clone();
        w.extend(&self.flight2);
        w.extend(self.flight3.iter().flatten());
        w.extend(self.post.iter().flatten());
        w
    }

    /// The ticket a client derives from the broker's announcement.
    pub fn client_ticket(&self) -> ClientTicket {
        let c = self.client.as_ref().expect("client finished");
        let s = self.server.as_ref().expect("server ran").as_ref().expect("server completed");
        ClientTicket::from_announcement(&c.keys.resumption, s.ticket.ticket_id)
    }
}

pub fn run<R: rand::RngCore + rand::CryptoRng>(
    c: &ClientHandshakeConfig,
    s: &ServerHandshakeConfig,
    rng: &mut R,
) -> Run {
    run_tampered(c, s, rng, None, &mut |_, _| {})
}

/// Runs a handshake, letting `tamper` rewrite each flight in transit.
/// `presented` replaces the client's evidence when set.
pub fn run_tampered<R: rand::RngCore + rand::CryptoRng>(
    c: &ClientHandshakeConfig,
    s: &ServerHandshakeConfig,
    rng: &mut R,
    presented: Option<Vec<u8>>,
    tamper: &mut dyn FnMut(Flight, &mut Vec<u8>),
) -> Run {
    let (cstate, mut flight1) = handshake::client_begin(c, rng).expect("client config");
    tamper(Flight::One, &mut flight1);
    let (mut sstate, mut flight2) = match handshake::server_respond(s, &flight1, rng) {
        Ok(v) => v,
        Err(e) => {
            let alert = alert_message(&e);
            return Run {
                client: handshake::client_finish(cstate, c, &alert),
                flight1,
                flight2: alert,
                flight3: None,
                post: None,
                server: Some(Err(e)),
            };
        }
    };
    tamper(Flight::Two, &mut flight2);
    let finished = match presented {
        Some(ev) => handshake::client_finish_presenting(cstate, c, &flight2, ev),
        None => handshake::client_finish(cstate, c, &flight2),
    };
    let finished = match finished {
        Ok(f) => f,
        Err(e) => return Run { flight1, flight2, flight3: None, post: None, client: Err(e), server: None },
    };
    let mut flight3 = finished.flight3.clone();
    tamper(Flight::Three, &mut flight3);
    let (server, post) = match handshake::server_complete(&mut sstate, s, &flight3, rng) {
        Ok(done) => {
            let mut layer = RecordLayer::new(&done.keys, Side::Server);
            let nst = layer.record_send(ContentType::Handshake, &done.ticket_message()).expect("record");
            (Ok(done), nst)
        }
        Err(e) => {
            let alert = sstate.alert_record(&e);
            (Err(e), alert)
        }
    };
    Run { flight1, flight2, flight3: Some(flight3), post: Some(post), client: Ok(finished), server: Some(server) }
}

/// What the client learns from the broker's first record.
pub fn client_reads_post(run: &Run) -> Result<HandshakeMessage, String> {
    let c = run.client.as_ref().map_err(|e| e.to_string())?;
    let post = run.post.as_ref().ok_or("no post-handshake record")?;
    let mut layer = RecordLayer::new(&c.keys, Side::Client);
    let (_, body) = layer.record_recv(post).map_err(|e| e.to_string())?;
    HandshakeMessage::decode(&body).map_err(|e| e.to_string())
}

/// Client config for `mode`, attested or plain, with a fresh ticket when
/// resuming. Returns the ticket-producing run too so callers can check it.
pub fn client_for<R: rand::RngCore + rand::CryptoRng>(
    f: &Fixtures,
    s: &ServerHandshakeConfig,
    mode: Mode,
    attested: bool,
    rng: &mut R,
) -> Result<ClientHandshakeConfig, String> {
    let mut c = f.client_handshake(Mode::Ecdh, attested);
    if mode == Mode::Psk {
        let first = run(&c, s, rng);
        if !first.established() {
            return Err(format!(
                "ticket handshake failed: {:?} / {:?}",
                first.client.as_ref().err(),
                first.server_err()
            ));
        }
        c.ticket = Some(first.client_ticket());
        c.mode = Mode::Psk;
    }
    Ok(c)
}

/// One handshake in `mode`; both sides must agree on every derived secret.
pub fn agreement_trial<R: rand::RngCore + rand::CryptoRng>(
    f: &Fixtures,
    s: &ServerHandshakeConfig,
    mode: Mode,
    attested: bool,
    rng: &mut R,
) -> Result<(), String> {
    let c = client_for(f, s, mode, attested, rng)?;
    let r = run(&c, s, rng);
    let client = r.client.as_ref().map_err(|e| format!("client: {e}"))?;
    let server = match &r.server {
        Some(Ok(s)) => s,
        Some(Err(e)) => return Err(format!("server: {e}")),
        None => return Err("server never saw flight 3".into()),
    };
    let (ck, sk) = (&client.keys, &server.keys);
    let pairs = [
        ("client_app_traffic", ck.client_app_traffic, sk.client_app_traffic),
        ("server_app_traffic", ck.server_app_traffic, sk.server_app_traffic),
        ("binding_server", ck.binding_server, sk.binding_server),
        ("binding_client", ck.binding_client, sk.binding_client),
        ("resumption", ck.resumption, sk.resumption),
    ];
    for (name, a, b) in pairs {
        if a != b {
            return Err(format!("{name} differs between client and server"));
        }
    }
    if ck.mode != mode || sk.mode != mode {
        return Err("mode mismatch".into());
    }
    if server.peer.attested() != attested || client.broker.attested() != attested {
        return Err(format!(
            "attested flags {} / {} for attested={attested}",
            server.peer.attested(),
            client.broker.attested()
        ));
    }
    if server.peer.subject != f.peer.cert.subject {
        return Err(format!("peer identity {:?}", server.peer.subject));
    }
    match client_reads_post(&r)? {
        HandshakeMessage::NewSessionTicket { ticket_id, .. } if ticket_id == server.ticket.ticket_id => Ok(()),
        other => Err(format!("unexpected first record {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ev {
    Valid,
    Invalid,
    Absent,
}

pub const EVIDENCE_STATES: [Ev; 3] = [Ev::Valid, Ev::Invalid, Ev::Absent];

/// A device whose measurement no verifier has registered.
pub fn unregistered_tee(record: &DeviceRecord) -> std::sync::Arc<EmulatedTee> {
    std::sync::Arc::new(EmulatedTee::boot(record, b"modified code image").expect("device"))
}

/// A device provisioned by a vendor root no verifier trusts.
pub fn untrusted_root_tee(seed: u64, image: &[u8]) -> std::sync::Arc<EmulatedTee> {
    let mut r = rng(seed);
    let root = KeyPair::generate(KeyRole::Signing, &mut r);
    let record = DeviceRecord::provision(&root, DEFAULT_TEE_TYPE, &mut r);
    std::sync::Arc::new(EmulatedTee::boot(&record, image).expect("device"))
}

/// Configs for one cell of the evidence matrix, both policies "required".
pub fn matrix_configs(f: &Fixtures, broker: Ev, peer: Ev) -> (ClientHandshakeConfig, ServerHandshakeConfig) {
    let mut s = f.server_config(true);
    s.tee = match broker {
        Ev::Valid => Some(f.broker_tee()),
        Ev::Invalid => Some(unregistered_tee(&f.broker_device)),
        Ev::Absent => None,
    };
    let mut c = f.client_handshake(Mode::Ecdh, true);
    c.tee = match peer {
        Ev::Valid => Some(f.peer_tee()),
        Ev::Invalid => Some(untrusted_root_tee(99, &f.peer_image)),
        Ev::Absent => None,
    };
    (c, s)
}

/// The abort each matrix cell must produce; `None` for the one accepting cell.
pub fn matrix_expectation(broker: Ev, peer: Ev) -> Option<HandshakeError> {
    use attested_pubsub::attestation::Reason;
    match (broker, peer) {
        (Ev::Invalid, _) => {
            Some(HandshakeError::BrokerAttestationFailed(AttestationFailure::Rejected(Reason::MeasurementUnknown)))
        }
        (Ev::Absent, _) => Some(HandshakeError::BrokerAttestationFailed(AttestationFailure::Absent)),
        (Ev::Valid, Ev::Invalid) => {
            Some(HandshakeError::PeerAttestationFailed(AttestationFailure::Rejected(Reason::UnknownRoot)))
        }
        (Ev::Valid, Ev::Absent) => Some(HandshakeError::PeerAttestationFailed(AttestationFailure::Absent)),
        (Ev::Valid, Ev::Valid) => None,
    }
}

/// Runs one matrix cell and checks it against [`matrix_expectation`].
pub fn check_matrix_cell(f: &Fixtures, broker: Ev, peer: Ev, seed: u64) -> Result<(), String> {
    let (c, s) = matrix_configs(f, broker, peer);
    let r = run(&c, &s, &mut rng(seed));
    let expected = matrix_expectation(broker, peer);
    let cell = format!("broker={broker:?} peer={peer:?}");
    match (&expected, broker) {
        (None, _) => {
            if !r.established() {
                return Err(format!(
                    "{cell}: expected a session, got {:?} / {:?}",
                    r.client.as_ref().err(),
                    r.server_err()
                ));
            }
        }
        (Some(e), Ev::Invalid | Ev::Absent) => {
            if r.client.as_ref().err() != Some(e) || r.server.is_some() {
                return Err(format!("{cell}: expected client abort {e}, got {:?}", r.client.err()));
            }
        }
        (Some(e), Ev::Valid) => {
            if r.server_err() != Some(e) {
                return Err(format!("{cell}: expected broker abort {e}, got {:?}", r.server_err()));
            }
            match client_reads_post(&r) {
                Ok(HandshakeMessage::Alert { reason }) if reason == e.to_string() => {}
                other => return Err(format!("{cell}: client should read alert {e}, got {other:?}")),
            }
        }
    }
    Ok(())
}

/// Captures valid peer evidence for one session and presents it in a second
/// one. The broker must refuse it with `binding_mismatch`.
pub fn replay_trial<R: rand::RngCore + rand::CryptoRng>(
    f: &Fixtures,
    s: &ServerHandshakeConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(), String> {
    use attested_pubsub::attestation::{unix_now, Reason};
    let c = client_for(f, s, mode, true, rng)?;
    let a = run(&c, s, rng);
    if !a.established() {
        return Err("session A failed".into());
    }
    let binding = a.client.as_ref().expect("established").keys.binding_client;
    let captured =
        f.peer_tee().generate_evidence_at(binding, &std::collections::BTreeMap::new(), unix_now()).to_canonical_json();
    let c = client_for(f, s, mode, true, rng)?;
    let b = run_tampered(&c, s, rng, Some(captured), &mut |_, _| {});
    let want = HandshakeError::PeerAttestationFailed(AttestationFailure::Rejected(Reason::BindingMismatch));
    match b.server_err() {
        Some(e) if *e == want => Ok(()),
        other => Err(format!("{mode:?}: replay gave {other:?}")),
    }
}
