//! Passive-observer scans for attestation material on the wire.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use attested_pubsub::attestation::{verify_evidence_json, Role};
use attested_pubsub::client::Connection;
use attested_pubsub::fixtures::Fixtures;
use attested_pubsub::handshake::messages::AttReq;
use attested_pubsub::handshake::{Certificate, Clock, Mode, ATT_CLIENT_EXTENSION};

use super::hs;

const NOW: u64 = 1_700_000_000;

fn find(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Material that is the same for every session of these fixtures.
pub fn static_needles(f: &Fixtures) -> Vec<(&'static str, Vec<u8>)> {
    let (bm, pm) = (f.broker_tee().measurement(), f.peer_tee().measurement());
    vec![
        ("attreq", AttReq::new(true).encode()),
        ("broker measurement", bm.to_vec()),
        ("broker measurement hex", hex::encode(bm).into_bytes()),
        ("peer measurement", pm.to_vec()),
        ("peer measurement hex", hex::encode(pm).into_bytes()),
        ("peer device key", f.peer_tee().device_public().to_vec()),
        ("broker device key", f.broker_tee().device_public().to_vec()),
        ("client certificate", f.peer.cert.encode()),
        ("client public key", f.peer.cert.public_key.to_vec()),
        ("client subject", f.peer.cert.subject.clone().into_bytes()),
    ]
}

fn scan(wire: &[u8], needles: &[(&'static str, Vec<u8>)]) -> Result<(), String> {
    match needles.iter().find(|(_, n)| find(wire, n)) {
        Some((name, _)) => Err(format!("{name} visible on the wire")),
        None => Ok(()),
    }
}

/// Attested handshakes alternating ECDH and PSK over the in-memory wire.
/// With a fixed clock evidence is deterministic, so the exact evidence and
/// reissued certificate each side sent are rebuilt from the session
/// bindings and searched for verbatim.
pub fn check_in_memory(trials: usize, seed: u64) -> Result<usize, String> {
    let f = hs::fixtures(seed);
    let mut s = f.server_config(true);
    s.clock = Clock::Fixed(NOW);
    let mut rng = hs::rng(seed);
    let statics = static_needles(&f);
    for i in 0..trials {
        let mode = if i % 2 == 0 { Mode::Ecdh } else { Mode::Psk };
        let mut c = f.client_handshake(Mode::Ecdh, true);
        c.clock = Clock::Fixed(NOW);
        if mode == Mode::Psk {
            let first = hs::run(&c, &s, &mut rng);
            if !first.established() {
                return Err(format!("trial {i}: ticket handshake failed"));
            }
            c.ticket = Some(first.client_ticket());
            c.mode = Mode::Psk;
        }
        let r = hs::run(&c, &s, &mut rng);
        let keys = &r.client.as_ref().map_err(|e| format!("trial {i}: {e}"))?.keys;
        if !r.established() {
            return Err(format!("trial {i}: {:?}", r.server_err()));
        }
        let client_ev =
            f.peer_tee().generate_evidence_at(keys.binding_client, &BTreeMap::new(), NOW).to_canonical_json();
        let broker_ev =
            f.broker_tee().generate_evidence_at(keys.binding_server, &BTreeMap::new(), NOW).to_canonical_json();
        // Positive control: the rebuilt evidence is a valid session artefact.
        let (ok, _) = verify_evidence_json(&client_ev, &keys.binding_client, Role::Peer, &f.ref_store(), NOW, 60);
        if !ok.accepted() {
            return Err(format!("trial {i}: rebuilt evidence does not verify"));
        }
        let mut needles = statics.clone();
        needles.push(("client evidence", client_ev.clone()));
        needles.push(("broker evidence", broker_ev));
        needles.push((
            "reissued client certificate",
            Certificate::self_signed(
                &f.peer.cert.subject,
                &f.peer.key,
                vec![(ATT_CLIENT_EXTENSION.to_owned(), client_ev)],
            )
            .encode(),
        ));
        scan(&r.wire(), &needles).map_err(|e| format!("trial {i} ({mode:?}): {e}"))?;
    }
    Ok(trials)
}

/// Forwards TCP both ways and records every byte in either direction.
pub struct RecordingProxy {
    pub addr: String,
    pub capture: Arc<Mutex<Vec<u8>>>,
}

impl RecordingProxy {
    pub fn start(upstream: String) -> RecordingProxy {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let capture: Arc<Mutex<Vec<u8>>> = Arc::default();
        let cap = capture.clone();
        std::thread::spawn(move || {
            for client in listener.incoming().flatten() {
                let Ok(server) = TcpStream::connect(&upstream) else { continue };
                for (mut from, mut to) in [(client.try_clone().unwrap(), server.try_clone().unwrap()), (server, client)]
                {
                    let cap = cap.clone();
                    std::thread::spawn(move || {
                        let mut buf = [0u8; 16 * 1024];
                        while let Ok(n @ 1..) = from.read(&mut buf) {
                            cap.lock().unwrap().extend_from_slice(&buf[..n]);
                            if to.write_all(&buf[..n]).is_err() {
                                break;
                            }
                        }
                        let _ = to.shutdown(Shutdown::Write);
                    });
                }
            }
        });
        RecordingProxy { addr, capture }
    }
}

/// Attested connections through a recording proxy, each publishing one
/// message; the full TCP capture must not contain any static needle.
pub fn check_tcp(f: &Fixtures, connections: usize) -> Result<usize, String> {
    let broker = super::e2e::start(f, None);
    let proxy = RecordingProxy::start(broker.addr().to_string());
    let mut ticket = None;
    for i in 0..connections {
        let mode = if ticket.is_some() && i % 2 == 1 { Mode::Psk } else { Mode::Ecdh };
        let mut cfg = f.client_config(&proxy.addr, &format!("scan-{i}"), mode, true);
        if mode == Mode::Psk {
            cfg.handshake.ticket = ticket.take();
        }
        let conn = Connection::connect(&cfg).map_err(|e| format!("connection {i}: {e}"))?;
        if !conn.attested_broker() {
            return Err(format!("connection {i} not attested"));
        }
        conn.publish("scan/topic", b"scan").map_err(|e| e.to_string())?;
        ticket = Some(conn.ticket().clone());
        conn.disconnect().map_err(|e| e.to_string())?;
    }
    std::thread::sleep(std::time::Duration::from_millis(100));
    broker.shutdown();
    let wire = proxy.capture.lock().unwrap().clone();
    if wire.len() < connections * 500 {
        return Err(format!("capture suspiciously small: {} bytes", wire.len()));
    }
    scan(&wire, &static_needles(f))?;
    Ok(connections)
}
