// The sans-IO handshake: three flights passed between client and broker as
// byte buffers, with mutual attestation bound to the channel.

use std::error::Error;

use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use attested_pubsub::handshake::{client_begin, client_finish, server_complete, server_respond, Mode};
use rand::rngs::OsRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let f = Fixtures::generate(DEFAULT_BROKER_NAME, &mut OsRng);
    let server_cfg = f.server_config(true);
    let client_cfg = f.client_handshake(Mode::Ecdh, true);

    let (client, flight1) = client_begin(&client_cfg, &mut OsRng)?;
    let (mut server, flight2) = server_respond(&server_cfg, &flight1, &mut OsRng)?;
    let done = client_finish(client, &client_cfg, &flight2)?;
    let accepted = server_complete(&mut server, &server_cfg, &done.flight3, &mut OsRng)?;

    println!("flight sizes: {} / {} / {} bytes", flight1.len(), flight2.len(), done.flight3.len());
    println!("broker {:?} attested: {}", done.broker.subject, done.broker.attested());
    println!("peer   {:?} attested: {}", accepted.peer.subject, accepted.peer.attested());
    assert_eq!(done.keys, accepted.keys);
    println!("binding_server {}", hex::encode(done.keys.binding_server));
    println!("binding_client {}", hex::encode(done.keys.binding_client));
    println!("client ops {:?}", done.ops);
    println!("broker ops {:?}", accepted.ops);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
