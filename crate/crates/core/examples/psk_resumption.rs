// Resumption: the first attested ECDH session yields a single-use ticket;
// the PSK handshake that follows needs no DH and no signatures, yet both
// sides still attest.

use std::error::Error;

use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use attested_pubsub::handshake::{
    client_begin, client_finish, server_complete, server_respond, ClientHandshakeConfig, ClientTicket, HandshakeError,
    Mode, OpCounters, ServerHandshakeConfig,
};
use rand::rngs::OsRng;

fn handshake(
    c: &ClientHandshakeConfig,
    s: &ServerHandshakeConfig,
) -> Result<(ClientTicket, OpCounters, OpCounters), HandshakeError> {
    let (client, f1) = client_begin(c, &mut OsRng)?;
    let (mut server, f2) = server_respond(s, &f1, &mut OsRng)?;
    let done = client_finish(client, c, &f2)?;
    let accepted = server_complete(&mut server, s, &done.flight3, &mut OsRng)?;
    let ticket = ClientTicket::from_announcement(&done.keys.resumption, accepted.ticket.ticket_id);
    Ok((ticket, done.ops, accepted.ops))
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let f = Fixtures::generate(DEFAULT_BROKER_NAME, &mut OsRng);
    let s = f.server_config(true);
    let mut c = f.client_handshake(Mode::Ecdh, true);

    let (ticket, client_ops, broker_ops) = handshake(&c, &s)?;
    println!("ecdh: client {client_ops:?}");
    println!("      broker {broker_ops:?}");

    c.mode = Mode::Psk;
    c.ticket = Some(ticket.clone());
    let (_, client_ops, broker_ops) = handshake(&c, &s)?;
    println!("psk:  client {client_ops:?}");
    println!("      broker {broker_ops:?}");
    assert_eq!(client_ops.dh + client_ops.signature_ops() + broker_ops.dh + broker_ops.signature_ops(), 0);

    match handshake(&c, &s) {
        Err(e) => println!("presenting the same ticket again: {e}"),
        Ok(_) => return Err("ticket resumed twice".into()),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
