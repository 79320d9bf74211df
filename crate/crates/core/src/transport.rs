//! Blocking-socket glue: moves handshake flights and protected records
//! over any `Read`/`Write` stream.

use std::io::{Read, Write};

use rand::rngs::OsRng;

use crate::handshake::codec::MESSAGE_HEADER_LEN;
use crate::handshake::messages::{self, HandshakeMessage};
use crate::handshake::record::{read_frame, RecordError, MAX_PAYLOAD};
use crate::handshake::{
    self, ClientFinished, ClientHandshakeConfig, ClientTicket, ContentType, DirectionState, HandshakeError,
    RecordLayer, ServerComplete, ServerHandshakeConfig, Side,
};

/// Largest plaintext handshake message accepted before keys exist.
pub const MAX_HELLO: usize = 16 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("handshake failed: {0}")]
    Handshake(#[from] HandshakeError),
    #[error("record layer: {0}")]
    Record(#[from] RecordError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer closed the connection during the handshake")]
    PeerClosed,
}

impl TransportError {
    /// Short reason code for logs.
    pub fn code(&self) -> String {
        match self {
            TransportError::Handshake(e) => e.code(),
            TransportError::Record(RecordError::Decrypt) => "decrypt_error".into(),
            TransportError::Record(RecordError::Io(_)) | TransportError::Io(_) | TransportError::PeerClosed => {
                "peer_closed".into()
            }
            TransportError::Record(_) => "record_error".into(),
        }
    }
}

fn read_message<R: Read>(r: &mut R) -> Result<Vec<u8>, TransportError> {
    let mut header = [0u8; MESSAGE_HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TransportError::PeerClosed,
        _ => TransportError::Io(e),
    })?;
    let len = u32::from_be_bytes([0, header[1], header[2], header[3]]) as usize;
    if len > MAX_HELLO {
        return Err(HandshakeError::Decode(format!("hello of {len} bytes exceeds limit")).into());
    }
    let mut msg = vec![0u8; MESSAGE_HEADER_LEN + len];
    msg[..MESSAGE_HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut msg[MESSAGE_HEADER_LEN..])?;
    Ok(msg)
}

/// Sending half of an established channel.
pub struct RecordWriter<W> {
    state: DirectionState,
    inner: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(state: DirectionState, inner: W) -> Self {
        RecordWriter { state, inner }
    }

    /// Sends `bytes` as one or more records of at most [`MAX_PAYLOAD`] bytes.
    pub fn send(&mut self, content_type: ContentType, bytes: &[u8]) -> Result<(), RecordError> {
        if bytes.is_empty() {
            let f = self.state.seal(content_type, bytes)?;
            self.inner.write_all(&f)?;
        }
        for chunk in bytes.chunks(MAX_PAYLOAD) {
            let f = self.state.seal(content_type, chunk)?;
            self.inner.write_all(&f)?;
        }
        self.inner.flush()?;
        Ok(())
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }
}

/// Receiving half of an established channel.
pub struct RecordReader<R> {
    state: DirectionState,
    inner: R,
}

impl<R: Read> RecordReader<R> {
    pub fn new(state: DirectionState, inner: R) -> Self {
        RecordReader { state, inner }
    }

    pub fn recv(&mut self) -> Result<(ContentType, Vec<u8>), RecordError> {
        let frame = read_frame(&mut self.inner)?;
        self.state.open(&frame)
    }
}

pub struct ServerSession<R, W> {
    pub complete: ServerComplete,
    pub reader: RecordReader<R>,
    pub writer: RecordWriter<W>,
}

/// Runs the broker side of the handshake. On failure an alert is sent when
/// possible. The ticket announcement is left to the caller.
pub fn accept<R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    cfg: &ServerHandshakeConfig,
) -> Result<ServerSession<R, W>, TransportError> {
    let flight1 = read_message(&mut reader)?;
    let (mut state, flight2) = match handshake::server_respond(cfg, &flight1, &mut OsRng) {
        Ok(v) => v,
        Err(e) => {
            let _ = writer.write_all(&handshake::alert_message(&e)).and_then(|_| writer.flush());
            return Err(e.into());
        }
    };
    writer.write_all(&flight2)?;
    writer.flush()?;
    let flight3 = match read_frame(&mut reader) {
        Ok(f) => f,
        Err(RecordError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(TransportError::PeerClosed)
        }
        Err(e) => return Err(e.into()),
    };
    let complete = match handshake::server_complete(&mut state, cfg, &flight3, &mut OsRng) {
        Ok(c) => c,
        Err(e) => {
            let _ = writer.write_all(&state.alert_record(&e)).and_then(|_| writer.flush());
            return Err(e.into());
        }
    };
    let (send, recv) = RecordLayer::new(&complete.keys, Side::Server).split();
    Ok(ServerSession { complete, reader: RecordReader::new(recv, reader), writer: RecordWriter::new(send, writer) })
}

pub struct ClientSession<R, W> {
    pub finished: ClientFinished,
    /// Ticket for the next resumption, derived from the broker's announcement.
    pub ticket: ClientTicket,
    pub reader: RecordReader<R>,
    pub writer: RecordWriter<W>,
}

/// Runs the client side of the handshake through the ticket announcement.
pub fn connect<R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    cfg: &ClientHandshakeConfig,
) -> Result<ClientSession<R, W>, TransportError> {
    let (state, flight1) = handshake::client_begin(cfg, &mut OsRng)?;
    writer.write_all(&flight1)?;
    writer.flush()?;
    let mut flight2 = read_message(&mut reader)?;
    if flight2[0] != messages::ALERT {
        flight2.extend(read_frame(&mut reader)?);
    }
    let finished = handshake::client_finish(state, cfg, &flight2)?;
    writer.write_all(&finished.flight3)?;
    writer.flush()?;

    let (send, recv) = RecordLayer::new(&finished.keys, Side::Client).split();
    let mut reader = RecordReader::new(recv, reader);
    let (ct, body) = match reader.recv() {
        Ok(v) => v,
        Err(RecordError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(TransportError::PeerClosed)
        }
        Err(e) => return Err(e.into()),
    };
    let ticket = match (ct, HandshakeMessage::decode(&body)?) {
        (ContentType::Handshake, HandshakeMessage::NewSessionTicket { ticket_id, .. }) => {
            ClientTicket::from_announcement(&finished.keys.resumption, ticket_id)
        }
        (ContentType::Alert, HandshakeMessage::Alert { reason }) => return Err(HandshakeError::Alert(reason).into()),
        _ => return Err(HandshakeError::UnexpectedMessage("NewSessionTicket").into()),
    };
    Ok(ClientSession { finished, ticket, reader, writer: RecordWriter::new(send, writer) })
}
