use super::cert::Certificate;
use super::codec::{encode_message, split_message, FieldReader, FieldWriter};
use super::{HandshakeError, Mode};

pub const CLIENT_HELLO: u8 = 1;
pub const SERVER_HELLO: u8 = 2;
pub const NEW_SESSION_TICKET: u8 = 4;
pub const ENCRYPTED_EXTENSIONS: u8 = 8;
pub const CERTIFICATE: u8 = 11;
pub const CERTIFICATE_VERIFY: u8 = 15;
pub const FINISHED: u8 = 20;
pub const ALERT: u8 = 21;
pub const ATT_CLIENT: u8 = 24;

/// Fixed serialized size of an attestation request, so that whether
/// attestation is requested is not visible from the sealed blob's length.
pub const ATT_REQ_LEN: usize = 64;
pub const CLAIMS_SCHEMA_V1: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttReq {
    pub att_required: bool,
    pub claims_schema: String,
}

impl AttReq {
    pub fn new(att_required: bool) -> Self {
        AttReq { att_required, claims_schema: CLAIMS_SCHEMA_V1.to_owned() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = FieldWriter::new();
        w.field(&[self.att_required as u8]).field(self.claims_schema.as_bytes());
        let mut out = w.into_bytes();
        assert!(out.len() + 2 <= ATT_REQ_LEN, "claims schema too long");
        let pad = vec![0u8; ATT_REQ_LEN - out.len() - 2];
        let mut w = FieldWriter::new();
        w.field(&pad);
        out.extend(w.into_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, HandshakeError> {
        if buf.len() != ATT_REQ_LEN {
            return Err(HandshakeError::Decode("attestation request has wrong size".into()));
        }
        let mut r = FieldReader::new(buf);
        let flag = r.fixed::<1>("att_required")?[0];
        let claims_schema = r.string("claims_schema")?;
        r.field()?;
        r.finish()?;
        if flag > 1 {
            return Err(HandshakeError::Decode("att_required must be 0 or 1".into()));
        }
        Ok(AttReq { att_required: flag == 1, claims_schema })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub random: [u8; 32],
    pub dh_public: Option<[u8; 32]>,
    pub mode: Mode,
    pub ticket_id: Option<[u8; 16]>,
    /// Encapsulated key for the sealed request; absent in PSK mode, where the
    /// request is sealed under a key derived from the resumption secret.
    pub ech_enc: Option<[u8; 32]>,
    pub ech_payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHello {
    pub random: [u8; 32],
    pub dh_public: Option<[u8; 32]>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello(ClientHello),
    ServerHello(ServerHello),
    EncryptedExtensions { att_server: Option<Vec<u8>> },
    Certificate(Certificate),
    CertificateVerify { signature: [u8; 64] },
    Finished { verify_data: [u8; 32] },
    AttClient { evidence: Vec<u8> },
    NewSessionTicket { ticket_id: [u8; 16], lifetime_s: u32 },
    Alert { reason: String },
}

fn opt(b: &Option<[u8; 32]>) -> &[u8] {
    b.as_ref().map(|v| v.as_slice()).unwrap_or(&[])
}

impl HandshakeMessage {
    pub fn msg_type(&self) -> u8 {
        match self {
            HandshakeMessage::ClientHello(_) => CLIENT_HELLO,
            HandshakeMessage::ServerHello(_) => SERVER_HELLO,
            HandshakeMessage::EncryptedExtensions { .. } => ENCRYPTED_EXTENSIONS,
            HandshakeMessage::Certificate(_) => CERTIFICATE,
            HandshakeMessage::CertificateVerify { .. } => CERTIFICATE_VERIFY,
            HandshakeMessage::Finished { .. } => FINISHED,
            HandshakeMessage::AttClient { .. } => ATT_CLIENT,
            HandshakeMessage::NewSessionTicket { .. } => NEW_SESSION_TICKET,
            HandshakeMessage::Alert { .. } => ALERT,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = FieldWriter::new();
        match self {
            HandshakeMessage::ClientHello(ch) => {
                w.field(&ch.random)
                    .field(opt(&ch.dh_public))
                    .field(&[ch.mode.code()])
                    .field(ch.ticket_id.as_ref().map(|t| t.as_slice()).unwrap_or(&[]))
                    .field(opt(&ch.ech_enc))
                    .field(&ch.ech_payload);
            }
            HandshakeMessage::ServerHello(sh) => {
                w.field(&sh.random).field(opt(&sh.dh_public)).field(&[sh.mode.code()]);
            }
            HandshakeMessage::EncryptedExtensions { att_server } => {
                w.field(att_server.as_deref().unwrap_or(&[]));
            }
            HandshakeMessage::Certificate(c) => {
                w.field(&c.encode());
            }
            HandshakeMessage::CertificateVerify { signature } => {
                w.field(signature);
            }
            HandshakeMessage::Finished { verify_data } => {
                w.field(verify_data);
            }
            HandshakeMessage::AttClient { evidence } => {
                w.field(evidence);
            }
            HandshakeMessage::NewSessionTicket { ticket_id, lifetime_s } => {
                w.field(ticket_id).field(&lifetime_s.to_be_bytes());
            }
            HandshakeMessage::Alert { reason } => {
                w.field(reason.as_bytes());
            }
        }
        encode_message(self.msg_type(), &w.into_bytes())
    }

    /// Decodes exactly one complete message.
    pub fn decode(msg: &[u8]) -> Result<Self, HandshakeError> {
        let (msg_type, whole, rest) = split_message(msg)?;
        if !rest.is_empty() {
            return Err(HandshakeError::Decode("trailing bytes after message".into()));
        }
        let mut r = FieldReader::new(&whole[4..]);
        let m = match msg_type {
            CLIENT_HELLO => HandshakeMessage::ClientHello(ClientHello {
                random: r.fixed("random")?,
                dh_public: r.optional_fixed("dh_public")?,
                mode: Mode::from_code(r.fixed::<1>("mode")?[0])?,
                ticket_id: r.optional_fixed("ticket_id")?,
                ech_enc: r.optional_fixed("ech_enc")?,
                ech_payload: r.field()?.to_vec(),
            }),
            SERVER_HELLO => HandshakeMessage::ServerHello(ServerHello {
                random: r.fixed("random")?,
                dh_public: r.optional_fixed("dh_public")?,
                mode: Mode::from_code(r.fixed::<1>("mode")?[0])?,
            }),
            ENCRYPTED_EXTENSIONS => {
                let f = r.field()?;
                HandshakeMessage::EncryptedExtensions { att_server: (!f.is_empty()).then(|| f.to_vec()) }
            }
            CERTIFICATE => HandshakeMessage::Certificate(Certificate::decode(r.field()?)?),
            CERTIFICATE_VERIFY => HandshakeMessage::CertificateVerify { signature: r.fixed("signature")? },
            FINISHED => HandshakeMessage::Finished { verify_data: r.fixed("verify_data")? },
            ATT_CLIENT => HandshakeMessage::AttClient { evidence: r.field()?.to_vec() },
            NEW_SESSION_TICKET => HandshakeMessage::NewSessionTicket {
                ticket_id: r.fixed("ticket_id")?,
                lifetime_s: u32::from_be_bytes(r.fixed("lifetime")?),
            },
            ALERT => HandshakeMessage::Alert { reason: r.string("reason")? },
            other => return Err(HandshakeError::Decode(format!("unknown message type {other}"))),
        };
        r.finish()?;
        Ok(m)
    }
}

/// Splits a buffer holding several concatenated messages.
pub fn split_messages(mut buf: &[u8]) -> Result<Vec<&[u8]>, HandshakeError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (_, whole, rest) = split_message(buf)?;
        out.push(whole);
        buf = rest;
    }
    Ok(out)
}
