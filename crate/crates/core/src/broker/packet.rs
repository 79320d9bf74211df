//! MQTT 3.1.1 packet codec for the QoS 0 subset.

use thiserror::Error;

pub const CONNECT: u8 = 1;
pub const CONNACK: u8 = 2;
pub const PUBLISH: u8 = 3;
pub const SUBSCRIBE: u8 = 8;
pub const SUBACK: u8 = 9;
pub const UNSUBSCRIBE: u8 = 10;
pub const UNSUBACK: u8 = 11;
pub const PINGREQ: u8 = 12;
pub const PINGRESP: u8 = 13;
pub const DISCONNECT: u8 = 14;

/// Largest application payload a PUBLISH may carry.
pub const MAX_PAYLOAD: usize = 256 * 1024;
/// Largest whole packet accepted (payload plus topic and headers).
pub const MAX_PACKET: usize = MAX_PAYLOAD + 1024;

pub const RC_ACCEPTED: u8 = 0;
pub const RC_IDENTIFIER_REJECTED: u8 = 2;
pub const RC_NOT_AUTHORIZED: u8 = 5;
pub const SUBACK_FAILURE: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("malformed remaining length")]
    BadLength,
    #[error("packet of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("malformed {0} packet")]
    Malformed(&'static str),
    #[error("unsupported packet type {0}")]
    UnknownType(u8),
    #[error("bad fixed-header flags for packet type {0}")]
    BadFlags(u8),
    #[error("unsupported protocol {0:?} level {1}")]
    Protocol(String, u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub clean_session: bool,
    pub keep_alive: u16,
    /// Will messages are not supported; a set flag is kept so the broker can refuse it.
    pub will: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: u8,
    pub retain: bool,
    pub dup: bool,
    pub packet_id: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack { session_present: bool, return_code: u8 },
    Publish(Publish),
    Subscribe { packet_id: u16, filters: Vec<(String, u8)> },
    Suback { packet_id: u16, codes: Vec<u8> },
    Unsubscribe { packet_id: u16, filters: Vec<String> },
    Unsuback { packet_id: u16 },
    Pingreq,
    Pingresp,
    Disconnect,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_remaining_length(out: &mut Vec<u8>, mut n: usize) {
    loop {
        let mut byte = (n % 128) as u8;
        n /= 128;
        if n > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if n == 0 {
            break;
        }
    }
}

fn frame(first: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(first);
    put_remaining_length(&mut out, body.len());
    out.extend_from_slice(body);
    out
}

/// Encodes a QoS 0 PUBLISH without building a [`Publish`] first.
pub fn encode_publish(topic: &str, payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(2 + topic.len() + payload.len());
    put_str(&mut body, topic);
    body.extend_from_slice(payload);
    frame(PUBLISH << 4, &body)
}

impl Packet {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Packet::Connect(c) => {
                put_str(&mut b, "MQTT");
                b.push(4);
                b.push(((c.clean_session as u8) << 1) | ((c.will as u8) << 2));
                b.extend_from_slice(&c.keep_alive.to_be_bytes());
                put_str(&mut b, &c.client_id);
                frame(CONNECT << 4, &b)
            }
            Packet::Connack { session_present, return_code } => {
                frame(CONNACK << 4, &[*session_present as u8, *return_code])
            }
            Packet::Publish(p) => {
                put_str(&mut b, &p.topic);
                if let Some(id) = p.packet_id {
                    b.extend_from_slice(&id.to_be_bytes());
                }
                b.extend_from_slice(&p.payload);
                let flags = ((p.dup as u8) << 3) | (p.qos << 1) | p.retain as u8;
                frame((PUBLISH << 4) | flags, &b)
            }
            Packet::Subscribe { packet_id, filters } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                for (f, qos) in filters {
                    put_str(&mut b, f);
                    b.push(*qos);
                }
                frame((SUBSCRIBE << 4) | 0b0010, &b)
            }
            Packet::Suback { packet_id, codes } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                b.extend_from_slice(codes);
                frame(SUBACK << 4, &b)
            }
            Packet::Unsubscribe { packet_id, filters } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                for f in filters {
                    put_str(&mut b, f);
                }
                frame((UNSUBSCRIBE << 4) | 0b0010, &b)
            }
            Packet::Unsuback { packet_id } => frame(UNSUBACK << 4, &packet_id.to_be_bytes()),
            Packet::Pingreq => frame(PINGREQ << 4, &[]),
            Packet::Pingresp => frame(PINGRESP << 4, &[]),
            Packet::Disconnect => frame(DISCONNECT << 4, &[]),
        }
    }

    /// Decodes one complete packet (fixed header included).
    pub fn decode(buf: &[u8]) -> Result<Packet, PacketError> {
        let (header_len, body_len) = parse_fixed_header(buf)?.ok_or(PacketError::BadLength)?;
        if buf.len() != header_len + body_len {
            return Err(PacketError::BadLength);
        }
        decode_body(buf[0], &buf[header_len..])
    }
}

/// Returns `(header length, remaining length)` once the fixed header is complete.
fn parse_fixed_header(buf: &[u8]) -> Result<Option<(usize, usize)>, PacketError> {
    let mut value = 0usize;
    for i in 0..4 {
        let Some(&byte) = buf.get(1 + i) else {
            return Ok(None);
        };
        value |= ((byte & 0x7f) as usize) << (7 * i);
        if byte & 0x80 == 0 {
            // Non-minimal encodings are malformed.
            if i > 0 && byte == 0 {
                return Err(PacketError::BadLength);
            }
            return Ok(Some((2 + i, value)));
        }
    }
    Err(PacketError::BadLength)
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PacketError> {
        if self.buf.len() < n {
            return Err(PacketError::Malformed(self.what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, PacketError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PacketError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, PacketError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PacketError::Malformed(self.what))
    }

    fn done(&self) -> Result<(), PacketError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(PacketError::Malformed(self.what))
        }
    }
}

fn decode_body(first: u8, body: &[u8]) -> Result<Packet, PacketError> {
    let kind = first >> 4;
    let flags = first & 0x0f;
    let expect_flags = |want: u8| if flags == want { Ok(()) } else { Err(PacketError::BadFlags(kind)) };
    let mut c = Cursor { buf: body, what: "packet" };
    let p = match kind {
        CONNECT => {
            expect_flags(0)?;
            c.what = "CONNECT";
            let proto = c.string()?;
            let level = c.u8()?;
            if proto != "MQTT" || level != 4 {
                return Err(PacketError::Protocol(proto, level));
            }
            let cf = c.u8()?;
            if cf & 1 != 0 {
                return Err(PacketError::Malformed("CONNECT"));
            }
            let keep_alive = c.u16()?;
            let client_id = c.string()?;
            let will = cf & 0x04 != 0;
            if will {
                c.string()?;
                let n = c.u16()? as usize;
                c.take(n)?;
            }
            // Credentials are parsed and ignored: identity comes from the handshake.
            if cf & 0x80 != 0 {
                c.string()?;
            }
            if cf & 0x40 != 0 {
                let n = c.u16()? as usize;
                c.take(n)?;
            }
            Packet::Connect(Connect { client_id, clean_session: cf & 0x02 != 0, keep_alive, will })
        }
        CONNACK => {
            expect_flags(0)?;
            c.what = "CONNACK";
            let sp = c.u8()?;
            Packet::Connack { session_present: sp & 1 == 1, return_code: c.u8()? }
        }
        PUBLISH => {
            c.what = "PUBLISH";
            let qos = (flags >> 1) & 0b11;
            if qos == 3 {
                return Err(PacketError::BadFlags(kind));
            }
            let topic = c.string()?;
            let packet_id = if qos > 0 { Some(c.u16()?) } else { None };
            let payload = c.buf.to_vec();
            c.buf = &[];
            Packet::Publish(Publish { topic, payload, qos, retain: flags & 1 == 1, dup: flags & 8 == 8, packet_id })
        }
        SUBSCRIBE => {
            expect_flags(0b0010)?;
            c.what = "SUBSCRIBE";
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while !c.buf.is_empty() {
                let f = c.string()?;
                let qos = c.u8()?;
                if qos > 2 {
                    return Err(PacketError::Malformed("SUBSCRIBE"));
                }
                filters.push((f, qos));
            }
            if filters.is_empty() {
                return Err(PacketError::Malformed("SUBSCRIBE"));
            }
            Packet::Subscribe { packet_id, filters }
        }
        SUBACK => {
            expect_flags(0)?;
            c.what = "SUBACK";
            let packet_id = c.u16()?;
            let codes = c.buf.to_vec();
            c.buf = &[];
            Packet::Suback { packet_id, codes }
        }
        UNSUBSCRIBE => {
            expect_flags(0b0010)?;
            c.what = "UNSUBSCRIBE";
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while !c.buf.is_empty() {
                filters.push(c.string()?);
            }
            if filters.is_empty() {
                return Err(PacketError::Malformed("UNSUBSCRIBE"));
            }
            Packet::Unsubscribe { packet_id, filters }
        }
        UNSUBACK => {
            expect_flags(0)?;
            c.what = "UNSUBACK";
            Packet::Unsuback { packet_id: c.u16()? }
        }
        PINGREQ => {
            expect_flags(0)?;
            Packet::Pingreq
        }
        PINGRESP => {
            expect_flags(0)?;
            Packet::Pingresp
        }
        DISCONNECT => {
            expect_flags(0)?;
            Packet::Disconnect
        }
        other => return Err(PacketError::UnknownType(other)),
    };
    c.done()?;
    Ok(p)
}

/// Reassembles packets from a byte stream that arrives in arbitrary chunks
/// (one packet may span several records, one record may hold several packets).
#[derive(Debug, Default)]
pub struct PacketAssembler {
    buf: Vec<u8>,
    start: usize,
}

impl PacketAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete packet, if buffered. Errors are fatal for the stream.
    pub fn next_packet(&mut self) -> Result<Option<Packet>, PacketError> {
        let pending = &self.buf[self.start..];
        let Some((h, n)) = parse_fixed_header(pending)? else {
            return Ok(None);
        };
        if h + n > MAX_PACKET {
            return Err(PacketError::TooLarge(h + n));
        }
        if pending.len() < h + n {
            return Ok(None);
        }
        let p = decode_body(pending[0], &pending[h..h + n])?;
        self.start += h + n;
        if self.start > 64 * 1024 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        Ok(Some(p))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_packets() -> Vec<Packet> {
        vec![
            Packet::Connect(Connect { client_id: "c1".into(), clean_session: false, keep_alive: 30, will: false }),
            Packet::Connack { session_present: true, return_code: 5 },
            Packet::Publish(Publish {
                topic: "a/b".into(),
                payload: vec![1; 300],
                qos: 0,
                retain: false,
                dup: false,
                packet_id: None,
            }),
            Packet::Subscribe { packet_id: 7, filters: vec![("a/#".into(), 0), ("b".into(), 1)] },
            Packet::Suback { packet_id: 7, codes: vec![0, 0x80] },
            Packet::Unsubscribe { packet_id: 8, filters: vec!["a/#".into()] },
            Packet::Unsuback { packet_id: 8 },
            Packet::Pingreq,
            Packet::Pingresp,
            Packet::Disconnect,
        ]
    }

    #[test]
    fn round_trip() {
        for p in all_packets() {
            assert_eq!(Packet::decode(&p.encode()).unwrap(), p);
        }
    }

    #[test]
    fn known_bytes() {
        assert_eq!(Packet::Pingreq.encode(), [0xc0, 0x00]);
        assert_eq!(encode_publish("t", b"hi"), [0x30, 5, 0, 1, b't', b'h', b'i']);
        let c = Packet::Connect(Connect { client_id: "x".into(), clean_session: true, keep_alive: 60, will: false });
        assert_eq!(c.encode(), [0x10, 13, 0, 4, b'M', b'Q', b'T', b'T', 4, 2, 0, 60, 0, 1, b'x']);
    }

    #[test]
    fn remaining_length_boundaries() {
        for n in [0usize, 127, 128, 16383, 16384, 200_000] {
            let mut v = vec![0x30];
            put_remaining_length(&mut v, n);
            assert_eq!(parse_fixed_header(&v).unwrap(), Some((v.len(), n)));
        }
        assert_eq!(parse_fixed_header(&[0x30, 0xff, 0xff, 0xff, 0xff]), Err(PacketError::BadLength));
        assert_eq!(parse_fixed_header(&[0x30, 0x80, 0x00]), Err(PacketError::BadLength));
    }

    #[test]
    fn assembler_handles_arbitrary_splits() {
        let stream: Vec<u8> = all_packets().iter().flat_map(|p| p.encode()).collect();
        for chunk in [1, 3, 7, 64, 1000] {
            let mut a = PacketAssembler::new();
            let mut got = Vec::new();
            for piece in stream.chunks(chunk) {
                a.push(piece);
                while let Some(p) = a.next_packet().unwrap() {
                    got.push(p);
                }
            }
            assert_eq!(got, all_packets());
            assert_eq!(a.buffered(), 0);
        }
    }

    #[test]
    fn oversize_rejected_from_header() {
        let mut v = vec![0x30];
        put_remaining_length(&mut v, MAX_PACKET + 1);
        let mut a = PacketAssembler::new();
        a.push(&v);
        assert!(matches!(a.next_packet(), Err(PacketError::TooLarge(_))));
    }

    #[test]
    fn bad_flags_and_qos3() {
        assert_eq!(Packet::decode(&[0x80, 0x03, 0, 1, 0]), Err(PacketError::BadFlags(SUBSCRIBE)));
        assert_eq!(Packet::decode(&[0x36, 0x03, 0, 1, b't']), Err(PacketError::BadFlags(PUBLISH)));
    }
}
