//! Byte-level framing shared by every handshake message:
//! `msg_type(1) || len(u24 BE) || fields`, each field `len(u16 BE) || bytes`.

use super::HandshakeError;

pub const MESSAGE_HEADER_LEN: usize = 4;
const MAX_U24: usize = (1 << 24) - 1;

#[derive(Default)]
pub struct FieldWriter {
    buf: Vec<u8>,
}

impl FieldWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        assert!(bytes.len() <= u16::MAX as usize, "field longer than 65535 bytes");
        self.buf.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct FieldReader<'a> {
    buf: &'a [u8],
}

impl<'a> FieldReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        FieldReader { buf }
    }

    pub fn field(&mut self) -> Result<&'a [u8], HandshakeError> {
        if self.buf.len() < 2 {
            return Err(HandshakeError::Decode("truncated field length".into()));
        }
        let len = u16::from_be_bytes([self.buf[0], self.buf[1]]) as usize;
        if self.buf.len() < 2 + len {
            return Err(HandshakeError::Decode("truncated field".into()));
        }
        let (f, rest) = self.buf[2..].split_at(len);
        self.buf = rest;
        Ok(f)
    }

    pub fn fixed<const N: usize>(&mut self, what: &str) -> Result<[u8; N], HandshakeError> {
        self.field()?.try_into().map_err(|_| HandshakeError::Decode(format!("{what} must be {N} bytes")))
    }

    /// A field that is either empty (absent) or exactly `N` bytes.
    pub fn optional_fixed<const N: usize>(&mut self, what: &str) -> Result<Option<[u8; N]>, HandshakeError> {
        let f = self.field()?;
        if f.is_empty() {
            return Ok(None);
        }
        f.try_into().map(Some).map_err(|_| HandshakeError::Decode(format!("{what} must be empty or {N} bytes")))
    }

    pub fn string(&mut self, what: &str) -> Result<String, HandshakeError> {
        String::from_utf8(self.field()?.to_vec()).map_err(|_| HandshakeError::Decode(format!("{what} is not UTF-8")))
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Result<(), HandshakeError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(HandshakeError::Decode("trailing bytes".into()))
        }
    }
}

pub fn encode_message(msg_type: u8, body: &[u8]) -> Vec<u8> {
    assert!(body.len() <= MAX_U24);
    let len = (body.len() as u32).to_be_bytes();
    let mut out = Vec::with_capacity(MESSAGE_HEADER_LEN + body.len());
    out.push(msg_type);
    out.extend_from_slice(&len[1..]);
    out.extend_from_slice(body);
    out
}

/// Length of the message whose header starts `buf`, if the header is present.
pub fn message_len(buf: &[u8]) -> Option<usize> {
    if buf.len() < MESSAGE_HEADER_LEN {
        return None;
    }
    Some(MESSAGE_HEADER_LEN + u32::from_be_bytes([0, buf[1], buf[2], buf[3]]) as usize)
}

/// Splits one message off the front of `buf`: `(type, whole message, rest)`.
pub fn split_message(buf: &[u8]) -> Result<(u8, &[u8], &[u8]), HandshakeError> {
    let len = message_len(buf).ok_or_else(|| HandshakeError::Decode("truncated message header".into()))?;
    if buf.len() < len {
        return Err(HandshakeError::Decode("truncated message".into()));
    }
    let (msg, rest) = buf.split_at(len);
    Ok((msg[0], msg, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_layout_is_type_u24_fields() {
        let mut w = FieldWriter::new();
        w.field(b"ab").field(b"");
        let m = encode_message(7, &w.into_bytes());
        assert_eq!(m, [7, 0, 0, 6, 0, 2, b'a', b'b', 0, 0]);
        let (t, whole, rest) = split_message(&m).unwrap();
        assert_eq!((t, whole.len(), rest.len()), (7, 10, 0));
        let mut r = FieldReader::new(&whole[4..]);
        assert_eq!(r.field().unwrap(), b"ab");
        assert_eq!(r.optional_fixed::<4>("x").unwrap(), None);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_is_an_error() {
        assert!(split_message(&[1, 0, 0, 5, 0]).is_err());
        assert!(FieldReader::new(&[0, 3, 1]).field().is_err());
        let mut r = FieldReader::new(&[0, 1, 1, 9]);
        r.field().unwrap();
        assert!(r.finish().is_err());
    }
}
