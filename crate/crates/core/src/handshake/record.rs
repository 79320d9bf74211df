//! Record protection: `type(1) || len(u32 BE) || AEAD(seq, aad = header)`.
//! Each direction keeps its own sequence counter.

use std::io::Read;

use thiserror::Error;

use crate::crypto::{self, AeadKeyIv, TAG_LEN};

use super::{SessionKeys, Side};

pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 64 * 1024;
pub const MAX_CIPHERTEXT: usize = MAX_PAYLOAD + TAG_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ContentType {
    Alert = 0x15,
    Handshake = 0x16,
    ApplicationData = 0x17,
}

impl ContentType {
    pub fn from_byte(b: u8) -> Result<Self, RecordError> {
        match b {
            0x15 => Ok(ContentType::Alert),
            0x16 => Ok(ContentType::Handshake),
            0x17 => Ok(ContentType::ApplicationData),
            other => Err(RecordError::BadContentType(other)),
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record length {0} exceeds limit")]
    Oversize(usize),
    #[error("record authentication failed")]
    Decrypt,
    #[error("sequence number exhausted")]
    SeqOverflow,
    #[error("unknown record content type {0:#04x}")]
    BadContentType(u8),
    #[error("truncated record")]
    Truncated,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses a record header, refusing oversized lengths before anything is buffered.
pub fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(ContentType, usize), RecordError> {
    let ct = ContentType::from_byte(header[0])?;
    let len = u32::from_be_bytes([header[1], header[2], header[3], header[4]]) as usize;
    if len > MAX_CIPHERTEXT {
        return Err(RecordError::Oversize(len));
    }
    if len < TAG_LEN {
        return Err(RecordError::Truncated);
    }
    Ok((ct, len))
}

/// Reads one whole record frame from a blocking stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Vec<u8>, RecordError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let (_, len) = parse_header(&header)?;
    let mut frame = vec![0u8; HEADER_LEN + len];
    frame[..HEADER_LEN].copy_from_slice(&header);
    reader.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}

/// One direction of protection: key plus running sequence number.
#[derive(Debug, Clone)]
pub struct DirectionState {
    keys: AeadKeyIv,
    seq: u64,
}

impl DirectionState {
    pub fn new(keys: AeadKeyIv) -> Self {
        DirectionState { keys, seq: 0 }
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    fn next_seq(&mut self) -> Result<u64, RecordError> {
        let s = self.seq;
        self.seq = self.seq.checked_add(1).ok_or(RecordError::SeqOverflow)?;
        Ok(s)
    }

    pub fn seal(&mut self, content_type: ContentType, payload: &[u8]) -> Result<Vec<u8>, RecordError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(RecordError::Oversize(payload.len()));
        }
        let seq = self.next_seq()?;
        let mut header = [0u8; HEADER_LEN];
        header[0] = content_type as u8;
        header[1..].copy_from_slice(&((payload.len() + TAG_LEN) as u32).to_be_bytes());
        let body = crypto::aead_seal(&self.keys, seq, &header, payload);
        let mut frame = Vec::with_capacity(HEADER_LEN + body.len());
        frame.extend_from_slice(&header);
        frame.extend_from_slice(&body);
        Ok(frame)
    }

    /// Opens a complete frame. The counter only advances on success.
    pub fn open(&mut self, frame: &[u8]) -> Result<(ContentType, Vec<u8>), RecordError> {
        if frame.len() < HEADER_LEN {
            return Err(RecordError::Truncated);
        }
        let header: [u8; HEADER_LEN] = frame[..HEADER_LEN].try_into().expect("header");
        let (ct, len) = parse_header(&header)?;
        if frame.len() != HEADER_LEN + len {
            return Err(RecordError::Truncated);
        }
        if self.seq == u64::MAX {
            return Err(RecordError::SeqOverflow);
        }
        let plain =
            crypto::aead_open(&self.keys, self.seq, &header, &frame[HEADER_LEN..]).map_err(|_| RecordError::Decrypt)?;
        self.seq += 1;
        Ok((ct, plain))
    }
}

/// Both directions of an established session, from one side's point of view.
#[derive(Debug, Clone)]
pub struct RecordLayer {
    send: DirectionState,
    recv: DirectionState,
}

impl RecordLayer {
    pub fn new(keys: &SessionKeys, side: Side) -> Self {
        let client = DirectionState::new(AeadKeyIv::from_traffic_secret(&keys.client_app_traffic));
        let server = DirectionState::new(AeadKeyIv::from_traffic_secret(&keys.server_app_traffic));
        match side {
            Side::Client => RecordLayer { send: client, recv: server },
            Side::Server => RecordLayer { send: server, recv: client },
        }
    }

    pub fn record_send(&mut self, content_type: ContentType, payload: &[u8]) -> Result<Vec<u8>, RecordError> {
        self.send.seal(content_type, payload)
    }

    pub fn record_recv(&mut self, frame: &[u8]) -> Result<(ContentType, Vec<u8>), RecordError> {
        self.recv.open(frame)
    }

    pub fn split(self) -> (DirectionState, DirectionState) {
        (self.send, self.recv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (DirectionState, DirectionState) {
        let k = AeadKeyIv { key: [1; 32], iv: [2; 12] };
        (DirectionState::new(k.clone()), DirectionState::new(k))
    }

    #[test]
    fn replayed_frame_fails() {
        let (mut tx, mut rx) = pair();
        let f = tx.seal(ContentType::ApplicationData, b"one").unwrap();
        assert_eq!(rx.open(&f).unwrap().1, b"one");
        assert!(matches!(rx.open(&f), Err(RecordError::Decrypt)));
    }

    #[test]
    fn failed_open_does_not_advance() {
        let (mut tx, mut rx) = pair();
        let f = tx.seal(ContentType::ApplicationData, b"one").unwrap();
        let mut bad = f.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert!(rx.open(&bad).is_err());
        assert_eq!(rx.seq(), 0);
        assert!(rx.open(&f).is_ok());
    }

    #[test]
    fn header_is_authenticated() {
        let (mut tx, mut rx) = pair();
        let mut f = tx.seal(ContentType::ApplicationData, b"x").unwrap();
        f[0] = ContentType::Handshake as u8;
        assert!(matches!(rx.open(&f), Err(RecordError::Decrypt)));
    }

    #[test]
    fn oversized_payload_and_header_rejected() {
        let (mut tx, _) = pair();
        assert!(matches!(
            tx.seal(ContentType::ApplicationData, &vec![0; MAX_PAYLOAD + 1]),
            Err(RecordError::Oversize(_))
        ));
        assert!(tx.seal(ContentType::ApplicationData, &vec![0; MAX_PAYLOAD]).is_ok());
        let hdr = [0x17, 0, 1, 0, 17];
        assert!(matches!(parse_header(&hdr), Err(RecordError::Oversize(_))));
        assert!(matches!(parse_header(&[0x20, 0, 0, 0, 16]), Err(RecordError::BadContentType(0x20))));
    }

    #[test]
    fn sequence_exhaustion_aborts() {
        let (mut tx, _) = pair();
        tx.seq = u64::MAX;
        assert!(matches!(tx.seal(ContentType::ApplicationData, b""), Err(RecordError::SeqOverflow)));
    }
}
