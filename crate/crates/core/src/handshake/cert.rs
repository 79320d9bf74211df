use super::codec::{FieldReader, FieldWriter};
use super::HandshakeError;
use crate::crypto::{self, KeyPair};

/// Extension label carrying a peer's per-session evidence.
pub const ATT_CLIENT_EXTENSION: &str = "att-client";

/// Minimal single-issuer certificate. The signature covers the encoding of
/// every other field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub public_key: [u8; 32],
    pub extensions: Vec<(String, Vec<u8>)>,
    pub issuer: String,
    pub signature: [u8; 64],
}

impl Certificate {
    /// Issues a certificate for `public_key`, signed by `issuer_key`.
    pub fn issue(
        subject: &str,
        public_key: [u8; 32],
        extensions: Vec<(String, Vec<u8>)>,
        issuer: &str,
        issuer_key: &KeyPair,
    ) -> Self {
        let mut cert = Certificate {
            subject: subject.to_owned(),
            public_key,
            extensions,
            issuer: issuer.to_owned(),
            signature: [0u8; 64],
        };
        cert.signature = crypto::sign(issuer_key, &cert.tbs_bytes());
        cert
    }

    pub fn self_signed(subject: &str, key: &KeyPair, extensions: Vec<(String, Vec<u8>)>) -> Self {
        Self::issue(subject, key.public(), extensions, subject, key)
    }

    fn encode_extensions(&self) -> Vec<u8> {
        let mut w = FieldWriter::new();
        for (label, bytes) in &self.extensions {
            w.field(label.as_bytes()).field(bytes);
        }
        w.into_bytes()
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut w = FieldWriter::new();
        w.field(self.subject.as_bytes())
            .field(&self.public_key)
            .field(&self.encode_extensions())
            .field(self.issuer.as_bytes());
        w.into_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tbs_bytes();
        let mut w = FieldWriter::new();
        w.field(&self.signature);
        out.extend(w.into_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = FieldReader::new(buf);
        let subject = r.string("subject")?;
        let public_key = r.fixed("public_key")?;
        let ext_bytes = r.field()?;
        let issuer = r.string("issuer")?;
        let signature = r.fixed("signature")?;
        r.finish()?;
        let mut extensions = Vec::new();
        let mut er = FieldReader::new(ext_bytes);
        while !er.is_empty() {
            let label = er.string("extension label")?;
            let bytes = er.field()?.to_vec();
            extensions.push((label, bytes));
        }
        Ok(Certificate { subject, public_key, extensions, issuer, signature })
    }

    pub fn is_signed_by(&self, issuer_public: &[u8; 32]) -> bool {
        crypto::verify_sig(issuer_public, &self.tbs_bytes(), &self.signature).unwrap_or(false)
    }

    pub fn is_self_signed(&self) -> bool {
        self.is_signed_by(&self.public_key)
    }

    /// The `att-client` extension, if any. More than one is an error.
    pub fn att_client_extension(&self) -> Result<Option<&[u8]>, HandshakeError> {
        let mut found = self.extensions.iter().filter(|(l, _)| l == ATT_CLIENT_EXTENSION);
        let first = found.next().map(|(_, b)| b.as_slice());
        if found.next().is_some() {
            return Err(HandshakeError::Decode("duplicate att-client extension".into()));
        }
        Ok(first)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Self, HandshakeError> {
        let raw = hex::decode(s.trim()).map_err(|e| HandshakeError::Decode(e.to_string()))?;
        Self::decode(&raw)
    }
}
