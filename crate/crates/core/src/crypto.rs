//! Fixed cipher suite used everywhere in the crate:
//! X25519 / HKDF-SHA256 / AES-256-GCM / Ed25519.
//!
//! Everything here is either pure or only touches caller-owned state, so it is
//! safe to call from any thread.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const HASH_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const IV_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const SIGNATURE_LEN: usize = 64;

/// Every derived label is prefixed with this so keys never collide with real TLS.
pub const LABEL_PREFIX: &str = "mini-tls ";
const MAX_LABEL_LEN: usize = 64;
const MAX_CONTEXT_LEN: usize = 255;
const MAX_EXPAND_LEN: usize = 255 * HASH_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid parameter: {0}")]
    Parameter(&'static str),
    #[error("decryption failed")]
    Decrypt,
    #[error("key agreement produced a non-contributory shared secret")]
    LowOrderPoint,
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; HASH_LEN]);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Symmetric key plus base nonce for one direction of a channel.
#[derive(Clone, PartialEq, Eq)]
pub struct AeadKeyIv {
    pub key: [u8; KEY_LEN],
    pub iv: [u8; IV_LEN],
}

impl fmt::Debug for AeadKeyIv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AeadKeyIv(..)")
    }
}

impl AeadKeyIv {
    /// Splits a 44-byte key||iv block.
    pub fn from_block(block: &[u8]) -> Result<Self, CryptoError> {
        if block.len() != KEY_LEN + IV_LEN {
            return Err(CryptoError::Parameter("key/iv block must be 44 bytes"));
        }
        let mut key = [0u8; KEY_LEN];
        let mut iv = [0u8; IV_LEN];
        key.copy_from_slice(&block[..KEY_LEN]);
        iv.copy_from_slice(&block[KEY_LEN..]);
        Ok(AeadKeyIv { key, iv })
    }

    /// Derives the traffic key and iv from a traffic secret.
    pub fn from_traffic_secret(secret: &[u8; HASH_LEN]) -> Self {
        let key = hkdf_expand_label(secret, "key", &[], KEY_LEN).expect("fixed length");
        let iv = hkdf_expand_label(secret, "iv", &[], IV_LEN).expect("fixed length");
        AeadKeyIv::from_block(&[key, iv].concat()).expect("fixed length")
    }

    pub fn nonce_for(&self, seq: u64) -> [u8; IV_LEN] {
        let mut nonce = self.iv;
        for (n, s) in nonce[IV_LEN - 8..].iter_mut().zip(seq.to_be_bytes()) {
            *n ^= s;
        }
        nonce
    }
}

/// Which primitive a key pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyRole {
    KeyAgreement,
    Signing,
}

/// A 32-byte private key with its public half.
#[derive(Clone)]
pub struct KeyPair {
    role: KeyRole,
    private: [u8; 32],
    public: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("role", &self.role)
            .field("public", &hex::encode(self.public))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_private(role: KeyRole, private: [u8; 32]) -> Self {
        let public = match role {
            KeyRole::KeyAgreement => {
                x25519_dalek::PublicKey::from(&x25519_dalek::StaticSecret::from(private)).to_bytes()
            }
            KeyRole::Signing => ed25519_dalek::SigningKey::from_bytes(&private).verifying_key().to_bytes(),
        };
        KeyPair { role, private, public }
    }

    pub fn generate<R: RngCore + CryptoRng>(role: KeyRole, rng: &mut R) -> Self {
        let mut private = [0u8; 32];
        rng.fill_bytes(&mut private);
        Self::from_private(role, private)
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn public(&self) -> [u8; 32] {
        self.public
    }

    /// Raw private bytes. Only key files and sealed storage should need this.
    pub fn private_bytes(&self) -> &[u8; 32] {
        &self.private
    }
}

/// HKDF-Expand with a TLS 1.3 style `HkdfLabel` info block:
/// `u16 length || u8 len || "mini-tls " + label || u8 len || context`.
pub fn hkdf_expand_label(
    secret: &[u8; HASH_LEN],
    label: &str,
    context: &[u8],
    length: usize,
) -> Result<Vec<u8>, CryptoError> {
    if length == 0 || length > MAX_EXPAND_LEN {
        return Err(CryptoError::Parameter("output length out of range"));
    }
    if label.len() > MAX_LABEL_LEN {
        return Err(CryptoError::Parameter("label longer than 64 bytes"));
    }
    if context.len() > MAX_CONTEXT_LEN {
        return Err(CryptoError::Parameter("context longer than 255 bytes"));
    }
    let full_label_len = LABEL_PREFIX.len() + label.len();
    let mut info = Vec::with_capacity(4 + full_label_len + context.len());
    info.extend_from_slice(&(length as u16).to_be_bytes());
    info.push(full_label_len as u8);
    info.extend_from_slice(LABEL_PREFIX.as_bytes());
    info.extend_from_slice(label.as_bytes());
    info.push(context.len() as u8);
    info.extend_from_slice(context);

    let hk = Hkdf::<Sha256>::from_prk(secret).map_err(|_| CryptoError::Parameter("bad prk"))?;
    let mut out = vec![0u8; length];
    hk.expand(&info, &mut out).map_err(|_| CryptoError::Parameter("output length out of range"))?;
    Ok(out)
}

/// Like [`hkdf_expand_label`] for the common 32-byte case.
pub fn expand_secret(secret: &[u8; HASH_LEN], label: &str, context: &[u8]) -> [u8; HASH_LEN] {
    let v = hkdf_expand_label(secret, label, context, HASH_LEN).expect("32-byte expand");
    v.try_into().expect("32 bytes")
}

pub fn hkdf_extract(salt: &[u8], ikm: &[u8]) -> [u8; HASH_LEN] {
    let (prk, _) = Hkdf::<Sha256>::extract(Some(salt), ikm);
    prk.into()
}

/// SHA-256 over the concatenation of `messages`, in order.
pub fn transcript_hash<M: AsRef<[u8]>>(messages: &[M]) -> Digest {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.as_ref());
    }
    Digest(h.finalize().into())
}

/// AES-256-GCM with nonce = iv XOR big-endian(seq). Output is body || tag.
pub fn aead_seal(k: &AeadKeyIv, seq: u64, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    aead_seal_with_nonce(&k.key, &k.nonce_for(seq), aad, plaintext)
}

pub fn aead_open(k: &AeadKeyIv, seq: u64, aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    aead_open_with_nonce(&k.key, &k.nonce_for(seq), aad, ciphertext)
}

pub fn aead_seal_with_nonce(key: &[u8; KEY_LEN], nonce: &[u8; IV_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let cipher = Aes256Gcm::new(key.into());
    cipher
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
        .expect("AES-GCM encryption cannot fail for in-range inputs")
}

pub fn aead_open_with_nonce(
    key: &[u8; KEY_LEN],
    nonce: &[u8; IV_LEN],
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < TAG_LEN {
        return Err(CryptoError::Decrypt);
    }
    let cipher = Aes256Gcm::new(key.into());
    cipher.decrypt(Nonce::from_slice(nonce), Payload { msg: ciphertext, aad }).map_err(|_| CryptoError::Decrypt)
}

pub fn dh_generate<R: RngCore + CryptoRng>(rng: &mut R) -> KeyPair {
    KeyPair::generate(KeyRole::KeyAgreement, rng)
}

/// X25519. Rejects low-order peer points (all-zero output).
pub fn dh_shared(private: &KeyPair, peer_public: &[u8]) -> Result<[u8; 32], CryptoError> {
    if private.role != KeyRole::KeyAgreement {
        return Err(CryptoError::Parameter("not a key-agreement key"));
    }
    let peer: [u8; 32] =
        peer_public.try_into().map_err(|_| CryptoError::Parameter("peer public key must be 32 bytes"))?;
    let secret = x25519_dalek::StaticSecret::from(private.private);
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(peer));
    if !shared.was_contributory() {
        return Err(CryptoError::LowOrderPoint);
    }
    Ok(shared.to_bytes())
}

pub fn sign(signing_key: &KeyPair, message: &[u8]) -> [u8; SIGNATURE_LEN] {
    assert_eq!(signing_key.role, KeyRole::Signing, "sign() needs a signing key");
    ed25519_dalek::SigningKey::from_bytes(&signing_key.private).sign(message).to_bytes()
}

/// Ed25519 verification. A malformed public key is simply "not valid"; a
/// signature of the wrong length is a caller error.
pub fn verify_sig(public: &[u8; 32], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    let sig: [u8; SIGNATURE_LEN] =
        signature.try_into().map_err(|_| CryptoError::Parameter("signature must be 64 bytes"))?;
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(public) else {
        return Ok(false);
    };
    Ok(vk.verify(message, &ed25519_dalek::Signature::from_bytes(&sig)).is_ok())
}

fn pk_key_iv(shared: &[u8; 32], info: &[u8]) -> Result<AeadKeyIv, CryptoError> {
    AeadKeyIv::from_block(&hkdf_expand_label(shared, "ech", info, KEY_LEN + IV_LEN)?)
}

/// Seals `plaintext` to a static X25519 public key (ECH-style single shot).
pub fn pk_seal<R: RngCore + CryptoRng>(
    recipient_public: &[u8; 32],
    info: &[u8],
    plaintext: &[u8],
    rng: &mut R,
) -> Result<([u8; 32], Vec<u8>), CryptoError> {
    let ephemeral = dh_generate(rng);
    pk_seal_with_ephemeral(recipient_public, &ephemeral, info, plaintext)
}

#[doc(hidden)]
pub fn pk_seal_with_ephemeral(
    recipient_public: &[u8; 32],
    ephemeral: &KeyPair,
    info: &[u8],
    plaintext: &[u8],
) -> Result<([u8; 32], Vec<u8>), CryptoError> {
    let shared = dh_shared(ephemeral, recipient_public)?;
    let enc = ephemeral.public();
    let k = pk_key_iv(&shared, info)?;
    Ok((enc, aead_seal(&k, 0, &enc, plaintext)))
}

pub fn pk_open(
    recipient_private: &KeyPair,
    encapsulated_public: &[u8; 32],
    info: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let shared = dh_shared(recipient_private, encapsulated_public)?;
    let k = pk_key_iv(&shared, info)?;
    aead_open(&k, 0, encapsulated_public, ciphertext)
}
