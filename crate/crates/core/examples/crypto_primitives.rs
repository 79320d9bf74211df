// The cipher suite on its own: X25519 agreement, labelled HKDF, AES-256-GCM
// records with per-sequence nonces, Ed25519 signatures and the single-shot
// public-key seal used for the attestation request.

use std::error::Error;

use attested_pubsub::crypto::{self, AeadKeyIv, KeyPair, KeyRole};
use rand::rngs::OsRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let alice = crypto::dh_generate(&mut OsRng);
    let bob = crypto::dh_generate(&mut OsRng);
    let k1 = crypto::dh_shared(&alice, &bob.public())?;
    let k2 = crypto::dh_shared(&bob, &alice.public())?;
    assert_eq!(k1, k2);
    println!("x25519 shared secret  {}", hex::encode(k1));

    let prk = crypto::hkdf_extract(&[0; 32], &k1);
    let traffic = crypto::expand_secret(&prk, "c ap traffic", &crypto::transcript_hash(&[b"hello"]).0);
    println!("derived traffic secret {}", hex::encode(traffic));

    let keys = AeadKeyIv::from_traffic_secret(&traffic);
    let sealed = crypto::aead_seal(&keys, 7, b"header", b"attested hello");
    assert_eq!(crypto::aead_open(&keys, 7, b"header", &sealed)?, b"attested hello");
    assert!(crypto::aead_open(&keys, 8, b"header", &sealed).is_err(), "wrong sequence number must fail");
    println!("record sealed to {} bytes, opens only at its own sequence number", sealed.len());

    let signer = KeyPair::generate(KeyRole::Signing, &mut OsRng);
    let sig = crypto::sign(&signer, b"certificate verify input");
    assert!(crypto::verify_sig(&signer.public(), b"certificate verify input", &sig)?);
    assert!(!crypto::verify_sig(&signer.public(), b"something else", &sig)?);
    println!("ed25519 signature verifies and rejects other messages");

    let server = KeyPair::generate(KeyRole::KeyAgreement, &mut OsRng);
    let (enc, ct) = crypto::pk_seal(&server.public(), b"attreq", b"secret request", &mut OsRng)?;
    assert_eq!(crypto::pk_open(&server, &enc, b"attreq", &ct)?, b"secret request");
    println!("sealed request: 32-byte encapsulation + {} bytes", ct.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
