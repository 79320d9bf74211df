// Emulated TEE: provision a device under a vendor root, boot it with a code
// image, produce evidence bound to a channel value and verify it the way a
// broker or client does, including the common rejection reasons.

use std::collections::BTreeMap;
use std::error::Error;

use attested_pubsub::attestation::{
    verify_evidence, DeviceRecord, EmulatedTee, ReferenceValue, ReferenceValueStore, Role, DEFAULT_MAX_AGE_S,
    DEFAULT_TEE_TYPE,
};
use attested_pubsub::crypto::{KeyPair, KeyRole};
use rand::rngs::OsRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let vendor_root = KeyPair::generate(KeyRole::Signing, &mut OsRng);
    let device = DeviceRecord::provision(&vendor_root, DEFAULT_TEE_TYPE, &mut OsRng);
    let tee = EmulatedTee::boot(&device, b"sensor firmware 1.4.2")?;
    println!("measurement {}", hex::encode(tee.measurement()));

    let store = ReferenceValueStore::new(
        vec![ReferenceValue::new(Role::Peer, tee.measurement(), "sensor firmware 1.4.2")],
        vec![vendor_root.public()],
    );
    let binding = [0x42; 32];
    let now = 1_700_000_000;
    let evidence = tee.generate_evidence_at(binding, &BTreeMap::new(), now);
    let verdict = |e, b: &[u8; 32], t| verify_evidence(e, b, Role::Peer, &store, t, DEFAULT_MAX_AGE_S).reason();

    println!("matching binding      -> {}", verdict(&evidence, &binding, now).as_str());
    println!("other channel binding -> {}", verdict(&evidence, &[0x43; 32], now).as_str());
    println!("two minutes later     -> {}", verdict(&evidence, &binding, now + 120).as_str());

    let patched = EmulatedTee::boot(&device, b"sensor firmware 1.4.2 (patched)")?;
    let e = patched.generate_evidence_at(binding, &BTreeMap::new(), now);
    println!("unregistered image    -> {}", verdict(&e, &binding, now).as_str());

    let rogue_root = KeyPair::generate(KeyRole::Signing, &mut OsRng);
    let rogue = EmulatedTee::boot(&DeviceRecord::provision(&rogue_root, DEFAULT_TEE_TYPE, &mut OsRng), b"x")?;
    let e = rogue.generate_evidence_at(binding, &BTreeMap::new(), now);
    println!("untrusted vendor root -> {}", verdict(&e, &binding, now).as_str());

    let json = evidence.to_canonical_json();
    println!("evidence is {} bytes of canonical JSON", json.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
