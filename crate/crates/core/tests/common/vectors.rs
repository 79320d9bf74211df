//! Parser and checks for the frozen vector files in `vectors/`.

use std::path::PathBuf;

use attested_pubsub::crypto::{self, AeadKeyIv, KeyPair, KeyRole};

pub struct Vector {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn load(name: &str) -> Vec<Vector> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("vectors").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (i, o) = l.split_once("->").unwrap_or_else(|| panic!("malformed vector line {l:?}"));
            Vector {
                inputs: i.split_whitespace().map(str::to_owned).collect(),
                outputs: o.split_whitespace().map(str::to_owned).collect(),
            }
        })
        .collect()
}

pub fn bytes(field: &str) -> Vec<u8> {
    if field == "-" {
        Vec::new()
    } else {
        hex::decode(field).unwrap_or_else(|e| panic!("bad hex {field:?}: {e}"))
    }
}

pub fn arr32(field: &str) -> [u8; 32] {
    bytes(field).try_into().expect("32-byte field")
}

/// Runs every vector file. Returns `(file, checked)` pairs or the first mismatch.
pub fn check_all() -> Result<Vec<(&'static str, usize)>, String> {
    let mut report = Vec::new();
    let mismatch = |file: &str, i: usize, got: String, want: &str| -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("{file} vector {i}: got {got}, want {want}"))
        }
    };

    let v = load("x25519.txt");
    for (i, t) in v.iter().enumerate() {
        let kp = KeyPair::from_private(KeyRole::KeyAgreement, arr32(&t.inputs[0]));
        let got = match t.inputs.get(1) {
            Some(peer) => hex::encode(crypto::dh_shared(&kp, &bytes(peer)).map_err(|e| e.to_string())?),
            None => hex::encode(kp.public()),
        };
        mismatch("x25519", i, got, &t.outputs[0])?;
    }
    report.push(("x25519.txt", v.len()));

    let v = load("ed25519.txt");
    for (i, t) in v.iter().enumerate() {
        let kp = KeyPair::from_private(KeyRole::Signing, arr32(&t.inputs[0]));
        let msg = bytes(&t.inputs[1]);
        mismatch("ed25519 public", i, hex::encode(kp.public()), &t.outputs[0])?;
        let sig = crypto::sign(&kp, &msg);
        mismatch("ed25519 signature", i, hex::encode(sig), &t.outputs[1])?;
        if !crypto::verify_sig(&kp.public(), &msg, &sig).unwrap_or(false) {
            return Err(format!("ed25519 vector {i}: signature does not verify"));
        }
    }
    report.push(("ed25519.txt", v.len()));

    let v = load("hkdf_expand_label.txt");
    for (i, t) in v.iter().enumerate() {
        let label = String::from_utf8(bytes(&t.inputs[1])).expect("ascii label");
        let len: usize = t.inputs[3].parse().expect("length");
        let out = crypto::hkdf_expand_label(&arr32(&t.inputs[0]), &label, &bytes(&t.inputs[2]), len)
            .map_err(|e| e.to_string())?;
        mismatch("hkdf_expand_label", i, hex::encode(out), &t.outputs[0])?;
    }
    report.push(("hkdf_expand_label.txt", v.len()));

    let v = load("aead_seal.txt");
    for (i, t) in v.iter().enumerate() {
        let k = AeadKeyIv { key: arr32(&t.inputs[0]), iv: bytes(&t.inputs[1]).try_into().expect("12-byte iv") };
        let seq: u64 = t.inputs[2].parse().expect("seq");
        let (aad, pt) = (bytes(&t.inputs[3]), bytes(&t.inputs[4]));
        let ct = crypto::aead_seal(&k, seq, &aad, &pt);
        mismatch("aead_seal", i, hex::encode(&ct), &t.outputs[0])?;
        if crypto::aead_open(&k, seq, &aad, &ct).ok() != Some(pt) {
            return Err(format!("aead_seal vector {i}: round trip failed"));
        }
    }
    report.push(("aead_seal.txt", v.len()));

    let v = load("pk_seal.txt");
    for (i, t) in v.iter().enumerate() {
        let recipient = KeyPair::from_private(KeyRole::KeyAgreement, arr32(&t.inputs[0]));
        let eph = KeyPair::from_private(KeyRole::KeyAgreement, arr32(&t.inputs[1]));
        let (info, pt) = (bytes(&t.inputs[2]), bytes(&t.inputs[3]));
        let (enc, ct) =
            crypto::pk_seal_with_ephemeral(&recipient.public(), &eph, &info, &pt).map_err(|e| e.to_string())?;
        mismatch("pk_seal enc", i, hex::encode(enc), &t.outputs[0])?;
        mismatch("pk_seal ciphertext", i, hex::encode(&ct), &t.outputs[1])?;
        if crypto::pk_open(&recipient, &enc, &info, &ct).ok() != Some(pt) {
            return Err(format!("pk_seal vector {i}: open failed"));
        }
    }
    report.push(("pk_seal.txt", v.len()));

    let v = load("transcript_hash.txt");
    for (i, t) in v.iter().enumerate() {
        let msgs: Vec<Vec<u8>> = match t.inputs[0].as_str() {
            "-" => vec![],
            s => s.split(',').map(bytes).collect(),
        };
        mismatch("transcript_hash", i, crypto::transcript_hash(&msgs).to_hex(), &t.outputs[0])?;
    }
    report.push(("transcript_hash.txt", v.len()));

    // RFC 5869 test case 1.
    let prk = crypto::hkdf_extract(&bytes("000102030405060708090a0b0c"), &[0x0b; 22]);
    mismatch("hkdf_extract", 0, hex::encode(prk), "077709362c2e32df0ddc3f0dc47bba6390b6c73bb50f9c3122ec844ad7c2b3e5")?;
    report.push(("hkdf_extract (RFC 5869)", 1));
    Ok(report)
}
