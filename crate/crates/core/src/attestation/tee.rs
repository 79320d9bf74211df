use std::collections::BTreeMap;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::evidence::{device_cert_message, Evidence};
use super::AttestationError;
use crate::crypto::{self, AeadKeyIv, Digest, KeyPair, KeyRole, SIGNATURE_LEN};

pub const DEFAULT_TEE_TYPE: &str = "emulated-v1";

/// On-disk description of an emulated device.
///
/// `device_seed` plays the role of the processor fuse key: the signing key and
/// the sealing secret are re-derived from it at boot and never written out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub tee_type: String,
    pub device_seed: String,
    pub device_cert: String,
}

impl DeviceRecord {
    /// Creates a device and has `root` certify its signing key.
    pub fn provision<R: RngCore + CryptoRng>(root: &KeyPair, tee_type: &str, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::provision_from_seed(root, tee_type, seed)
    }

    pub fn provision_from_seed(root: &KeyPair, tee_type: &str, seed: [u8; 32]) -> Self {
        let device_key = derive_device_key(&seed, tee_type);
        let cert = crypto::sign(root, &device_cert_message(&device_key.public(), tee_type));
        DeviceRecord { tee_type: tee_type.to_owned(), device_seed: hex::encode(seed), device_cert: hex::encode(cert) }
    }

    pub fn load(path: &Path) -> Result<Self, AttestationError> {
        let raw = std::fs::read(path).map_err(|e| AttestationError::Io(path.display().to_string(), e))?;
        serde_json::from_slice(&raw).map_err(|e| AttestationError::Config(format!("{}: {e}", path.display())))
    }
}

fn derive_device_key(seed: &[u8; 32], tee_type: &str) -> KeyPair {
    KeyPair::from_private(KeyRole::Signing, crypto::expand_secret(seed, "device signing", tee_type.as_bytes()))
}

/// Software stand-in for an enclave: a root-certified device key, a code
/// measurement and a device-bound sealing secret. Immutable once booted.
pub struct EmulatedTee {
    tee_type: String,
    device_key: KeyPair,
    device_cert: [u8; SIGNATURE_LEN],
    measurement: [u8; 32],
    sealing_secret: [u8; 32],
    base_claims: BTreeMap<String, String>,
}

impl std::fmt::Debug for EmulatedTee {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmulatedTee")
            .field("tee_type", &self.tee_type)
            .field("measurement", &hex::encode(self.measurement))
            .finish_non_exhaustive()
    }
}

impl EmulatedTee {
    /// Boots a device against the code it is "running": the measurement is
    /// the SHA-256 of `code_image`.
    pub fn boot(record: &DeviceRecord, code_image: &[u8]) -> Result<Self, AttestationError> {
        let seed: [u8; 32] = hex::decode(&record.device_seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| AttestationError::Config("device_seed must be 32 hex bytes".into()))?;
        let device_cert: [u8; SIGNATURE_LEN] = hex::decode(&record.device_cert)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| AttestationError::Config("device_cert must be 64 hex bytes".into()))?;
        let tee_type = record.tee_type.clone();
        let sealing_secret = crypto::expand_secret(&seed, "device sealing", tee_type.as_bytes());
        let base_claims =
            BTreeMap::from([("debug".to_owned(), "false".to_owned()), ("tcb_version".to_owned(), "1".to_owned())]);
        Ok(EmulatedTee {
            device_key: derive_device_key(&seed, &tee_type),
            tee_type,
            device_cert,
            measurement: Digest::of(code_image).0,
            sealing_secret,
            base_claims,
        })
    }

    /// Boots from a device file and the code image file it measures.
    pub fn load(device_file: &Path, code_image: &Path) -> Result<Self, AttestationError> {
        let record = DeviceRecord::load(device_file)?;
        let image = std::fs::read(code_image).map_err(|e| AttestationError::Io(code_image.display().to_string(), e))?;
        Self::boot(&record, &image)
    }

    pub fn tee_type(&self) -> &str {
        &self.tee_type
    }

    pub fn measurement(&self) -> [u8; 32] {
        self.measurement
    }

    pub fn device_public(&self) -> [u8; 32] {
        self.device_key.public()
    }

    #[doc(hidden)]
    pub fn device_private_for_tests(&self) -> [u8; 32] {
        *self.device_key.private_bytes()
    }

    /// Produces signed evidence bound to `binding`, stamped with `issued_at`.
    pub fn generate_evidence_at(
        &self,
        binding: [u8; 32],
        extra_claims: &BTreeMap<String, String>,
        issued_at: u64,
    ) -> Evidence {
        let mut platform_claims = self.base_claims.clone();
        platform_claims.extend(extra_claims.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut evidence = Evidence {
            tee_type: self.tee_type.clone(),
            measurement: self.measurement,
            platform_claims,
            binding,
            issued_at,
            device_public: self.device_key.public(),
            device_cert: self.device_cert,
            signature: [0u8; SIGNATURE_LEN],
        };
        evidence.signature = crypto::sign(&self.device_key, &evidence.signing_bytes());
        evidence
    }

    /// Sealing key for `context`; stable for this device and code measurement.
    pub fn seal_key(&self, context: &str) -> Result<AeadKeyIv, AttestationError> {
        if context.is_empty() {
            return Err(AttestationError::Config("seal context must be non-empty".into()));
        }
        let info = [context.as_bytes(), &self.measurement].concat();
        let block = crypto::hkdf_expand_label(&self.sealing_secret, "seal", &info, 44)
            .map_err(|e| AttestationError::Config(e.to_string()))?;
        Ok(AeadKeyIv::from_block(&block).expect("44 bytes"))
    }
}
