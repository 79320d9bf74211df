//! Test deployment material: CA, broker certificate, ECH key, emulated
//! devices, reference values and ACLs, in memory or written to a directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use crate::attestation::{
    DeviceRecord, EmulatedTee, ReferenceValue, ReferenceValueStore, Role, DEFAULT_MAX_AGE_S, DEFAULT_TEE_TYPE,
};
use crate::broker::{
    AclRule, Action, BrokerConfig, BrokerSetup, Persistence, PersistenceConfig, TeeFiles, DEFAULT_QUEUE_CAP,
};
use crate::client::{ClientConfig, ClientConfigFile};
use crate::crypto::{KeyPair, KeyRole};
use crate::eventlog::EventLog;
use crate::handshake::{
    Certificate, ClientHandshakeConfig, Clock, Credentials, Mode, ServerHandshakeConfig, TicketTable,
};
use crate::keyfile;

pub const DEFAULT_BROKER_NAME: &str = "broker.local";
pub const DEFAULT_PEER: &str = "peer-1";
pub const CA_NAME: &str = "Test Global CA";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{0} already exists and is not empty (use --force to overwrite)")]
    Exists(PathBuf),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Other(String),
}

fn code_image<R: RngCore>(label: &str, rng: &mut R) -> Vec<u8> {
    let mut image = format!("attested-pubsub {label} image\n").into_bytes();
    let mut body = vec![0u8; 4096];
    rng.fill_bytes(&mut body);
    image.extend(body);
    image
}

#[derive(Debug, Clone)]
pub struct Fixtures {
    pub broker_name: String,
    pub ca: KeyPair,
    pub broker: Credentials,
    pub ech: KeyPair,
    pub vendor_root: KeyPair,
    pub broker_device: DeviceRecord,
    pub broker_image: Vec<u8>,
    pub peer_device: DeviceRecord,
    pub peer_image: Vec<u8>,
    pub peer: Credentials,
    pub acl: Vec<AclRule>,
}

/// Default rules: the fixture peer may publish and subscribe anywhere, and
/// any authenticated peer may subscribe below `public/`.
pub fn default_acl() -> Vec<AclRule> {
    vec![
        AclRule::allow(DEFAULT_PEER, Action::Publish, "#"),
        AclRule::allow(DEFAULT_PEER, Action::Subscribe, "#"),
        AclRule::allow("*", Action::Subscribe, "public/#"),
    ]
}

impl Fixtures {
    pub fn generate<R: RngCore + CryptoRng>(broker_name: &str, rng: &mut R) -> Self {
        let ca = KeyPair::generate(KeyRole::Signing, rng);
        let broker_key = KeyPair::generate(KeyRole::Signing, rng);
        let broker_cert = Certificate::issue(broker_name, broker_key.public(), vec![], CA_NAME, &ca);
        let vendor_root = KeyPair::generate(KeyRole::Signing, rng);
        let peer_key = KeyPair::generate(KeyRole::Signing, rng);
        let peer_cert = Certificate::issue(DEFAULT_PEER, peer_key.public(), vec![], CA_NAME, &ca);
        Fixtures {
            broker_name: broker_name.to_owned(),
            broker: Credentials { cert: broker_cert, key: broker_key },
            ech: KeyPair::generate(KeyRole::KeyAgreement, rng),
            broker_device: DeviceRecord::provision(&vendor_root, DEFAULT_TEE_TYPE, rng),
            broker_image: code_image("broker", rng),
            peer_device: DeviceRecord::provision(&vendor_root, DEFAULT_TEE_TYPE, rng),
            peer_image: code_image("peer", rng),
            peer: Credentials { cert: peer_cert, key: peer_key },
            acl: default_acl(),
            ca,
            vendor_root,
        }
    }

    pub fn broker_tee(&self) -> Arc<EmulatedTee> {
        Arc::new(EmulatedTee::boot(&self.broker_device, &self.broker_image).expect("fixture device"))
    }

    pub fn peer_tee(&self) -> Arc<EmulatedTee> {
        Arc::new(EmulatedTee::boot(&self.peer_device, &self.peer_image).expect("fixture device"))
    }

    pub fn reference_values(&self) -> Vec<ReferenceValue> {
        vec![
            ReferenceValue::new(Role::Broker, self.broker_tee().measurement(), "broker"),
            ReferenceValue::new(Role::Peer, self.peer_tee().measurement(), "peer"),
        ]
    }

    pub fn ref_store(&self) -> Arc<ReferenceValueStore> {
        Arc::new(ReferenceValueStore::new(self.reference_values(), vec![self.vendor_root.public()]))
    }

    /// A CA-issued certificate for another peer subject.
    pub fn issue_peer<R: RngCore + CryptoRng>(&self, subject: &str, rng: &mut R) -> Credentials {
        let key = KeyPair::generate(KeyRole::Signing, rng);
        Credentials { cert: Certificate::issue(subject, key.public(), vec![], CA_NAME, &self.ca), key }
    }

    pub fn server_config(&self, require_peer_attestation: bool) -> ServerHandshakeConfig {
        ServerHandshakeConfig {
            credentials: self.broker.clone(),
            ech_key: self.ech.clone(),
            ca_anchor: self.ca.public(),
            tee: Some(self.broker_tee()),
            ref_store: self.ref_store(),
            tickets: Arc::new(TicketTable::new()),
            require_peer_attestation,
            max_age_s: DEFAULT_MAX_AGE_S,
            clock: Clock::System,
        }
    }

    /// Client side. `attested` both requests broker evidence and attests the
    /// peer; otherwise the peer only presents its certificate.
    pub fn client_handshake(&self, mode: Mode, attested: bool) -> ClientHandshakeConfig {
        ClientHandshakeConfig {
            broker_name: self.broker_name.clone(),
            ech_public: self.ech.public(),
            ca_anchor: self.ca.public(),
            att_required: attested,
            mode,
            ticket: None,
            ref_store: self.ref_store(),
            credentials: Some(self.peer.clone()),
            tee: attested.then(|| self.peer_tee()),
            max_age_s: DEFAULT_MAX_AGE_S,
            clock: Clock::System,
        }
    }

    pub fn broker_setup(&self, require_peer_attestation: bool, log: EventLog) -> BrokerSetup {
        BrokerSetup {
            handshake: self.server_config(require_peer_attestation),
            acl: crate::broker::Acl::new(self.acl.clone()).expect("fixture ACL"),
            queue_cap: DEFAULT_QUEUE_CAP,
            persistence: None,
            log,
        }
    }

    pub fn with_persistence(setup: BrokerSetup, path: &Path, interval: Duration) -> BrokerSetup {
        BrokerSetup { persistence: Some(Persistence { path: path.to_owned(), interval }), ..setup }
    }

    pub fn client_config(&self, broker_addr: &str, client_id: &str, mode: Mode, attested: bool) -> ClientConfig {
        ClientConfig {
            broker_addr: broker_addr.to_owned(),
            handshake: self.client_handshake(mode, attested),
            ticket_cache: None,
            client_id: client_id.to_owned(),
            clean_session: true,
            keep_alive_s: 60,
            timeout: Duration::from_secs(10),
        }
    }

    /// Writes every file a broker and a client need into `out_dir`.
    pub fn write(&self, out_dir: &Path, force: bool) -> Result<Vec<PathBuf>, FixtureError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |e| FixtureError::Io(p, e)
        };
        if out_dir.exists() && !force && std::fs::read_dir(out_dir).map_err(io(out_dir))?.next().is_some() {
            return Err(FixtureError::Exists(out_dir.to_owned()));
        }
        std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), FixtureError> {
            let p = out_dir.join(name);
            std::fs::write(&p, bytes).map_err(io(&p))?;
            written.push(p);
            Ok(())
        };
        let hexline = |b: &[u8]| (hex::encode(b) + "\n").into_bytes();
        let json = |v: &dyn erased::Json| v.to_pretty();

        put("ca.key", hexline(self.ca.private_bytes()))?;
        put("ca.pub", hexline(&self.ca.public()))?;
        put("broker.cert", (self.broker.cert.to_hex() + "\n").into_bytes())?;
        put("broker.key", hexline(self.broker.key.private_bytes()))?;
        put("ech.key", hexline(self.ech.private_bytes()))?;
        put("ech.pub", hexline(&self.ech.public()))?;
        put(&format!("{DEFAULT_PEER}.cert"), (self.peer.cert.to_hex() + "\n").into_bytes())?;
        put(&format!("{DEFAULT_PEER}.key"), hexline(self.peer.key.private_bytes()))?;
        put("attestation-roots.json", json(&vec![hex::encode(self.vendor_root.public())]))?;
        put("reference-values.json", json(&self.reference_values()))?;
        put("broker-device.json", json(&self.broker_device))?;
        put("broker.image", self.broker_image.clone())?;
        put("peer-device.json", json(&self.peer_device))?;
        put("peer.image", self.peer_image.clone())?;
        put("acl.json", json(&self.acl))?;

        let broker = BrokerConfig {
            listen: "127.0.0.1:8883".into(),
            cert: "broker.cert".into(),
            key: "broker.key".into(),
            ca_anchor: "ca.pub".into(),
            ech_key: "ech.key".into(),
            reference_values: "reference-values.json".into(),
            attestation_roots: "attestation-roots.json".into(),
            acl: "acl.json".into(),
            tee: Some(TeeFiles { device: "broker-device.json".into(), image: "broker.image".into() }),
            require_peer_attestation: true,
            max_evidence_age_s: DEFAULT_MAX_AGE_S,
            persistence: Some(PersistenceConfig { path: "broker-store.sealed".into(), interval_ms: 1000 }),
            queue_cap_bytes: DEFAULT_QUEUE_CAP,
        };
        put("broker.json", json(&broker))?;
        let client = ClientConfigFile {
            broker_addr: "127.0.0.1:8883".into(),
            broker_name: self.broker_name.clone(),
            ech_public: "ech.pub".into(),
            ca_anchor: "ca.pub".into(),
            reference_values: "reference-values.json".into(),
            attestation_roots: "attestation-roots.json".into(),
            mode: Mode::Ecdh,
            att_required: true,
            ticket_cache: Some(format!("tickets/{DEFAULT_PEER}.ticket").into()),
            cert: Some(format!("{DEFAULT_PEER}.cert").into()),
            key: Some(format!("{DEFAULT_PEER}.key").into()),
            tee: Some(TeeFiles { device: "peer-device.json".into(), image: "peer.image".into() }),
            client_id: DEFAULT_PEER.into(),
            clean_session: true,
            max_evidence_age_s: DEFAULT_MAX_AGE_S,
        };
        put("client.json", json(&client))?;
        put("client-psk.json", json(&ClientConfigFile { mode: Mode::Psk, ..client.clone() }))?;
        let plain = ClientConfigFile { att_required: false, tee: None, ticket_cache: None, ..client };
        put("client-plain.json", json(&plain))?;
        Ok(written)
    }
}

mod erased {
    use super::Serialize;

    pub trait Json {
        fn to_pretty(&self) -> Vec<u8>;
    }

    impl<T: Serialize> Json for T {
        fn to_pretty(&self) -> Vec<u8> {
            let mut v = serde_json::to_vec_pretty(self).expect("fixture types serialize");
            v.push(b'\n');
            v
        }
    }
}

/// Reads back a key written by [`Fixtures::write`].
pub fn read_ca_public(dir: &Path) -> Result<[u8; 32], FixtureError> {
    keyfile::read_key32(&dir.join("ca.pub")).map_err(|e| FixtureError::Other(e.to_string()))
}
