pub mod attestation;
pub mod bench;
pub mod broker;
pub mod client;
pub mod crypto;
pub mod eventlog;
pub mod fixtures;
pub mod handshake;
pub mod keyfile;
pub mod transport;
