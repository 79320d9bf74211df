//! The attested MQTT 3.1.1 (QoS 0 subset) broker.
//!
//! Identity comes only from the handshake: the certificate subject (or the
//! resumed ticket's identity) plus the verified measurement. MQTT usernames
//! and passwords are ignored.

mod acl;
mod config;
mod core;
pub mod packet;
mod server;
mod session;
mod store;
mod topic;

use thiserror::Error;

pub use self::acl::{Acl, AclRule, Action, MEASUREMENT_PATTERN_PREFIX};
pub use self::config::{BrokerConfig, PersistenceConfig, TeeFiles};
pub use self::core::{BrokerCore, ConnState, Flow, PacketSink, ProtocolViolation, RouteReport};
pub use self::server::{Broker, BrokerHandle, BrokerSetup, Persistence};
pub use self::session::{DurableSession, QueuedMessage, DEFAULT_QUEUE_CAP};
pub use self::store::{store_load, store_save, write_atomic};
pub use self::topic::{filter_subsumes, topic_match, TopicError, TopicFilter, TopicName, MAX_LEVELS, MAX_TOPIC_BYTES};

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("store: {0}")]
    Store(String),
}
