use std::path::Path;

use serde::{Deserialize, Serialize};

use super::topic::{filter_subsumes, topic_match, TopicFilter, TopicName};
use super::BrokerError;
use crate::handshake::PeerIdentity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Publish,
    Subscribe,
}

/// Prefix for patterns that match on the attested measurement instead of the subject.
pub const MEASUREMENT_PATTERN_PREFIX: &str = "measurement:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AclRule {
    /// Exact subject, `*` for any authenticated peer, or `measurement:<hex>`.
    pub identity_pattern: String,
    pub action: Action,
    pub filter: String,
    #[serde(default = "allow")]
    pub effect: String,
}

fn allow() -> String {
    "allow".to_owned()
}

impl AclRule {
    pub fn allow(identity_pattern: &str, action: Action, filter: &str) -> Self {
        AclRule { identity_pattern: identity_pattern.to_owned(), action, filter: filter.to_owned(), effect: allow() }
    }

    fn matches_identity(&self, peer: &PeerIdentity) -> bool {
        if peer.is_anonymous() {
            return false;
        }
        if self.identity_pattern == "*" {
            return true;
        }
        if let Some(hex_m) = self.identity_pattern.strip_prefix(MEASUREMENT_PATTERN_PREFIX) {
            return peer.measurement.is_some_and(|m| hex::encode(m) == hex_m.to_ascii_lowercase());
        }
        self.identity_pattern == peer.subject
    }
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: AclRule,
    filter: TopicFilter,
}

/// Deny-by-default rule set.
#[derive(Debug, Clone, Default)]
pub struct Acl {
    rules: Vec<CompiledRule>,
}

impl Acl {
    pub fn new(rules: Vec<AclRule>) -> Result<Self, BrokerError> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                if rule.effect != "allow" {
                    return Err(BrokerError::Config(format!("unsupported ACL effect {:?}", rule.effect)));
                }
                let filter = TopicFilter::new(&rule.filter)
                    .map_err(|e| BrokerError::Config(format!("ACL filter {:?}: {e}", rule.filter)))?;
                Ok(CompiledRule { rule, filter })
            })
            .collect::<Result<_, _>>()?;
        Ok(Acl { rules })
    }

    /// Reads a JSON array of rules.
    pub fn load(path: &Path) -> Result<Self, BrokerError> {
        let raw = std::fs::read(path).map_err(|e| BrokerError::Io(path.display().to_string(), e))?;
        let rules: Vec<AclRule> =
            serde_json::from_slice(&raw).map_err(|e| BrokerError::Config(format!("{}: {e}", path.display())))?;
        Self::new(rules)
    }

    pub fn rules(&self) -> Vec<AclRule> {
        self.rules.iter().map(|r| r.rule.clone()).collect()
    }

    pub fn allows_publish(&self, peer: &PeerIdentity, topic: &TopicName) -> bool {
        self.rules
            .iter()
            .any(|r| r.rule.action == Action::Publish && r.rule.matches_identity(peer) && topic_match(&r.filter, topic))
    }

    pub fn allows_subscribe(&self, peer: &PeerIdentity, requested: &TopicFilter) -> bool {
        self.rules.iter().any(|r| {
            r.rule.action == Action::Subscribe && r.rule.matches_identity(peer) && filter_subsumes(&r.filter, requested)
        })
    }
}
