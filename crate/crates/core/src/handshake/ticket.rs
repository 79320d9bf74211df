use std::collections::HashMap;
use std::sync::Mutex;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::schedule::{self, Secret};
use super::PeerIdentity;

pub const DEFAULT_TICKET_LIFETIME_S: u32 = 3600;
const MAX_TICKETS: usize = 100_000;

/// Broker-side resumption ticket.
#[derive(Debug, Clone)]
pub struct SessionTicket {
    pub ticket_id: [u8; 16],
    pub psk: Secret,
    pub issued_at: u64,
    pub lifetime_s: u32,
    pub peer_identity: PeerIdentity,
}

impl SessionTicket {
    pub fn issue<R: RngCore + CryptoRng>(
        resumption: &Secret,
        identity: PeerIdentity,
        issued_at: u64,
        rng: &mut R,
    ) -> Self {
        let mut ticket_id = [0u8; 16];
        rng.fill_bytes(&mut ticket_id);
        SessionTicket {
            psk: schedule::ticket_psk(resumption, &ticket_id),
            ticket_id,
            issued_at,
            lifetime_s: DEFAULT_TICKET_LIFETIME_S,
            peer_identity: identity.snapshot(),
        }
    }
}

/// What a client keeps to resume: the ticket id and the PSK it derived itself.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTicket {
    #[serde(with = "hex::serde")]
    pub ticket_id: [u8; 16],
    #[serde(with = "hex::serde")]
    pub psk: Secret,
}

impl std::fmt::Debug for ClientTicket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClientTicket({})", hex::encode(self.ticket_id))
    }
}

impl ClientTicket {
    /// Derives the PSK for a ticket id announced by the broker.
    pub fn from_announcement(resumption: &Secret, ticket_id: [u8; 16]) -> Self {
        ClientTicket { ticket_id, psk: schedule::ticket_psk(resumption, &ticket_id) }
    }
}

/// Single-use ticket store. `take` removes atomically, so a ticket presented
/// twice (even concurrently) resumes at most once.
#[derive(Debug, Default)]
pub struct TicketTable {
    inner: Mutex<HashMap<[u8; 16], SessionTicket>>,
}

impl TicketTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, ticket: SessionTicket, now: u64) {
        let mut map = self.inner.lock().expect("ticket table poisoned");
        if map.len() >= MAX_TICKETS {
            map.retain(|_, t| now.saturating_sub(t.issued_at) <= t.lifetime_s as u64);
            if map.len() >= MAX_TICKETS {
                if let Some(oldest) = map.values().min_by_key(|t| t.issued_at).map(|t| t.ticket_id) {
                    map.remove(&oldest);
                }
            }
        }
        map.insert(ticket.ticket_id, ticket);
    }

    pub fn take(&self, ticket_id: &[u8; 16], now: u64) -> Option<SessionTicket> {
        let t = self.inner.lock().expect("ticket table poisoned").remove(ticket_id)?;
        (now.saturating_sub(t.issued_at) <= t.lifetime_s as u64).then_some(t)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("ticket table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
