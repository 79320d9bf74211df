use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

/// Default cap on the bytes an offline session may hold.
pub const DEFAULT_QUEUE_CAP: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedMessage {
    pub topic: String,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    /// Unix milliseconds.
    pub enqueued_at: u64,
    pub seq: u64,
}

impl QueuedMessage {
    pub fn cost(&self) -> usize {
        self.topic.len() + self.payload.len()
    }
}

/// Subscriber state that outlives a connection (`clean_session = false`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurableSession {
    pub client_id: String,
    /// Subject that created the session; only it may resume it.
    pub owner: String,
    pub subscriptions: BTreeSet<String>,
    pub queue: VecDeque<QueuedMessage>,
    pub queue_bytes: usize,
    pub next_seq: u64,
}

impl DurableSession {
    pub fn new(client_id: &str, owner: &str) -> Self {
        DurableSession {
            client_id: client_id.to_owned(),
            owner: owner.to_owned(),
            subscriptions: BTreeSet::new(),
            queue: VecDeque::new(),
            queue_bytes: 0,
            next_seq: 0,
        }
    }

    /// Appends a message, dropping the oldest ones until the queue fits in
    /// `cap`. Returns how many messages were evicted (a message larger than
    /// the whole cap counts as evicted itself).
    pub fn enqueue(&mut self, topic: &str, payload: &[u8], now_ms: u64, cap: usize) -> usize {
        let msg = QueuedMessage {
            topic: topic.to_owned(),
            payload: payload.to_vec(),
            enqueued_at: now_ms,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        if msg.cost() > cap {
            return 1;
        }
        let mut evicted = 0;
        while self.queue_bytes + msg.cost() > cap {
            let old = self.queue.pop_front().expect("queue_bytes > 0 implies non-empty");
            self.queue_bytes -= old.cost();
            evicted += 1;
        }
        self.queue_bytes += msg.cost();
        self.queue.push_back(msg);
        evicted
    }

    pub fn drain(&mut self) -> Vec<QueuedMessage> {
        self.queue_bytes = 0;
        self.queue.drain(..).collect()
    }
}
