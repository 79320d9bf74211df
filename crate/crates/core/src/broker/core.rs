//! IO-free broker logic: session registry, subscription trie, ACL checks and
//! offline queues behind one mutex. Connection handlers feed it packets and
//! receive outbound packets through a [`PacketSink`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use super::acl::Acl;
use super::packet::{self, Connect, Packet, Publish};
use super::session::DurableSession;
use super::topic::{TopicFilter, TopicName};
use crate::eventlog::EventLog;
use crate::handshake::PeerIdentity;

/// Outbound side of one connection.
pub trait PacketSink: Send + Sync {
    /// Queues an encoded packet; `false` means the consumer is too slow and
    /// the packet was not accepted.
    fn send(&self, packet: Arc<Vec<u8>>) -> bool;
    /// Tears the connection down.
    fn close(&self);
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteReport {
    pub delivered: Vec<String>,
    pub queued: Vec<String>,
    pub denied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("protocol violation: {0}")]
pub struct ProtocolViolation(pub String);

fn violation(s: impl Into<String>) -> ProtocolViolation {
    ProtocolViolation(s.into())
}

/// What the connection handler should do after a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Close,
}

#[derive(Default)]
struct TrieNode {
    children: HashMap<String, TrieNode>,
    subscribers: BTreeSet<String>,
}

impl TrieNode {
    fn insert(&mut self, filter: &TopicFilter, client: &str) {
        let mut node = self;
        for level in filter.levels() {
            node = node.children.entry(level.to_owned()).or_default();
        }
        node.subscribers.insert(client.to_owned());
    }

    fn remove(&mut self, levels: &[&str], client: &str) {
        match levels.split_first() {
            None => {
                self.subscribers.remove(client);
            }
            Some((first, rest)) => {
                if let Some(child) = self.children.get_mut(*first) {
                    child.remove(rest, client);
                    if child.subscribers.is_empty() && child.children.is_empty() {
                        self.children.remove(*first);
                    }
                }
            }
        }
    }

    fn collect(&self, levels: &[&str], depth: usize, out: &mut BTreeSet<String>) {
        let wild_ok = !(depth == 0 && levels.first().is_some_and(|l| l.starts_with('$')));
        if wild_ok {
            if let Some(hash) = self.children.get("#") {
                out.extend(hash.subscribers.iter().cloned());
            }
        }
        let Some((first, rest)) = levels.split_first() else {
            out.extend(self.subscribers.iter().cloned());
            return;
        };
        if wild_ok {
            if let Some(plus) = self.children.get("+") {
                plus.collect(rest, depth + 1, out);
            }
        }
        if let Some(lit) = self.children.get(*first) {
            lit.collect(rest, depth + 1, out);
        }
    }
}

struct Online {
    conn_id: u64,
    sink: Arc<dyn PacketSink>,
}

struct Entry {
    session: DurableSession,
    clean: bool,
    online: Option<Online>,
}

#[derive(Default)]
struct State {
    sessions: HashMap<String, Entry>,
    trie: TrieNode,
    next_conn: u64,
    dirty: bool,
}

impl State {
    fn drop_session(&mut self, client_id: &str) {
        if let Some(e) = self.sessions.remove(client_id) {
            for f in &e.session.subscriptions {
                self.trie.remove(&f.split('/').collect::<Vec<_>>(), client_id);
            }
            if !e.clean {
                self.dirty = true;
            }
        }
    }
}

/// Per-connection state owned by the connection handler.
pub struct ConnState {
    pub peer: PeerIdentity,
    conn_id: u64,
    client_id: Option<String>,
    sink: Arc<dyn PacketSink>,
}

impl ConnState {
    pub fn client_id(&self) -> Option<&str> {
        self.client_id.as_deref()
    }
}

pub struct BrokerCore {
    acl: Acl,
    queue_cap: usize,
    log: EventLog,
    state: Mutex<State>,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl BrokerCore {
    pub fn new(acl: Acl, queue_cap: usize, log: EventLog) -> Self {
        BrokerCore { acl, queue_cap, log, state: Mutex::new(State::default()) }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("broker state poisoned")
    }

    pub fn acl(&self) -> &Acl {
        &self.acl
    }

    /// Registers a new authenticated connection.
    pub fn open(&self, peer: PeerIdentity, sink: Arc<dyn PacketSink>) -> ConnState {
        let mut st = self.lock();
        st.next_conn += 1;
        ConnState { peer, conn_id: st.next_conn, client_id: None, sink }
    }

    /// Applies one inbound packet. An `Err` means the connection must be aborted.
    pub fn handle_packet(&self, conn: &mut ConnState, packet: Packet) -> Result<Flow, ProtocolViolation> {
        if conn.client_id.is_none() {
            return match packet {
                Packet::Connect(c) => Ok(self.connect(conn, c)),
                _ => Err(violation("first packet must be CONNECT")),
            };
        }
        match packet {
            Packet::Connect(_) => Err(violation("second CONNECT")),
            Packet::Publish(p) => {
                self.publish(conn, p)?;
                Ok(Flow::Continue)
            }
            Packet::Subscribe { packet_id, filters } => {
                let codes = self.subscribe(conn, &filters)?;
                conn.sink.send(Arc::new(Packet::Suback { packet_id, codes }.encode()));
                Ok(Flow::Continue)
            }
            Packet::Unsubscribe { packet_id, filters } => {
                self.unsubscribe(conn, &filters)?;
                conn.sink.send(Arc::new(Packet::Unsuback { packet_id }.encode()));
                Ok(Flow::Continue)
            }
            Packet::Pingreq => {
                conn.sink.send(Arc::new(Packet::Pingresp.encode()));
                Ok(Flow::Continue)
            }
            Packet::Disconnect => Ok(Flow::Close),
            other => Err(violation(format!("unexpected packet from client: {other:?}"))),
        }
    }

    fn connect(&self, conn: &mut ConnState, c: Connect) -> Flow {
        let refuse = |rc: u8| {
            conn.sink.send(Arc::new(Packet::Connack { session_present: false, return_code: rc }.encode()));
            Flow::Close
        };
        if c.will {
            return refuse(packet::RC_NOT_AUTHORIZED);
        }
        if conn.peer.is_anonymous() {
            self.log.warn("connect_refused", &[("reason", &"anonymous"), ("client_id", &c.client_id)]);
            return refuse(packet::RC_NOT_AUTHORIZED);
        }
        let client_id = if c.client_id.is_empty() {
            if !c.clean_session {
                return refuse(packet::RC_IDENTIFIER_REJECTED);
            }
            format!("auto-{}", conn.conn_id)
        } else {
            c.client_id.clone()
        };

        let mut st = self.lock();
        if let Some(existing) = st.sessions.get_mut(&client_id) {
            if existing.session.owner != conn.peer.subject {
                drop(st);
                self.log.warn(
                    "connect_refused",
                    &[("reason", &"session_owned_by_other"), ("client_id", &client_id), ("peer", &conn.peer.subject)],
                );
                return refuse(packet::RC_NOT_AUTHORIZED);
            }
            // Session takeover: the newest connection wins.
            if let Some(old) = existing.online.take() {
                old.sink.close();
            }
        }
        let resumable = st.sessions.get(&client_id).is_some_and(|e| !e.clean);
        let session_present = resumable && !c.clean_session;
        if !session_present {
            st.drop_session(&client_id);
            st.sessions.insert(
                client_id.clone(),
                Entry {
                    session: DurableSession::new(&client_id, &conn.peer.subject),
                    clean: c.clean_session,
                    online: None,
                },
            );
        }
        let entry = st.sessions.get_mut(&client_id).expect("inserted above");
        entry.online = Some(Online { conn_id: conn.conn_id, sink: conn.sink.clone() });
        conn.sink.send(Arc::new(Packet::Connack { session_present, return_code: packet::RC_ACCEPTED }.encode()));
        let backlog = entry.session.drain();
        let flushed = backlog.len();
        for m in backlog {
            conn.sink.send(Arc::new(packet::encode_publish(&m.topic, &m.payload)));
        }
        if !c.clean_session {
            st.dirty = true;
        }
        drop(st);
        if flushed > 0 {
            self.log.info("dequeue", &[("client_id", &client_id), ("count", &flushed)]);
        }
        conn.client_id = Some(client_id);
        Flow::Continue
    }

    fn subscribe(&self, conn: &ConnState, filters: &[(String, u8)]) -> Result<Vec<u8>, ProtocolViolation> {
        let client_id = conn.client_id.as_deref().expect("connected");
        let mut parsed = Vec::with_capacity(filters.len());
        for (f, _) in filters {
            parsed.push(TopicFilter::new(f).map_err(|e| violation(format!("filter {f:?}: {e}")))?);
        }
        let mut codes = Vec::with_capacity(parsed.len());
        let mut st = self.lock();
        for f in parsed {
            if !self.acl.allows_subscribe(&conn.peer, &f) {
                self.log.warn(
                    "acl_deny",
                    &[("peer", &conn.peer.subject), ("action", &"subscribe"), ("filter", &f.as_str())],
                );
                codes.push(packet::SUBACK_FAILURE);
                continue;
            }
            let Some(entry) = st.sessions.get_mut(client_id) else { break };
            // Only QoS 0 is offered; higher requests are granted at 0.
            codes.push(0x00);
            if entry.session.subscriptions.insert(f.as_str().to_owned()) {
                let clean = entry.clean;
                st.trie.insert(&f, client_id);
                st.dirty |= !clean;
            }
        }
        Ok(codes)
    }

    fn unsubscribe(&self, conn: &ConnState, filters: &[String]) -> Result<(), ProtocolViolation> {
        let client_id = conn.client_id.as_deref().expect("connected");
        for f in filters {
            TopicFilter::new(f).map_err(|e| violation(format!("filter {f:?}: {e}")))?;
        }
        let mut st = self.lock();
        for f in filters {
            let Some(entry) = st.sessions.get_mut(client_id) else { break };
            if entry.session.subscriptions.remove(f) {
                let clean = entry.clean;
                st.trie.remove(&f.split('/').collect::<Vec<_>>(), client_id);
                st.dirty |= !clean;
            }
        }
        Ok(())
    }

    fn publish(&self, conn: &ConnState, p: Publish) -> Result<RouteReport, ProtocolViolation> {
        if p.qos > 0 {
            return Err(violation("only QoS 0 is supported"));
        }
        if p.retain {
            return Err(violation("retained messages are not supported"));
        }
        if p.payload.len() > packet::MAX_PAYLOAD {
            return Err(violation("payload too large"));
        }
        let topic = TopicName::new(&p.topic).map_err(|e| violation(format!("topic {:?}: {e}", p.topic)))?;
        Ok(self.route_publish(&topic, &p.payload, &conn.peer))
    }

    /// Delivers to every matching online session once and queues for matching
    /// offline durable sessions. The match set is computed and fanned out
    /// under one lock, so per-publisher order is kept for every subscriber.
    pub fn route_publish(&self, topic: &TopicName, payload: &[u8], publisher: &PeerIdentity) -> RouteReport {
        if !self.acl.allows_publish(publisher, topic) {
            self.log.warn("acl_deny", &[("peer", &publisher.subject), ("action", &"publish"), ("topic", &topic)]);
            return RouteReport { denied: true, ..Default::default() };
        }
        let levels: Vec<&str> = topic.levels().collect();
        let encoded = Arc::new(packet::encode_publish(topic.as_str(), payload));
        let mut report = RouteReport::default();
        let mut events: Vec<(&'static str, String, usize)> = Vec::new();
        let mut st = self.lock();
        let mut matched = BTreeSet::new();
        st.trie.collect(&levels, 0, &mut matched);
        let now = now_ms();
        let mut dirty = false;
        for client_id in matched {
            let Some(entry) = st.sessions.get_mut(&client_id) else { continue };
            if let Some(online) = &entry.online {
                if online.sink.send(encoded.clone()) {
                    report.delivered.push(client_id);
                    continue;
                }
                online.sink.close();
                entry.online = None;
                events.push(("slow_consumer", client_id.clone(), 0));
            }
            if !entry.clean {
                let evicted = entry.session.enqueue(topic.as_str(), payload, now, self.queue_cap);
                dirty = true;
                events.push(("enqueue", client_id.clone(), entry.session.queue.len()));
                if evicted > 0 {
                    events.push(("evict", client_id.clone(), evicted));
                }
                report.queued.push(client_id);
            }
        }
        st.dirty |= dirty;
        drop(st);
        for (event, client_id, n) in events {
            match event {
                "enqueue" => self.log.info("enqueue", &[("client_id", &client_id), ("topic", &topic), ("depth", &n)]),
                "evict" => self.log.warn("evict", &[("client_id", &client_id), ("count", &n)]),
                _ => self.log.warn(event, &[("client_id", &client_id)]),
            }
        }
        report
    }

    /// Called when a connection ends for any reason.
    pub fn close(&self, conn: &ConnState) {
        let Some(client_id) = conn.client_id.as_deref() else { return };
        let mut st = self.lock();
        let Some(entry) = st.sessions.get_mut(client_id) else { return };
        if entry.online.as_ref().is_some_and(|o| o.conn_id == conn.conn_id) {
            entry.online = None;
            if entry.clean {
                st.drop_session(client_id);
            }
        }
    }

    /// Copy of all durable sessions if anything changed since the last call.
    pub fn take_dirty_snapshot(&self) -> Option<Vec<DurableSession>> {
        let mut st = self.lock();
        if !st.dirty {
            return None;
        }
        st.dirty = false;
        Some(Self::durable(&st))
    }

    pub fn durable_sessions(&self) -> Vec<DurableSession> {
        Self::durable(&self.lock())
    }

    fn durable(st: &State) -> Vec<DurableSession> {
        let sorted: BTreeMap<_, _> = st.sessions.iter().filter(|(_, e)| !e.clean).collect();
        sorted.into_values().map(|e| e.session.clone()).collect()
    }

    /// Marks state as changed so the next snapshot is written.
    pub fn mark_dirty(&self) {
        self.lock().dirty = true;
    }

    /// Installs sessions loaded from the store, all offline.
    pub fn restore(&self, sessions: Vec<DurableSession>) {
        let mut st = self.lock();
        for s in sessions {
            let id = s.client_id.clone();
            st.drop_session(&id);
            for f in &s.subscriptions {
                if let Ok(tf) = TopicFilter::new(f) {
                    st.trie.insert(&tf, &id);
                }
            }
            st.sessions.insert(id, Entry { session: s, clean: false, online: None });
        }
    }

    pub fn is_online(&self, client_id: &str) -> bool {
        self.lock().sessions.get(client_id).is_some_and(|e| e.online.is_some())
    }

    pub fn queue_len(&self, client_id: &str) -> usize {
        self.lock().sessions.get(client_id).map_or(0, |e| e.session.queue.len())
    }

    /// Closes every live connection.
    pub fn close_all(&self) {
        let st = self.lock();
        for e in st.sessions.values() {
            if let Some(o) = &e.online {
                o.sink.close();
            }
        }
    }
}
