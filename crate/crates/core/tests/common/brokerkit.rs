//! Drives `BrokerCore` directly with in-memory sinks, plus independent
//! matching oracles written from the MQTT 3.1.1 rules.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;

use attested_pubsub::broker::packet::{Connect, Packet, PacketAssembler};
use attested_pubsub::broker::{Acl, AclRule, Action, BrokerCore, ConnState, PacketSink, DEFAULT_QUEUE_CAP};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::handshake::PeerIdentity;

#[derive(Default)]
pub struct MemorySink {
    packets: Mutex<Vec<Arc<Vec<u8>>>>,
    pub closed: AtomicBool,
}

impl PacketSink for MemorySink {
    fn send(&self, packet: Arc<Vec<u8>>) -> bool {
        self.packets.lock().unwrap().push(packet);
        true
    }
    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}

impl MemorySink {
    pub fn take(&self) -> Vec<Packet> {
        let mut a = PacketAssembler::new();
        for p in self.packets.lock().unwrap().drain(..) {
            a.push(&p);
        }
        std::iter::from_fn(|| a.next_packet().expect("broker output decodes")).collect()
    }

    /// `(topic, payload)` of every PUBLISH since the last take.
    pub fn publishes(&self) -> Vec<(String, Vec<u8>)> {
        self.take()
            .into_iter()
            .filter_map(|p| match p {
                Packet::Publish(m) => Some((m.topic, m.payload)),
                _ => None,
            })
            .collect()
    }
}

pub fn core(rules: Vec<AclRule>) -> BrokerCore {
    BrokerCore::new(Acl::new(rules).unwrap(), DEFAULT_QUEUE_CAP, EventLog::disabled())
}

pub fn allow_all() -> Vec<AclRule> {
    let mut rules = Vec::new();
    for action in [Action::Publish, Action::Subscribe] {
        rules.push(AclRule::allow("*", action, "#"));
        rules.push(AclRule::allow("*", action, "$SYS/#"));
    }
    rules
}

pub fn peer(subject: &str) -> PeerIdentity {
    PeerIdentity::new(subject, None, None)
}

pub struct Client {
    pub conn: ConnState,
    pub sink: Arc<MemorySink>,
}

pub fn connect(core: &BrokerCore, peer: PeerIdentity, client_id: &str, clean: bool) -> Result<Client, u8> {
    let sink = Arc::new(MemorySink::default());
    let mut conn = core.open(peer, sink.clone());
    let p = Packet::Connect(Connect { client_id: client_id.into(), clean_session: clean, keep_alive: 60, will: false });
    core.handle_packet(&mut conn, p).expect("connect is well-formed");
    match sink.take().first() {
        Some(Packet::Connack { return_code: 0, .. }) => Ok(Client { conn, sink }),
        Some(Packet::Connack { return_code, .. }) => Err(*return_code),
        other => panic!("expected CONNACK, got {other:?}"),
    }
}

impl Client {
    pub fn subscribe(&mut self, core: &BrokerCore, filter: &str) -> u8 {
        core.handle_packet(&mut self.conn, Packet::Subscribe { packet_id: 1, filters: vec![(filter.into(), 0)] })
            .expect("valid subscribe");
        match self.sink.take().as_slice() {
            [Packet::Suback { codes, .. }] => codes[0],
            other => panic!("expected SUBACK, got {other:?}"),
        }
    }

    pub fn publish(&mut self, core: &BrokerCore, topic: &str, payload: &[u8]) {
        core.handle_packet(&mut self.conn, Packet::Publish(publish(topic, payload))).expect("valid publish");
    }
}

pub fn publish(topic: &str, payload: &[u8]) -> attested_pubsub::broker::packet::Publish {
    attested_pubsub::broker::packet::Publish {
        topic: topic.into(),
        payload: payload.to_vec(),
        qos: 0,
        retain: false,
        dup: false,
        packet_id: None,
    }
}

/// Topic matching written directly from the MQTT 3.1.1 rules, independent
/// of the broker's trie and `topic_match`.
pub fn oracle_match(filter: &str, topic: &str) -> bool {
    fn go(f: &[&str], t: &[&str]) -> bool {
        match (f.first(), t.first()) {
            (Some(&"#"), _) => true,
            (None, None) => true,
            (Some(&"+"), Some(_)) => go(&f[1..], &t[1..]),
            (Some(a), Some(b)) => a == b && go(&f[1..], &t[1..]),
            _ => false,
        }
    }
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    if topic.starts_with('$') && (f[0] == "+" || f[0] == "#") {
        return false;
    }
    go(&f, &t)
}

/// True when every topic `inner` matches is also matched by `outer`.
pub fn oracle_subsumes(outer: &str, inner: &str) -> bool {
    fn go(a: &[&str], b: &[&str], root: bool) -> bool {
        let dollar = |l: &str| root && l.starts_with('$');
        match (a.first(), b.first()) {
            (Some(&"#"), Some(l)) => !dollar(l),
            (Some(&"#"), None) => true,
            (None, None) => true,
            (_, Some(&"#")) => false,
            (Some(&"+"), Some(l)) => !dollar(l) && go(&a[1..], &b[1..], false),
            (Some(x), Some(y)) => x == y && go(&a[1..], &b[1..], false),
            _ => false,
        }
    }
    let a: Vec<&str> = outer.split('/').collect();
    let b: Vec<&str> = inner.split('/').collect();
    go(&a, &b, true)
}

const LEVELS: [&str; 4] = ["a", "b", "c", ""];

pub fn random_topic<R: Rng>(rng: &mut R) -> String {
    loop {
        let n = rng.gen_range(1..=4);
        let mut levels: Vec<&str> = (0..n).map(|_| *LEVELS.choose(rng).unwrap()).collect();
        if rng.gen_bool(0.1) {
            levels[0] = "$SYS";
        }
        let t = levels.join("/");
        if !t.is_empty() {
            return t;
        }
    }
}

pub fn random_filter<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..=4);
    let mut levels: Vec<&str> =
        (0..n).map(|_| if rng.gen_bool(0.3) { "+" } else { *LEVELS.choose(rng).unwrap() }).collect();
    if rng.gen_bool(0.1) {
        levels[0] = "$SYS";
    }
    if rng.gen_bool(0.3) {
        *levels.last_mut().unwrap() = "#";
    }
    let f = levels.join("/");
    if f.is_empty() {
        "#".into()
    } else {
        f
    }
}

/// MQTT 3.1.1 section 4.7 examples plus the `$` rules: (filter, topic, matches).
pub const CONFORMANCE: &[(&str, &str, bool)] = &[
    ("sport/tennis/player1/#", "sport/tennis/player1", true),
    ("sport/tennis/player1/#", "sport/tennis/player1/ranking", true),
    ("sport/tennis/player1/#", "sport/tennis/player1/score/wimbledon", true),
    ("sport/#", "sport", true),
    ("sport/#", "sport/", true),
    ("#", "sport/tennis", true),
    ("#", "/", true),
    ("sport/tennis/+", "sport/tennis/player1", true),
    ("sport/tennis/+", "sport/tennis/player1/ranking", false),
    ("sport/+", "sport", false),
    ("sport/+", "sport/", true),
    ("+/+", "/finance", true),
    ("/+", "/finance", true),
    ("+", "/finance", false),
    ("+", "sport", true),
    ("+/tennis/#", "sport/tennis/player1", true),
    ("sport/tennis", "Sport/Tennis", false),
    ("sport/tennis", "sport/tennis/", false),
    ("a//b", "a//b", true),
    ("a/+/b", "a//b", true),
    ("#", "$SYS/monitor/Clients", false),
    ("+/monitor/Clients", "$SYS/monitor/Clients", false),
    ("$SYS/#", "$SYS/monitor/Clients", true),
    ("$SYS/monitor/+", "$SYS/monitor/Clients", true),
    ("+", "$SYS", false),
    ("$SYS/#", "$SYS", true),
    ("a/$SYS", "a/$SYS", true),
    ("a/+", "a/$SYS", true),
    ("a/#", "a/$SYS/x", true),
];

/// Checks the conformance table against `topic_match` and against real
/// routing through a broker core.
pub fn check_conformance() -> Result<usize, String> {
    use attested_pubsub::broker::{topic_match, TopicFilter, TopicName};
    for &(f, t, want) in CONFORMANCE {
        let got = topic_match(
            &TopicFilter::new(f).map_err(|e| e.to_string())?,
            &TopicName::new(t).map_err(|e| e.to_string())?,
        );
        if got != want || oracle_match(f, t) != want {
            return Err(format!("{f:?} vs {t:?}: topic_match={got} oracle={} want={want}", oracle_match(f, t)));
        }
        let core = core(allow_all());
        let mut sub = connect(&core, peer("sub"), "sub", true).unwrap();
        sub.subscribe(&core, f);
        let mut publ = connect(&core, peer("pub"), "pub", true).unwrap();
        publ.publish(&core, t, b"x");
        let delivered = !sub.sink.publishes().is_empty();
        if delivered != want {
            return Err(format!("routing {f:?} vs {t:?}: delivered={delivered} want={want}"));
        }
    }
    Ok(CONFORMANCE.len())
}

/// Random sessions and publishes; each delivery set must equal the
/// brute-force oracle and every receiver gets exactly one copy.
pub fn check_routing_oracle(seed: u64, sessions: usize, publishes: usize) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let core = core(allow_all());
    let mut clients = Vec::new();
    let mut filters: Vec<Vec<String>> = Vec::new();
    for i in 0..sessions {
        let mut c = connect(&core, peer(&format!("s{i}")), &format!("s{i}"), true).unwrap();
        let fs: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| random_filter(&mut rng)).collect();
        for f in &fs {
            if c.subscribe(&core, f) != 0 {
                return Err(format!("subscription {f:?} refused"));
            }
        }
        clients.push(c);
        filters.push(fs);
    }
    let mut publisher = connect(&core, peer("publisher"), "publisher", true).unwrap();
    for n in 0..publishes {
        let topic = random_topic(&mut rng);
        let payload = format!("m{n}").into_bytes();
        publisher.publish(&core, &topic, &payload);
        let expected: BTreeSet<usize> =
            (0..sessions).filter(|&i| filters[i].iter().any(|f| oracle_match(f, &topic))).collect();
        let mut actual = BTreeSet::new();
        for (i, c) in clients.iter().enumerate() {
            let got = c.sink.publishes();
            match got.as_slice() {
                [] => {}
                [(t, p)] if t == &topic && p == &payload => {
                    actual.insert(i);
                }
                other => return Err(format!("session {i} got {} packets for {topic:?}", other.len())),
            }
        }
        if expected != actual {
            return Err(format!("publish {n} to {topic:?}: expected {expected:?}, delivered {actual:?}"));
        }
    }
    Ok(())
}

/// Rules for the ACL fuzz: two legitimate peers, nothing for anyone else.
pub fn fuzz_rules() -> Vec<AclRule> {
    vec![
        AclRule::allow("alice", Action::Publish, "a/#"),
        AclRule::allow("alice", Action::Subscribe, "#"),
        AclRule::allow("alice", Action::Subscribe, "$SYS/#"),
        AclRule::allow("bob", Action::Subscribe, "a/+"),
        AclRule::allow("bob", Action::Subscribe, "b/+/c"),
        AclRule::allow("bob", Action::Publish, "b/#"),
        AclRule::allow("bob", Action::Publish, "$SYS/b"),
    ]
}

fn oracle_allows(rules: &[AclRule], subject: &str, action: Action, check: impl Fn(&str) -> bool) -> bool {
    !subject.is_empty() && rules.iter().any(|r| r.identity_pattern == subject && r.action == action && check(&r.filter))
}

#[derive(Debug, Default)]
pub struct FuzzTally {
    pub ops: usize,
    pub legit_deliveries: usize,
}

/// Random subscribes and publishes from two legitimate peers and an intruder
/// without rules. The intruder must never receive or inject a message, and
/// every SUBACK code must match the independent subsumption oracle.
pub fn check_acl_fuzz(seed: u64, ops: usize, intruder: PeerIdentity) -> Result<FuzzTally, String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let rules = fuzz_rules();
    let core = core(rules.clone());
    let mut alice = connect(&core, peer("alice"), "alice", true).map_err(|rc| format!("alice refused {rc}"))?;
    let mut bob = connect(&core, peer("bob"), "bob", true).map_err(|rc| format!("bob refused {rc}"))?;
    let mut eve = match connect(&core, intruder.clone(), "eve", true) {
        Ok(c) => c,
        // Refusing the intruder outright is also zero access.
        Err(_) => return Ok(FuzzTally { ops, legit_deliveries: 0 }),
    };
    // Broad legitimate subscriptions so anything the intruder manages to
    // publish would be visible.
    alice.subscribe(&core, "#");
    alice.subscribe(&core, "$SYS/#");
    let mut tally = FuzzTally { ops, ..Default::default() };
    let mut eve_payloads = BTreeSet::new();
    for n in 0..ops {
        let topic = random_topic(&mut rng);
        let filter = random_filter(&mut rng);
        let payload = format!("op{n}").into_bytes();
        match rng.gen_range(0..6) {
            0 => {
                let code = eve.subscribe(&core, &filter);
                if code != 0x80 {
                    return Err(format!("intruder subscription {filter:?} granted code {code:#x}"));
                }
            }
            1 => {
                eve.publish(&core, &topic, &payload);
                eve_payloads.insert(payload);
            }
            2 | 3 => {
                let (name, c) = if rng.gen_bool(0.5) { ("alice", &mut alice) } else { ("bob", &mut bob) };
                let code = c.subscribe(&core, &filter);
                let want = if oracle_allows(&rules, name, Action::Subscribe, |rf| oracle_subsumes(rf, &filter)) {
                    0
                } else {
                    0x80
                };
                if code != want {
                    return Err(format!("{name} subscribe {filter:?}: code {code:#x}, oracle {want:#x}"));
                }
            }
            _ => {
                let (name, c) = if rng.gen_bool(0.5) { ("alice", &mut alice) } else { ("bob", &mut bob) };
                c.publish(&core, &topic, &payload);
                let allowed = oracle_allows(&rules, name, Action::Publish, |rf| oracle_match(rf, &topic));
                let seen = alice.sink.publishes();
                // `#` plus `$SYS/#` cover every topic.
                if allowed && !seen.iter().any(|(_, p)| p == &payload) {
                    return Err(format!("{name} publish to {topic:?} not routed to alice"));
                }
                if !allowed && seen.iter().any(|(_, p)| p == &payload) {
                    return Err(format!("{name} publish to {topic:?} delivered despite no rule"));
                }
                tally.legit_deliveries += seen.len() + bob.sink.publishes().len();
            }
        }
        let leaked = eve.sink.publishes();
        if !leaked.is_empty() {
            return Err(format!("intruder received {} message(s), first on {:?}", leaked.len(), leaked[0].0));
        }
        for c in [&alice, &bob] {
            if let Some((t, _)) = c.sink.publishes().iter().find(|(_, p)| eve_payloads.contains(p)) {
                return Err(format!("intruder publish to {t:?} was delivered"));
            }
        }
    }
    Ok(tally)
}
