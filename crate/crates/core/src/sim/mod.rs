// Copyright 2026 The EdgeLinker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Deterministic discrete-event simulation of devices, fog nodes and
//! attackers.
//!
//! Time is virtual (microseconds). All randomness comes from seeded
//! streams, so a config and seed fully determine the trace. Wall-clock
//! compute time is measured on the side and never feeds back into
//! simulated time.

pub mod attack;
pub mod link;
pub mod queue;
pub mod scenario;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::chain::{compute_tx_root, Block, BlockHeader, ContractKind, Payload, Query, Transaction};
use crate::channel::{open_message, seal_message_unchecked, ChannelMessage, KeyPair, PublicKey, Signature};
use crate::codec::Encode;
use crate::consensus::{select_proposer, ConsensusMessage, Phase};
use crate::genesis::GenesisConfig;
use crate::hash::{hash_of, sha256, Digest};
use crate::node::{
    AlertKind, ChannelMode, Envelope, FogNode, NodeConfig, NodeEvent, Outbound, PeerMsg, Request, Response,
    ResponseKind, DEFAULT_GAS_LIMIT,
};
use crate::vm::{contract_address, deploy_args, ContractCall, Reading, READ_PERMISSION};

use attack::{AttackConfig, AttackRecord, AttackReport};
use link::{Class, Delivery, Streams};
use queue::EventQueue;
use scenario::{ScenarioConfig, Workload};
use trace::{
    Behavior, Measured, MessageStats, NodeSummary, PhaseRecord, RequestRecord, SimTrace, TraceEvent, TraceKind,
};

pub use attack::AttackKind;
pub use link::LinkModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Addr {
    Node(usize),
    Client(usize),
    Attacker,
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Node(i) => write!(f, "n{i}"),
            Addr::Client(i) => write!(f, "c{i}"),
            Addr::Attacker => f.write_str("attacker"),
        }
    }
}

impl Serialize for Addr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub const PATIENT: usize = 0;
pub const DOCTOR: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Deploy,
    Write,
    Grant { to: usize },
    Revoke { to: usize },
    Read,
}

impl Action {
    fn name(self) -> &'static str {
        match self {
            Action::Deploy => "deploy",
            Action::Write => "write",
            Action::Grant { .. } => "grant",
            Action::Revoke { .. } => "revoke",
            Action::Read => "read",
        }
    }
}

#[derive(Debug, Clone)]
struct Task {
    offset_us: u64,
    client: usize,
    node: usize,
    action: Action,
}

#[derive(Debug, Clone)]
struct PhasePlan {
    name: &'static str,
    measured: bool,
    tasks: Vec<Task>,
}

#[derive(Debug, Clone)]
enum Wire {
    Envelope(Envelope),
    Peer(PeerMsg),
}

impl Wire {
    fn label(&self) -> &'static str {
        match self {
            Wire::Envelope(_) => "envelope",
            Wire::Peer(PeerMsg::Consensus(m)) => match m.phase {
                Phase::PrePrepare => "pre_prepare",
                Phase::Prepare => "prepare",
                Phase::Commit => "commit",
                Phase::RoundChange => "round_change",
            },
            Wire::Peer(PeerMsg::TxGossip(_)) => "tx_gossip",
            Wire::Peer(PeerMsg::SyncRequest { .. }) => "sync_request",
            Wire::Peer(PeerMsg::SyncResponse(_)) => "sync_response",
            Wire::Peer(PeerMsg::FetchRequest { .. }) => "fetch_request",
            Wire::Peer(PeerMsg::FetchResponse(_)) => "fetch_response",
            Wire::Peer(PeerMsg::Alert(_)) => "alert",
        }
    }

    fn size(&self) -> usize {
        match self {
            Wire::Envelope(e) => e.wire_len(),
            Wire::Peer(PeerMsg::Consensus(m)) => m.encode().len(),
            Wire::Peer(PeerMsg::TxGossip(tx)) => tx.encode().len(),
            Wire::Peer(PeerMsg::FetchResponse(b)) => b.encode().len(),
            Wire::Peer(PeerMsg::SyncResponse(v)) => v.iter().map(|f| f.encode().len()).sum(),
            Wire::Peer(_) => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Request(usize),
    Attack(usize),
    None,
}

#[derive(Debug)]
enum Ev {
    Deliver { from: Addr, to: Addr, wire: Wire, origin: Origin },
    ServiceDone { node: usize, env: Envelope, origin: Origin },
    Wake { node: usize },
    Task { phase: usize, task: usize },
    Timeout { req: usize },
    Attack { step: usize },
    Stop,
}

#[derive(Debug, Default)]
struct Pipe {
    inflight: Option<usize>,
    queue: VecDeque<usize>,
}

struct Client {
    key: KeyPair,
    rng: ChaCha8Rng,
    channel_nonce: BTreeMap<usize, u64>,
    tx_nonce: u64,
    pipes: BTreeMap<usize, Pipe>,
}

enum AttackStep {
    Replay { capture: usize },
    Insertion,
    Dos { call: usize },
    Spoof { attempt: usize },
}

struct Capture {
    node: usize,
    env: Envelope,
    identification: PublicKey,
    nonce: u64,
}

struct Attacker {
    cfg: AttackConfig,
    key: KeyPair,
    rng: ChaCha8Rng,
    steps: Vec<AttackStep>,
    pending_steps: usize,
    captures: Vec<Capture>,
    last_replay_us: u64,
    taps: Vec<SecureTap>,
    channel_nonce: BTreeMap<usize, u64>,
    tx_nonce: u64,
    records: Vec<AttackRecord>,
    record_meta: Vec<Option<(PublicKey, u64)>>,
    dos_seen: HashSet<Digest>,
    dos_processed: u64,
    insertion_count: usize,
}

struct SecureTap {
    env: crate::channel::SecureEnvelope,
}

fn derive_key(seed: u64, label: &str, i: usize) -> KeyPair {
    KeyPair::from_seed(sha256(format!("edgelinker/sim/{seed}/{label}/{i}").as_bytes()).0)
}

/// Public keys a scenario assigns to its nodes, in authority order.
pub fn node_keys(seed: u64, n: usize) -> Vec<KeyPair> {
    (0..n).map(|i| derive_key(seed, "node", i)).collect()
}

pub struct Simulation {
    cfg: ScenarioConfig,
    q: EventQueue<Ev>,
    streams: Streams,
    genesis_ms: u64,
    nodes: Vec<FogNode>,
    node_index: BTreeMap<PublicKey, usize>,
    behavior: Vec<Behavior>,
    busy_until: Vec<u64>,
    wake_at: Vec<Option<u64>>,
    clients: Vec<Client>,
    client_index: BTreeMap<PublicKey, usize>,
    contract: Digest,
    phases: Vec<PhasePlan>,
    phase_records: Vec<PhaseRecord>,
    phase_remaining: Vec<usize>,
    phases_done: bool,
    requests: Vec<RequestRecord>,
    bodies: Vec<Option<Request>>,
    by_channel: BTreeMap<(usize, usize, u64), usize>,
    tx_requests: HashMap<Digest, usize>,
    events: Vec<TraceEvent>,
    stats: MessageStats,
    executed_seen: HashSet<Digest>,
    byz_voted: BTreeSet<(usize, u64, u32, Digest)>,
    attacker: Option<Attacker>,
    measured: Measured,
    stopping: bool,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let n = cfg.nodes;
        let node_keys = node_keys(seed, n);
        let writers = match cfg.workload {
            Workload::Write { .. } | Workload::Mixed { .. } => cfg.writers,
            _ => 0,
        };
        let clients: Vec<Client> = (0..2 + writers)
            .map(|i| Client {
                key: derive_key(seed, "client", i),
                rng: ChaCha8Rng::from_seed(sha256(format!("client-rng/{seed}/{i}").as_bytes()).0),
                channel_nonce: BTreeMap::new(),
                tx_nonce: 0,
                pipes: BTreeMap::new(),
            })
            .collect();
        let attacker_key = derive_key(seed, "attacker", 0);

        let mut genesis = GenesisConfig::new(format!("sim-{seed}"), node_keys.iter().map(KeyPair::public_key).collect());
        genesis.block_interval_ms = cfg.block_interval_ms;
        genesis.max_txs = cfg.max_txs;
        for c in &clients {
            genesis.initial_balances.insert(c.key.public_key(), cfg.client_balance);
        }
        if let Some(AttackConfig::DosFlood { balance, .. }) = &cfg.attack {
            genesis.initial_balances.insert(attacker_key.public_key(), *balance);
        }
        let node_cfg = NodeConfig { channel_mode: cfg.channel, ..NodeConfig::default() };
        let nodes: Vec<FogNode> =
            node_keys.iter().map(|k| FogNode::new(k.clone(), genesis.clone(), node_cfg.clone())).collect();
        let behavior = (0..n)
            .map(|i| {
                if cfg.crashed.contains(&i) {
                    Behavior::Crashed
                } else if cfg.byzantine.contains(&i) {
                    Behavior::Byzantine
                } else {
                    Behavior::Honest
                }
            })
            .collect();

        let patient = clients[PATIENT].key.public_key();
        let contract = contract_address(&patient, 0);
        let phases = plan_phases(&cfg, n, writers);
        let phase_records = phases
            .iter()
            .map(|p| PhaseRecord {
                name: p.name.to_string(),
                measured: p.measured,
                started_us: None,
                completed_us: None,
                requests: Vec::new(),
            })
            .collect();
        let phase_remaining = phases.iter().map(|p| p.tasks.len()).collect();

        let attacker = cfg.attack.clone().map(|a| Attacker {
            cfg: a,
            key: attacker_key.clone(),
            rng: ChaCha8Rng::from_seed(sha256(format!("attacker-rng/{seed}").as_bytes()).0),
            steps: Vec::new(),
            pending_steps: 0,
            captures: Vec::new(),
            last_replay_us: 0,
            taps: Vec::new(),
            channel_nonce: BTreeMap::new(),
            tx_nonce: 0,
            records: Vec::new(),
            record_meta: Vec::new(),
            dos_seen: HashSet::new(),
            dos_processed: 0,
            insertion_count: 0,
        });

        Ok(Self {
            streams: Streams::new(seed),
            q: EventQueue::new(),
            genesis_ms: genesis.genesis_time_ms,
            node_index: node_keys.iter().enumerate().map(|(i, k)| (k.public_key(), i)).collect(),
            busy_until: vec![0; n],
            wake_at: vec![None; n],
            client_index: clients.iter().enumerate().map(|(i, c)| (c.key.public_key(), i)).collect(),
            clients,
            contract,
            phases,
            phase_records,
            phase_remaining,
            phases_done: false,
            requests: Vec::new(),
            bodies: Vec::new(),
            by_channel: BTreeMap::new(),
            tx_requests: HashMap::new(),
            events: Vec::new(),
            stats: MessageStats::default(),
            executed_seen: HashSet::new(),
            byz_voted: BTreeSet::new(),
            attacker,
            measured: Measured::default(),
            stopping: false,
            nodes,
            behavior,
            cfg,
        })
    }

    fn now(&self) -> u64 {
        self.q.now()
    }

    fn now_ms(&self) -> u64 {
        self.genesis_ms + self.q.now() / 1_000
    }

    fn trace(&mut self, kind: TraceKind) {
        let t_us = self.now();
        self.events.push(TraceEvent { t_us, kind });
    }

    pub fn run(mut self) -> SimTrace {
        for i in 0..self.nodes.len() {
            self.schedule_wake(i);
        }
        if self.phases.is_empty() {
            self.phases_done = true;
        } else {
            self.start_phase(0);
        }
        self.schedule_insertions();
        let end = self.cfg.duration_ms * 1_000;
        while let Some(t) = self.q.peek_time() {
            if t > end {
                break;
            }
            let (_, ev) = self.q.pop().expect("peeked");
            match ev {
                Ev::Stop => break,
                Ev::Deliver { from, to, wire, origin } => self.on_deliver(from, to, wire, origin),
                Ev::ServiceDone { node, env, origin } => self.on_service_done(node, env, origin),
                Ev::Wake { node } => self.on_wake(node),
                Ev::Task { phase, task } => self.on_task(phase, task),
                Ev::Timeout { req } => self.on_timeout(req),
                Ev::Attack { step } => self.on_attack_step(step),
            }
            self.maybe_stop();
        }
        self.finish()
    }

    fn maybe_stop(&mut self) {
        if self.stopping || !self.cfg.stop_when_done || !self.phases_done || self.phases.is_empty() {
            return;
        }
        if self.attacker.as_ref().is_some_and(|a| a.pending_steps > 0) {
            return;
        }
        self.stopping = true;
        let at = self.now() + self.cfg.settle_ms * 1_000;
        self.q.push(at, Ev::Stop);
    }

    // ---- network ----

    fn send(&mut self, from: Addr, to: Addr, wire: Wire, class: Class, origin: Origin) {
        let now = self.now();
        self.stats.sent += 1;
        *self.stats.sent_by_class.entry(class).or_default() += 1;
        if self.cfg.record_messages {
            let (msg, bytes) = (wire.label(), wire.size());
            self.trace(TraceKind::Send { from, to, class, msg, bytes });
        }
        if let (Some(att), Wire::Envelope(Envelope::Secure(env))) = (&mut self.attacker, &wire) {
            if let AttackConfig::Eavesdrop { max_taps } = att.cfg {
                let client_side = matches!(from, Addr::Client(_)) || matches!(to, Addr::Client(_));
                if client_side && att.taps.len() < max_taps {
                    att.taps.push(SecureTap { env: env.clone() });
                }
            }
        }
        let rng = self.streams.get(from, to, class);
        match self.cfg.link.deliver(from, to, now, rng) {
            Delivery::Scheduled(at) => {
                self.stats.in_flight += 1;
                self.q.push(at, Ev::Deliver { from, to, wire, origin });
            }
            Delivery::Dropped => {
                self.stats.dropped += 1;
                if self.cfg.record_messages {
                    let msg = wire.label();
                    self.trace(TraceKind::Drop { from, to, msg });
                }
            }
        }
    }

    fn on_deliver(&mut self, from: Addr, to: Addr, wire: Wire, origin: Origin) {
        self.stats.in_flight -= 1;
        self.stats.delivered += 1;
        if self.cfg.record_messages {
            let msg = wire.label();
            self.trace(TraceKind::Deliver { from, to, msg });
        }
        match to {
            Addr::Node(i) => {
                if self.behavior[i] == Behavior::Crashed {
                    return;
                }
                match wire {
                    Wire::Envelope(env) => {
                        let service = match origin {
                            Origin::Request(id) => {
                                self.requests[id].received_us = Some(self.now());
                                if self.requests[id].is_read() {
                                    self.cfg.service.read_us
                                } else {
                                    self.cfg.service.write_us
                                }
                            }
                            _ => self.cfg.service.write_us,
                        };
                        let done = self.now().max(self.busy_until[i]) + service;
                        self.busy_until[i] = done;
                        self.q.push(done, Ev::ServiceDone { node: i, env, origin });
                    }
                    Wire::Peer(msg) => {
                        let from_pk = match from {
                            Addr::Node(j) => self.nodes[j].public_key(),
                            Addr::Attacker => match &self.attacker {
                                Some(a) => a.key.public_key(),
                                None => return,
                            },
                            Addr::Client(_) => return,
                        };
                        if self.behavior[i] == Behavior::Byzantine {
                            self.byzantine_vote(i, &msg);
                        }
                        let now_ms = self.now_ms();
                        let t0 = Instant::now();
                        self.nodes[i].handle_peer(from_pk, msg, now_ms);
                        self.measured.node_compute_ns += t0.elapsed().as_nanos() as u64;
                        self.flush(i);
                    }
                }
            }
            Addr::Client(c) => {
                if let Wire::Envelope(env) = wire {
                    let Addr::Node(node) = from else { return };
                    self.on_client_response(c, node, env);
                }
            }
            Addr::Attacker => {}
        }
    }

    fn on_service_done(&mut self, i: usize, env: Envelope, origin: Origin) {
        let now_ms = self.now_ms();
        let before = match origin {
            Origin::Attack(_) => Some(self.node_state_digest(i)),
            _ => None,
        };
        let t0 = Instant::now();
        let result = self.nodes[i].handle_envelope(&env, now_ms);
        let elapsed = t0.elapsed().as_nanos() as u64;
        self.measured.node_compute_ns += elapsed;
        match origin {
            Origin::Request(id) => {
                self.requests[id].served_us = Some(self.now());
                self.measured.request_compute_ns[id] += elapsed;
            }
            Origin::Attack(r) => {
                let after = self.node_state_digest(i);
                let changed = before != Some(after);
                let outcome = match &result {
                    Ok(_) => "accepted".to_string(),
                    Err(e) => e.to_string(),
                };
                self.finish_attack_record(r, i, outcome, result.is_err(), changed);
            }
            Origin::None => {}
        }
        self.flush(i);
    }

    fn node_state_digest(&self, i: usize) -> Digest {
        let node = &self.nodes[i];
        let mut buf = node.world().encode();
        for tx in node.mempool() {
            buf.extend_from_slice(&tx.hash().0);
        }
        sha256(&buf)
    }

    fn on_wake(&mut self, i: usize) {
        if self.wake_at[i] != Some(self.now()) {
            return;
        }
        self.wake_at[i] = None;
        let now_ms = self.now_ms();
        let t0 = Instant::now();
        self.nodes[i].tick(now_ms);
        self.measured.node_compute_ns += t0.elapsed().as_nanos() as u64;
        self.flush(i);
    }

    fn schedule_wake(&mut self, i: usize) {
        if self.behavior[i] == Behavior::Crashed {
            return;
        }
        let deadline_ms = self.nodes[i].next_deadline();
        let mut at = deadline_ms.saturating_sub(self.genesis_ms) * 1_000;
        if at <= self.now() {
            at = self.now() + 1_000;
        }
        if self.wake_at[i].is_some_and(|w| w <= at && w > self.now()) {
            return;
        }
        self.wake_at[i] = Some(at);
        self.q.push(at, Ev::Wake { node: i });
    }

    fn flush(&mut self, i: usize) {
        let mut outs = self.nodes[i].take_outbox();
        if self.behavior[i] == Behavior::Byzantine {
            outs = self.byzantine_rewrite(i, outs);
        }
        let n = self.nodes.len();
        for o in outs {
            match o {
                Outbound::Broadcast(msg) => {
                    let class = peer_class(&msg);
                    for j in (0..n).filter(|&j| j != i) {
                        self.send(Addr::Node(i), Addr::Node(j), Wire::Peer(msg.clone()), class, Origin::None);
                    }
                }
                Outbound::ToPeer(pk, msg) => {
                    if let Some(&j) = self.node_index.get(&pk) {
                        let class = peer_class(&msg);
                        self.send(Addr::Node(i), Addr::Node(j), Wire::Peer(msg), class, Origin::None);
                    }
                }
                Outbound::ToClient(pk, env) => {
                    if let Some(&c) = self.client_index.get(&pk) {
                        self.send(Addr::Node(i), Addr::Client(c), Wire::Envelope(env), Class::Honest, Origin::None);
                    } else if self.attacker.as_ref().is_some_and(|a| a.key.public_key() == pk) {
                        self.send(Addr::Node(i), Addr::Attacker, Wire::Envelope(env), Class::Attack, Origin::None);
                    }
                }
            }
        }
        for ev in self.nodes[i].take_events() {
            self.on_node_event(i, ev);
        }
        self.schedule_wake(i);
    }

    fn on_node_event(&mut self, i: usize, ev: NodeEvent) {
        match ev {
            NodeEvent::Finalized { height, hash, txs, .. } => {
                self.trace(TraceKind::Finalized { node: i, height, hash, txs: txs.len() });
                let now = self.now();
                for tx in &txs {
                    if let Some(&id) = self.tx_requests.get(tx) {
                        if self.requests[id].node == i {
                            self.requests[id].finalized_us = Some(now);
                        }
                    }
                }
            }
            NodeEvent::Executed { tx_hash, sender, height, status, gas_used } => {
                if let Some(att) = &mut self.attacker {
                    if sender == att.key.public_key() && status == "denied" && att.dos_seen.insert(tx_hash) {
                        att.dos_processed += 1;
                    }
                }
                if self.executed_seen.insert(tx_hash) {
                    self.trace(TraceKind::Executed { tx_hash, height, status, gas_used });
                }
            }
            NodeEvent::Alert(a) => {
                self.trace(TraceKind::Alert { node: i, kind: a.kind, offender: a.offender, height: a.height });
            }
            NodeEvent::Rejected { reason, .. } => {
                self.trace(TraceKind::Rejected { node: i, reason });
            }
        }
    }

    // ---- byzantine behaviour ----

    /// Votes PREPARE and COMMIT for every proposal seen, on top of the
    /// engine's own votes.
    fn byzantine_vote(&mut self, i: usize, msg: &PeerMsg) {
        let PeerMsg::Consensus(m) = msg else { return };
        if m.phase != Phase::PrePrepare || !m.verify_signature() {
            return;
        }
        if select_proposer(m.height, m.round, self.nodes[i].engine().config()) != m.sender {
            return;
        }
        self.byzantine_cast(i, m.height, m.round, m.block_hash);
    }

    fn byzantine_cast(&mut self, i: usize, height: u64, round: u32, hash: Digest) {
        if !self.byz_voted.insert((i, height, round, hash)) {
            return;
        }
        let key = self.nodes[i].keypair().clone();
        for phase in [Phase::Prepare, Phase::Commit] {
            let vote = ConsensusMessage::new_signed(&key, phase, height, round, hash, None);
            for j in (0..self.nodes.len()).filter(|&j| j != i) {
                self.send(
                    Addr::Node(i),
                    Addr::Node(j),
                    Wire::Peer(PeerMsg::Consensus(vote.clone())),
                    Class::Attack,
                    Origin::None,
                );
            }
        }
    }

    /// Splits the node's own proposals: half the honest nodes get the real
    /// block, the rest a conflicting twin. Other byzantine nodes get both.
    fn byzantine_rewrite(&mut self, i: usize, outs: Vec<Outbound>) -> Vec<Outbound> {
        let me = self.nodes[i].public_key();
        let mut kept = Vec::new();
        for o in outs {
            let Outbound::Broadcast(PeerMsg::Consensus(m)) = &o else {
                kept.push(o);
                continue;
            };
            let Some(b1) = m.block.clone().filter(|_| m.phase == Phase::PrePrepare && m.sender == me) else {
                kept.push(o);
                continue;
            };
            let key = self.nodes[i].keypair().clone();
            let mut b2 = b1.clone();
            b2.header.timestamp += 1;
            b2.header.sign(&key);
            let pp2 = ConsensusMessage::new_signed(&key, Phase::PrePrepare, m.height, m.round, b2.hash(), Some(b2));
            let honest: Vec<usize> =
                (0..self.nodes.len()).filter(|&j| j != i && self.behavior[j] != Behavior::Byzantine).collect();
            let half = honest.len().div_ceil(2);
            for (k, &j) in honest.iter().enumerate() {
                let pp = if k < half { m.clone() } else { pp2.clone() };
                kept.push(Outbound::ToPeer(self.nodes[j].public_key(), PeerMsg::Consensus(pp)));
            }
            for j in (0..self.nodes.len()).filter(|&j| j != i && self.behavior[j] == Behavior::Byzantine) {
                let pk = self.nodes[j].public_key();
                kept.push(Outbound::ToPeer(pk, PeerMsg::Consensus(m.clone())));
                kept.push(Outbound::ToPeer(pk, PeerMsg::Consensus(pp2.clone())));
            }
            self.byz_voted.insert((i, m.height, m.round, m.block_hash));
            self.byzantine_cast(i, m.height, m.round, pp2.block_hash);
        }
        kept
    }

    // ---- clients ----

    fn start_phase(&mut self, p: usize) {
        let now = self.now();
        self.phase_records[p].started_us = Some(now);
        let name = self.phase_records[p].name.clone();
        self.trace(TraceKind::PhaseStart { phase: name });
        if self.phases[p].tasks.is_empty() {
            self.complete_phase(p);
            return;
        }
        for (t, task) in self.phases[p].tasks.iter().enumerate() {
            self.q.push(now + task.offset_us, Ev::Task { phase: p, task: t });
        }
    }

    fn complete_phase(&mut self, p: usize) {
        self.phase_records[p].completed_us = Some(self.now());
        let name = self.phase_records[p].name.clone();
        self.trace(TraceKind::PhaseDone { phase: name.clone() });
        if name == "deploy" {
            self.schedule_post_deploy_attacks();
        }
        if p + 1 < self.phases.len() {
            self.start_phase(p + 1);
        } else {
            self.phases_done = true;
        }
    }

    fn on_task(&mut self, phase: usize, t: usize) {
        let Task { client, node, action, .. } = self.phases[phase].tasks[t].clone();
        let id = self.requests.len();
        let now_ms = self.now_ms();
        let contract = self.contract;
        let c = &mut self.clients[client];
        let tx = |c: &mut Client, payload: Payload| {
            let tx = Transaction::new_signed(&c.key, c.tx_nonce, now_ms, payload, DEFAULT_GAS_LIMIT);
            c.tx_nonce += 1;
            tx
        };
        let body = match action {
            Action::Deploy => {
                let mut writers = vec![c.key.public_key()];
                writers.extend(self_writers(&self.clients));
                let c = &mut self.clients[client];
                Request::Submit(tx(
                    c,
                    Payload::Deploy { kind: ContractKind::HealthRecord, init_args: deploy_args(&writers) },
                ))
            }
            Action::Write => {
                let r = Reading { timestamp: now_ms, heart_rate: 60 + (id % 40) as u16 };
                Request::Submit(tx(c, ContractCall::AddReading(r).into_payload(contract)))
            }
            Action::Grant { to } | Action::Revoke { to } => {
                let addr = self.clients[to].key.public_key();
                let call = if matches!(action, Action::Grant { .. }) {
                    ContractCall::Grant { permission: READ_PERMISSION, addr }
                } else {
                    ContractCall::Revoke { permission: READ_PERMISSION, addr }
                };
                Request::Submit(tx(&mut self.clients[client], call.into_payload(contract)))
            }
            Action::Read => Request::Query(Query { contract, from_ts: 0, to_ts: u64::MAX }),
        };
        let tx_hash = match &body {
            Request::Submit(tx) => Some(tx.hash()),
            Request::Query(_) => None,
        };
        if let Some(h) = tx_hash {
            self.tx_requests.insert(h, id);
        }
        self.requests.push(RequestRecord {
            id,
            phase: self.phase_records[phase].name.clone(),
            client,
            node,
            action: action.name().to_string(),
            created_us: self.now(),
            sent_us: None,
            received_us: None,
            served_us: None,
            accepted_us: None,
            finalized_us: None,
            completed_us: None,
            outcome: None,
            tx_hash,
            readings: None,
        });
        self.bodies.push(Some(body));
        self.measured.request_compute_ns.push(0);
        self.phase_records[phase].requests.push(id);
        self.trace(TraceKind::Request { id, client, node, action: action.name().to_string() });

        let pipe = self.clients[client].pipes.entry(node).or_default();
        if pipe.inflight.is_none() {
            self.send_request(id);
        } else {
            pipe.queue.push_back(id);
        }
    }

    fn send_request(&mut self, id: usize) {
        let (client, node) = (self.requests[id].client, self.requests[id].node);
        let body = self.bodies[id].take().expect("request sent once");
        let now_ms = self.now_ms();
        let node_pk = self.nodes[node].public_key();
        let mode = self.cfg.channel;
        let c = &mut self.clients[client];
        let nonce = c.channel_nonce.entry(node).or_insert(0);
        *nonce += 1;
        let nonce = *nonce;
        let m = ChannelMessage { timestamp: now_ms, nonce, identification: c.key.public_key(), body: body.encode() };
        let t0 = Instant::now();
        let env = Envelope::seal(&m, &c.key, &node_pk, mode, &mut c.rng).expect("client keys are valid");
        self.measured.request_compute_ns[id] += t0.elapsed().as_nanos() as u64;
        c.pipes.entry(node).or_default().inflight = Some(id);
        self.by_channel.insert((client, node, nonce), id);
        self.requests[id].sent_us = Some(self.now());

        self.capture_for_replay(node, &env, m.identification, nonce);
        self.send(Addr::Client(client), Addr::Node(node), Wire::Envelope(env), Class::Honest, Origin::Request(id));
        let timeout = self.now() + self.cfg.request_timeout_ms * 1_000;
        self.q.push(timeout, Ev::Timeout { req: id });
    }

    fn on_client_response(&mut self, c: usize, node: usize, env: Envelope) {
        let t0 = Instant::now();
        let Ok(m) = env.open(&self.clients[c].key) else { return };
        let Ok(resp) = <Response as crate::codec::Decode>::decode(&m.body) else { return };
        let elapsed = t0.elapsed().as_nanos() as u64;
        let Some(&id) = self.by_channel.get(&(c, node, resp.in_reply_to)) else { return };
        self.measured.request_compute_ns[id] += elapsed;
        match resp.kind {
            ResponseKind::Accepted { .. } => {
                self.requests[id].accepted_us = Some(self.now());
                self.release_pipe(id);
            }
            ResponseKind::Rejected { reason } => {
                self.complete(id, format!("rejected: {reason}"));
                self.release_pipe(id);
            }
            ResponseKind::Readings { readings, .. } => {
                self.requests[id].readings = Some(readings.len());
                self.complete(id, "readings".into());
                self.release_pipe(id);
            }
            ResponseKind::Confirmed { status, .. } => {
                self.complete(id, status);
            }
        }
    }

    fn on_timeout(&mut self, id: usize) {
        let r = &self.requests[id];
        if r.completed_us.is_some() || r.accepted_us.is_some() {
            return;
        }
        self.complete(id, "lost".into());
        self.release_pipe(id);
    }

    fn release_pipe(&mut self, id: usize) {
        let (client, node) = (self.requests[id].client, self.requests[id].node);
        let pipe = self.clients[client].pipes.entry(node).or_default();
        if pipe.inflight != Some(id) {
            return;
        }
        pipe.inflight = None;
        if let Some(next) = pipe.queue.pop_front() {
            self.send_request(next);
        }
    }

    fn complete(&mut self, id: usize, outcome: String) {
        if self.requests[id].completed_us.is_some() {
            return;
        }
        self.requests[id].completed_us = Some(self.now());
        self.requests[id].outcome = Some(outcome.clone());
        self.trace(TraceKind::Response { id, outcome });
        let Some(p) = self.phase_records.iter().position(|p| p.name == self.requests[id].phase) else { return };
        self.phase_remaining[p] -= 1;
        if self.phase_remaining[p] == 0 {
            self.complete_phase(p);
        }
    }

    // ---- attacks ----

    fn capture_for_replay(&mut self, node: usize, env: &Envelope, identification: PublicKey, nonce: u64) {
        let now = self.now();
        let Some(att) = &mut self.attacker else { return };
        let AttackConfig::Replay { captures, spacing_ms } = att.cfg else { return };
        if att.captures.len() >= captures {
            return;
        }
        att.captures.push(Capture { node, env: env.clone(), identification, nonce });
        let spacing = spacing_ms * 1_000;
        let at = (now + spacing / 2).max(att.last_replay_us + spacing);
        att.last_replay_us = at;
        let capture = att.captures.len() - 1;
        att.steps.push(AttackStep::Replay { capture });
        att.pending_steps += 1;
        let step = att.steps.len() - 1;
        self.q.push(at, Ev::Attack { step });
    }

    fn schedule_insertions(&mut self) {
        let Some(att) = &mut self.attacker else { return };
        if let AttackConfig::Insertion { attempts, interval_ms } = att.cfg {
            for k in 0..attempts {
                att.steps.push(AttackStep::Insertion);
                att.pending_steps += 1;
                let step = att.steps.len() - 1;
                self.q.push((k as u64 + 1) * interval_ms * 1_000, Ev::Attack { step });
            }
        }
    }

    fn schedule_post_deploy_attacks(&mut self) {
        let now = self.now();
        let Some(att) = &mut self.attacker else { return };
        let (count, interval_ms, dos) = match att.cfg {
            AttackConfig::DosFlood { calls, interval_ms, .. } => (calls, interval_ms, true),
            AttackConfig::Spoof { attempts, interval_ms } => (attempts, interval_ms, false),
            _ => return,
        };
        for k in 0..count {
            att.steps.push(if dos { AttackStep::Dos { call: k } } else { AttackStep::Spoof { attempt: k } });
            att.pending_steps += 1;
            let step = att.steps.len() - 1;
            self.q.push(now + (k as u64 + 1) * interval_ms * 1_000, Ev::Attack { step });
        }
    }

    fn new_attack_record(&mut self, action: &str, node: Option<usize>, meta: Option<(PublicKey, u64)>) -> usize {
        let now = self.now();
        let att = self.attacker.as_mut().expect("attack configured");
        let id = att.records.len();
        att.records.push(AttackRecord {
            id,
            action: action.to_string(),
            node,
            sent_us: now,
            outcome: None,
            rejected: None,
            state_changed: None,
            alert_raised: None,
        });
        att.record_meta.push(meta);
        id
    }

    fn finish_attack_record(&mut self, r: usize, node: usize, outcome: String, rejected: bool, changed: bool) {
        let meta = self.attacker.as_ref().and_then(|a| a.record_meta[r]);
        let alert = meta.map(|(ident, nonce)| {
            let detail = format!("nonce {nonce} replayed");
            self.nodes[node]
                .alerts()
                .iter()
                .any(|a| a.kind == AlertKind::ReplayDetected && a.offender == ident && a.detail == detail)
        });
        let att = self.attacker.as_mut().expect("attack configured");
        let rec = &mut att.records[r];
        rec.outcome = Some(outcome.clone());
        rec.rejected = Some(rejected);
        rec.state_changed = Some(changed);
        rec.alert_raised = alert;
        let action = rec.action.clone();
        self.trace(TraceKind::Attack { id: r, action, node: Some(node), outcome });
    }

    fn attacker_envelope(&mut self, node: usize, body: Request, forge_identity: Option<PublicKey>) -> Envelope {
        let now_ms = self.now_ms();
        let node_pk = self.nodes[node].public_key();
        let mode = self.cfg.channel;
        let att = self.attacker.as_mut().expect("attack configured");
        let nonce = att.channel_nonce.entry(node).or_insert(0);
        *nonce += 1;
        let m = ChannelMessage {
            timestamp: now_ms,
            nonce: *nonce,
            identification: forge_identity.unwrap_or(att.key.public_key()),
            body: body.encode(),
        };
        match mode {
            ChannelMode::Secure => Envelope::Secure(
                seal_message_unchecked(&m, &att.key, &node_pk, &mut att.rng).expect("attacker key is valid"),
            ),
            ChannelMode::Plain => Envelope::Plain(m),
        }
    }

    fn on_attack_step(&mut self, step: usize) {
        let n = self.nodes.len();
        let (kind, tx_nonce) = {
            let att = self.attacker.as_mut().expect("attack configured");
            att.pending_steps -= 1;
            let kind = match &att.steps[step] {
                AttackStep::Replay { capture } => AttackStep::Replay { capture: *capture },
                AttackStep::Insertion => AttackStep::Insertion,
                AttackStep::Dos { call } => AttackStep::Dos { call: *call },
                AttackStep::Spoof { attempt } => AttackStep::Spoof { attempt: *attempt },
            };
            (kind, att.tx_nonce)
        };
        match kind {
            AttackStep::Replay { capture } => {
                let att = self.attacker.as_ref().expect("attack configured");
                let c = &att.captures[capture];
                let (node, env, meta) = (c.node, c.env.clone(), (c.identification, c.nonce));
                let r = self.new_attack_record("replay", Some(node), Some(meta));
                self.send(Addr::Attacker, Addr::Node(node), Wire::Envelope(env), Class::Attack, Origin::Attack(r));
            }
            AttackStep::Insertion => {
                let Some(target) = (0..n).find(|&i| self.behavior[i] == Behavior::Honest) else { return };
                let block = self.forged_block(target);
                let att = self.attacker.as_mut().expect("attack configured");
                att.insertion_count += 1;
                let pp = ConsensusMessage::new_signed(
                    &att.key,
                    Phase::PrePrepare,
                    block.header.height,
                    0,
                    block.hash(),
                    Some(block),
                );
                let r = self.new_attack_record("insert_block", None, None);
                for j in 0..n {
                    self.send(
                        Addr::Attacker,
                        Addr::Node(j),
                        Wire::Peer(PeerMsg::Consensus(pp.clone())),
                        Class::Attack,
                        Origin::None,
                    );
                }
                let att = self.attacker.as_mut().expect("attack configured");
                att.records[r].outcome = Some("sent".into());
            }
            AttackStep::Dos { call } => {
                let node = call % n;
                let att = self.attacker.as_mut().expect("attack configured");
                let r = Reading { timestamp: self.genesis_ms + self.q.now() / 1_000, heart_rate: 200 };
                let tx = Transaction::new_signed(
                    &att.key,
                    tx_nonce,
                    r.timestamp,
                    ContractCall::AddReading(r).into_payload(self.contract),
                    DEFAULT_GAS_LIMIT,
                );
                att.tx_nonce += 1;
                let env = self.attacker_envelope(node, Request::Submit(tx), None);
                let rec = self.new_attack_record("dos_call", Some(node), None);
                self.send(Addr::Attacker, Addr::Node(node), Wire::Envelope(env), Class::Attack, Origin::Attack(rec));
            }
            AttackStep::Spoof { attempt } => {
                let node = attempt % n;
                let patient = self.clients[PATIENT].key.public_key();
                let now_ms = self.now_ms();
                let att = self.attacker.as_ref().expect("attack configured");
                let reading = Reading { timestamp: now_ms, heart_rate: 1 };
                let mut forged = Transaction::new_signed(
                    &att.key,
                    0,
                    now_ms,
                    ContractCall::AddReading(reading).into_payload(self.contract),
                    DEFAULT_GAS_LIMIT,
                );
                forged.sender = patient;
                let (action, env) = match attempt % 3 {
                    // Claims to be the patient inside a channel keyed to the attacker.
                    0 => ("forged_identification", self.attacker_envelope(node, Request::Submit(forged), Some(patient))),
                    // Claims the patient's key in the clear-text hint.
                    1 => {
                        let mut env = self.attacker_envelope(node, Request::Submit(forged), Some(patient));
                        if let Envelope::Secure(e) = &mut env {
                            e.sender_hint = patient;
                        }
                        ("forged_hint", env)
                    }
                    // Honest channel, transaction claiming the patient as sender.
                    _ => ("forged_tx_sender", self.attacker_envelope(node, Request::Submit(forged), None)),
                };
                let rec = self.new_attack_record(action, Some(node), None);
                self.send(Addr::Attacker, Addr::Node(node), Wire::Envelope(env), Class::Attack, Origin::Attack(rec));
            }
        }
    }

    /// A block on top of `target`'s tip, proposed by the non-authority
    /// attacker and carrying a transaction with a forged sender.
    fn forged_block(&mut self, target: usize) -> Block {
        let patient = self.clients[PATIENT].key.public_key();
        let att = self.attacker.as_ref().expect("attack configured");
        let tip = self.nodes[target].chain().tip().clone();
        let now_ms = self.now_ms();
        let mut tx = Transaction::new_signed(
            &att.key,
            0,
            now_ms,
            Payload::Transfer { to: att.key.public_key(), amount: 1_000 },
            DEFAULT_GAS_LIMIT,
        );
        tx.sender = patient;
        let txs = vec![tx];
        let mut header = BlockHeader {
            height: tip.header.height + 1,
            timestamp: now_ms.max(tip.header.timestamp + 1),
            prev_hash: tip.hash(),
            tx_root: compute_tx_root(&txs),
            proposer: att.key.public_key(),
            proposer_signature: Signature::ZERO,
        };
        header.sign(&att.key);
        Block { header, transactions: txs }
    }

    // ---- wrap-up ----

    fn finish(mut self) -> SimTrace {
        let nodes: Vec<NodeSummary> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut chain_bytes = Vec::new();
                for b in node.chain().blocks() {
                    b.encode_to(&mut chain_bytes);
                }
                NodeSummary {
                    index: i,
                    public_key: node.public_key(),
                    behavior: self.behavior[i],
                    height: node.chain().height(),
                    tip_hash: node.chain().tip_hash(),
                    chain_digest: sha256(&chain_bytes),
                    world_digest: hash_of(node.world()),
                    state_replay_ok: node.state_replay_ok(),
                    links_ok: node.chain().verify_links().is_ok(),
                    alerts: node.alerts().to_vec(),
                    peer_alerts: node.peer_alerts().len(),
                    consensus_misbehavior: node.engine().misbehavior_count,
                    mempool: node.mempool().len(),
                }
            })
            .collect();
        let attacker_key = self.attacker.as_ref().map(|a| a.key.public_key());
        let schedule = self.nodes[0].genesis().gas_schedule;
        let attack = self.attacker.take().map(|att| {
            let mut attempts = 0;
            let mut successes = 0;
            for tap in &att.taps {
                attempts += 1;
                if open_message(&tap.env, &att.key, &tap.env.sender_hint).is_ok() {
                    successes += 1;
                }
            }
            let dos_expected = match att.cfg {
                AttackConfig::DosFlood { balance, .. } => balance / schedule.add_data,
                _ => 0,
            };
            AttackReport {
                kind: att.cfg.kind(),
                records: att.records,
                eavesdrop_attempts: attempts,
                eavesdrop_successes: successes,
                dos_processed: att.dos_processed,
                dos_expected,
            }
        });
        SimTrace {
            seed: self.cfg.seed,
            end_us: self.q.now(),
            events: self.events,
            requests: self.requests,
            phases: self.phase_records,
            nodes,
            messages: self.stats,
            attack,
            attacker_key,
            measured: self.measured,
        }
    }
}

fn self_writers(clients: &[Client]) -> Vec<PublicKey> {
    clients.iter().skip(2).map(|c| c.key.public_key()).collect()
}

fn peer_class(msg: &PeerMsg) -> Class {
    match msg {
        PeerMsg::Alert(_) => Class::Alert,
        _ => Class::Honest,
    }
}

fn plan_phases(cfg: &ScenarioConfig, n: usize, writers: usize) -> Vec<PhasePlan> {
    let single = |name, client, node, action| PhasePlan {
        name,
        measured: false,
        tasks: vec![Task { offset_us: 0, client, node, action }],
    };
    let deploy = single("deploy", PATIENT, 0, Action::Deploy);
    let seed_writes = |count: usize| PhasePlan {
        name: "seed_writes",
        measured: false,
        tasks: (0..count).map(|k| Task { offset_us: 0, client: PATIENT, node: k % n, action: Action::Write }).collect(),
    };
    let grant = single("grant", PATIENT, 0, Action::Grant { to: DOCTOR });
    match cfg.workload {
        Workload::Idle => Vec::new(),
        Workload::Lifecycle { writes, period_ms } => vec![
            deploy,
            PhasePlan {
                name: "writes",
                measured: false,
                tasks: (0..writes)
                    .map(|k| Task {
                        offset_us: k as u64 * period_ms * 1_000,
                        client: PATIENT,
                        node: k % n,
                        action: Action::Write,
                    })
                    .collect(),
            },
            grant,
            single("read_granted", DOCTOR, 1 % n, Action::Read),
            single("revoke", PATIENT, 0, Action::Revoke { to: DOCTOR }),
            single("read_revoked", DOCTOR, 1 % n, Action::Read),
        ],
        Workload::Write { tasks } => vec![
            deploy,
            PhasePlan {
                name: "measured",
                measured: true,
                tasks: (0..tasks)
                    .map(|k| Task { offset_us: 0, client: 2 + k % writers, node: k % n, action: Action::Write })
                    .collect(),
            },
        ],
        Workload::Read { tasks } => vec![
            deploy,
            seed_writes(10),
            grant,
            PhasePlan {
                name: "measured",
                measured: true,
                tasks: (0..tasks).map(|k| Task { offset_us: 0, client: DOCTOR, node: k % n, action: Action::Read }).collect(),
            },
        ],
        Workload::Mixed { tasks } => vec![
            deploy,
            seed_writes(10),
            grant,
            PhasePlan {
                name: "measured",
                measured: true,
                tasks: (0..tasks)
                    .map(|k| {
                        if k % 2 == 0 {
                            Task { offset_us: 0, client: DOCTOR, node: k % n, action: Action::Read }
                        } else {
                            Task { offset_us: 0, client: 2 + (k / 2) % writers, node: k % n, action: Action::Write }
                        }
                    })
                    .collect(),
            },
        ],
    }
}

/// Runs `config` with the given seed.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<SimTrace, SimError> {
    let cfg = ScenarioConfig { seed, ..config.clone() };
    Ok(Simulation::new(cfg)?.run())
}

/// Runs `config` with `attack` injected.
pub fn inject_attack(config: &ScenarioConfig, attack: AttackConfig, seed: u64) -> Result<SimTrace, SimError> {
    let cfg = ScenarioConfig { seed, attack: Some(attack), ..config.clone() };
    Ok(Simulation::new(cfg)?.run())
}
