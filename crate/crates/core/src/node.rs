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

//! Fog node runtime.
//!
//! A node terminates device channels, filters replays, keeps a mempool,
//! drives consensus, serves reads from finalized state and raises
//! monitoring alerts. It is a single-threaded state machine: the caller
//! feeds it envelopes, peer messages and ticks, then drains [`FogNode::take_outbox`]
//! and [`FogNode::take_events`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{build_block, Block, Chain, ContractAddress, Query, Transaction, Verdict};
use crate::channel::{
    open_message, seal_message_with_rng, ChannelError, ChannelMessage, KeyPair, PublicKey, ReplayReject,
    ReplayState, SecureEnvelope, DEFAULT_CLOCK_SKEW_MS,
};
use crate::codec::{put_list, put_str, put_tag, put_u64, Decode, DecodeError, Encode, Reader};
use crate::consensus::{
    verify_certificate, AuthorityConfig, ConsensusMessage, Engine, FinalizedBlock, MisbehaviorKind, ProposalPlan,
    Step,
};
use crate::genesis::GenesisConfig;
use crate::hash::{sha256, Digest};
use crate::vm::{apply_block, read_history, ContractCall, ExecError, ReadError, Reading, Receipt, WorldState};

pub const DEFAULT_MEMPOOL_CAP: usize = 10_000;
pub const DEFAULT_GAS_LIMIT: u64 = 1_000_000;
const SYNC_BATCH: u64 = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    #[default]
    Secure,
    /// No encryption or signatures; identification is taken on trust.
    /// Only for overhead comparisons.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Envelope {
    Secure(SecureEnvelope),
    Plain(ChannelMessage),
}

impl Envelope {
    pub fn seal(
        m: &ChannelMessage,
        sender: &KeyPair,
        recipient: &PublicKey,
        mode: ChannelMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ChannelError> {
        match mode {
            ChannelMode::Secure => Ok(Envelope::Secure(seal_message_with_rng(m, sender, recipient, rng)?)),
            ChannelMode::Plain => Ok(Envelope::Plain(m.clone())),
        }
    }

    pub fn open(&self, recipient: &KeyPair) -> Result<ChannelMessage, ChannelError> {
        match self {
            Envelope::Secure(e) => open_message(e, recipient, &e.sender_hint),
            Envelope::Plain(m) => Ok(m.clone()),
        }
    }

    pub fn wire_len(&self) -> usize {
        match self {
            Envelope::Secure(e) => e.len(),
            Envelope::Plain(m) => m.encode().len(),
        }
    }
}

/// Body of a device-to-node channel message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Submit(Transaction),
    Query(Query),
}

impl Encode for Request {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Request::Submit(tx) => {
                put_tag(out, 0);
                tx.encode_to(out);
            }
            Request::Query(q) => {
                put_tag(out, 1);
                q.encode_to(out);
            }
        }
    }
}

impl Decode for Request {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            0 => Ok(Request::Submit(Transaction::decode_from(r)?)),
            1 => Ok(Request::Query(Query::decode_from(r)?)),
            tag => Err(DecodeError::BadTag { ty: "Request", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseKind {
    Accepted { tx_hash: Digest },
    Rejected { reason: String },
    Readings { height: u64, readings: Vec<Reading> },
    Confirmed { tx_hash: Digest, height: u64, status: String },
}

/// Body of a node-to-device channel message. `in_reply_to` is the channel
/// nonce of the request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub in_reply_to: u64,
    pub kind: ResponseKind,
}

impl Encode for Response {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.in_reply_to);
        match &self.kind {
            ResponseKind::Accepted { tx_hash } => {
                put_tag(out, 0);
                tx_hash.encode_to(out);
            }
            ResponseKind::Rejected { reason } => {
                put_tag(out, 1);
                put_str(out, reason);
            }
            ResponseKind::Readings { height, readings } => {
                put_tag(out, 2);
                put_u64(out, *height);
                put_list(out, readings);
            }
            ResponseKind::Confirmed { tx_hash, height, status } => {
                put_tag(out, 3);
                tx_hash.encode_to(out);
                put_u64(out, *height);
                put_str(out, status);
            }
        }
    }
}

impl Decode for Response {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let in_reply_to = r.u64()?;
        let kind = match r.tag()? {
            0 => ResponseKind::Accepted { tx_hash: Digest::decode_from(r)? },
            1 => ResponseKind::Rejected { reason: r.string()? },
            2 => ResponseKind::Readings { height: r.u64()?, readings: r.list()? },
            3 => ResponseKind::Confirmed { tx_hash: Digest::decode_from(r)?, height: r.u64()?, status: r.string()? },
            tag => return Err(DecodeError::BadTag { ty: "Response", tag }),
        };
        Ok(Self { in_reply_to, kind })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Replay(#[from] ReplayReject),
    #[error("malformed request: {0}")]
    Malformed(DecodeError),
    #[error("transaction sender differs from channel identity")]
    SenderMismatch,
    #[error("transaction signature invalid")]
    BadTxSignature,
    #[error("transaction nonce {found} already used (next {expected})")]
    StaleTxNonce { expected: u64, found: u64 },
    #[error("duplicate transaction")]
    DuplicateTx,
    #[error("mempool full")]
    MempoolFull,
    #[error("queries cannot be submitted as transactions")]
    NotSubmittable,
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("unknown legacy device")]
    UnknownLegacyDevice,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ack {
    Admitted { tx_hash: Digest },
    Readings { height: u64, readings: Vec<Reading> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertKind {
    InvalidBlock,
    Equivocation,
    ReplayDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub height: u64,
    pub offender: PublicKey,
    pub detail: String,
    /// Unix ms on the raising node's clock.
    pub sim_time: u64,
}

impl Alert {
    fn key(&self) -> (AlertKind, PublicKey, u64) {
        (self.kind, self.offender, self.height)
    }
}

/// Writes alerts as CSV with columns `time,kind,offender,height`.
pub fn write_alerts_csv<W: std::io::Write>(alerts: &[Alert], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "kind", "offender", "height"])?;
    for a in alerts {
        out.write_record([
            a.sim_time.to_string(),
            format!("{:?}", a.kind),
            a.offender.to_hex(),
            a.height.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Node-to-node traffic. Consensus messages and transactions carry their
/// own signatures; blocks in sync responses carry commit certificates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerMsg {
    Consensus(ConsensusMessage),
    TxGossip(Transaction),
    SyncRequest { from_height: u64 },
    SyncResponse(Vec<FinalizedBlock>),
    FetchRequest { height: u64, hash: Digest },
    FetchResponse(Block),
    Alert(Alert),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Broadcast(PeerMsg),
    ToPeer(PublicKey, PeerMsg),
    ToClient(PublicKey, Envelope),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    Finalized { height: u64, hash: Digest, txs: Vec<Digest>, now: u64 },
    Executed { tx_hash: Digest, sender: PublicKey, height: u64, status: String, gas_used: u64 },
    Alert(Alert),
    Rejected { identification: Option<PublicKey>, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRegistration {
    pub legacy_id: String,
    pub contract: ContractAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    /// File holding the node's 32-byte key seed as hex.
    pub key_file: Option<PathBuf>,
    pub mempool_cap: usize,
    /// Overrides the genesis block interval when set.
    pub block_interval_ms: Option<u64>,
    pub channel_mode: ChannelMode,
    pub clock_skew_ms: u64,
    pub proxies: Vec<ProxyRegistration>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            key_file: None,
            mempool_cap: DEFAULT_MEMPOOL_CAP,
            block_interval_ms: None,
            channel_mode: ChannelMode::Secure,
            clock_skew_ms: DEFAULT_CLOCK_SKEW_MS,
            proxies: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("reading key file: {0}")]
    Io(#[from] std::io::Error),
    #[error("key file must hold 64 hex characters")]
    BadKey,
    #[error("node config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no key file configured")]
    NoKey,
}

pub fn load_keypair(path: &Path) -> Result<KeyPair, NodeError> {
    let text = std::fs::read_to_string(path)?;
    let seed: [u8; 32] = hex::decode(text.trim())
        .map_err(|_| NodeError::BadKey)?
        .try_into()
        .map_err(|_| NodeError::BadKey)?;
    Ok(KeyPair::from_seed(seed))
}

/// Key a node uses on behalf of a legacy device. Derived from the node key
/// and the device id, so it is stable across restarts and distinct per device.
pub fn proxy_keypair(node: &KeyPair, legacy_id: &str) -> KeyPair {
    let mut seed_input = node.private_key().to_vec();
    seed_input.extend_from_slice(b"edgelinker/proxy/");
    seed_input.extend_from_slice(legacy_id.as_bytes());
    KeyPair::from_seed(sha256(&seed_input).0)
}

#[derive(Debug)]
struct Proxy {
    key: KeyPair,
    contract: ContractAddress,
    channel_nonce: u64,
    next_tx_nonce: u64,
}

#[derive(Debug)]
pub struct FogNode {
    key: KeyPair,
    me: PublicKey,
    genesis: GenesisConfig,
    config: NodeConfig,
    chain: Chain,
    world: WorldState,
    mempool: Vec<Transaction>,
    mempool_index: HashSet<Digest>,
    replay: ReplayState,
    engine: Engine,
    alerts: Vec<Alert>,
    alert_keys: BTreeSet<(AlertKind, PublicKey, u64)>,
    peer_alerts: Vec<Alert>,
    peer_alert_keys: BTreeSet<(AlertKind, PublicKey, u64)>,
    certificates: BTreeMap<u64, Vec<ConsensusMessage>>,
    receipts: BTreeMap<Digest, (u64, Result<Receipt, ExecError>)>,
    awaiting_confirmation: BTreeMap<Digest, (PublicKey, u64)>,
    response_nonces: BTreeMap<PublicKey, u64>,
    proxies: BTreeMap<String, Proxy>,
    rng: ChaCha8Rng,
    outbox: Vec<Outbound>,
    events: Vec<NodeEvent>,
}

impl FogNode {
    pub fn new(key: KeyPair, genesis: GenesisConfig, config: NodeConfig) -> Self {
        let mut genesis = genesis;
        if let Some(interval) = config.block_interval_ms {
            genesis.block_interval_ms = interval;
        }
        let chain = genesis.chain();
        let world = genesis.world();
        let acfg = AuthorityConfig::new(genesis.authorities.clone(), genesis.block_interval_ms);
        let engine = Engine::new(acfg, key.clone(), genesis.block_interval_ms, &chain, genesis.genesis_time_ms);
        let me = key.public_key();
        let rng = ChaCha8Rng::from_seed(sha256(&key.private_key()).0);
        let mut node = Self {
            key,
            me,
            replay: ReplayState::new(config.clock_skew_ms),
            genesis,
            chain,
            world,
            mempool: Vec::new(),
            mempool_index: HashSet::new(),
            engine,
            alerts: Vec::new(),
            alert_keys: BTreeSet::new(),
            peer_alerts: Vec::new(),
            peer_alert_keys: BTreeSet::new(),
            certificates: BTreeMap::new(),
            receipts: BTreeMap::new(),
            awaiting_confirmation: BTreeMap::new(),
            response_nonces: BTreeMap::new(),
            proxies: BTreeMap::new(),
            rng,
            outbox: Vec::new(),
            events: Vec::new(),
            config: config.clone(),
        };
        for p in &config.proxies {
            node.register_legacy(&p.legacy_id, p.contract);
        }
        node
    }

    pub fn from_config(config: NodeConfig, genesis: GenesisConfig) -> Result<Self, NodeError> {
        let path = config.key_file.as_ref().ok_or(NodeError::NoKey)?;
        let key = load_keypair(path)?;
        Ok(Self::new(key, genesis, config))
    }

    pub fn public_key(&self) -> PublicKey {
        self.me
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.key
    }

    pub fn genesis(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    pub fn mempool_contains(&self, hash: &Digest) -> bool {
        self.mempool_index.contains(hash)
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn peer_alerts(&self) -> &[Alert] {
        &self.peer_alerts
    }

    pub fn certificate(&self, height: u64) -> Option<&[ConsensusMessage]> {
        self.certificates.get(&height).map(Vec::as_slice)
    }

    pub fn receipt(&self, tx_hash: &Digest) -> Option<&(u64, Result<Receipt, ExecError>)> {
        self.receipts.get(tx_hash)
    }

    pub fn channel_mode(&self) -> ChannelMode {
        self.config.channel_mode
    }

    pub fn take_outbox(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Earliest unix-ms time at which [`FogNode::tick`] has work.
    pub fn next_deadline(&self) -> u64 {
        self.engine.next_deadline(&self.chain)
    }

    /// Registers a legacy device and returns the key used on its behalf.
    pub fn register_legacy(&mut self, legacy_id: &str, contract: ContractAddress) -> PublicKey {
        let key = proxy_keypair(&self.key, legacy_id);
        let pk = key.public_key();
        self.proxies
            .insert(legacy_id.to_string(), Proxy { key, contract, channel_nonce: 0, next_tx_nonce: 0 });
        pk
    }

    /// Opens, replay-checks and dispatches a device envelope. Successful
    /// and application-level failures are answered over the channel;
    /// authentication and replay failures are not.
    pub fn handle_envelope(&mut self, env: &Envelope, now: u64) -> Result<Ack, Rejection> {
        self.handle_envelope_inner(env, now, true)
    }

    fn handle_envelope_inner(&mut self, env: &Envelope, now: u64, reply: bool) -> Result<Ack, Rejection> {
        let m = match env.open(&self.key) {
            Ok(m) => m,
            Err(e) => {
                self.events.push(NodeEvent::Rejected { identification: None, reason: e.to_string() });
                return Err(e.into());
            }
        };
        if let Err(e) = self.replay.check_and_record(&m, now) {
            if let ReplayReject::NonceReplayed { nonce, .. } = e {
                let height = self.chain.height();
                self.raise_alert(
                    AlertKind::ReplayDetected,
                    m.identification,
                    height,
                    format!("nonce {nonce} replayed"),
                    now,
                );
            }
            self.events.push(NodeEvent::Rejected { identification: Some(m.identification), reason: e.to_string() });
            return Err(e.into());
        }

        let result = match Request::decode(&m.body) {
            Err(e) => Err(Rejection::Malformed(e)),
            Ok(Request::Submit(tx)) => {
                if tx.sender != m.identification {
                    Err(Rejection::SenderMismatch)
                } else {
                    self.admit_tx(tx, true).map(|tx_hash| {
                        if reply {
                            self.awaiting_confirmation.insert(tx_hash, (m.identification, m.nonce));
                        }
                        Ack::Admitted { tx_hash }
                    })
                }
            }
            Ok(Request::Query(q)) => self
                .serve_query(&q, &m.identification)
                .map(|(height, readings)| Ack::Readings { height, readings })
                .map_err(Rejection::from),
        };
        if let Err(e) = &result {
            self.events.push(NodeEvent::Rejected { identification: Some(m.identification), reason: e.to_string() });
        }
        if reply {
            let kind = match &result {
                Ok(Ack::Admitted { tx_hash }) => ResponseKind::Accepted { tx_hash: *tx_hash },
                Ok(Ack::Readings { height, readings }) => {
                    ResponseKind::Readings { height: *height, readings: readings.clone() }
                }
                Err(e) => ResponseKind::Rejected { reason: e.to_string() },
            };
            self.respond(m.identification, m.nonce, kind, now);
        }
        result
    }

    fn respond(&mut self, client: PublicKey, in_reply_to: u64, kind: ResponseKind, now: u64) {
        let nonce = self.response_nonces.entry(client).or_insert(0);
        *nonce += 1;
        let m = ChannelMessage {
            timestamp: now,
            nonce: *nonce,
            identification: self.me,
            body: Response { in_reply_to, kind }.encode(),
        };
        match Envelope::seal(&m, &self.key, &client, self.config.channel_mode, &mut self.rng) {
            Ok(env) => self.outbox.push(Outbound::ToClient(client, env)),
            Err(e) => self.events.push(NodeEvent::Rejected { identification: Some(client), reason: e.to_string() }),
        }
    }

    fn admit_tx(&mut self, tx: Transaction, gossip: bool) -> Result<Digest, Rejection> {
        if tx.is_query() {
            return Err(Rejection::NotSubmittable);
        }
        if !tx.verify_signature() {
            return Err(Rejection::BadTxSignature);
        }
        let expected = self.world.account(&tx.sender).next_nonce;
        if tx.nonce < expected {
            return Err(Rejection::StaleTxNonce { expected, found: tx.nonce });
        }
        let hash = tx.hash();
        if self.chain.contains_tx(&hash) || self.mempool_index.contains(&hash) {
            return Err(Rejection::DuplicateTx);
        }
        if self.mempool.len() >= self.config.mempool_cap {
            return Err(Rejection::MempoolFull);
        }
        self.mempool_index.insert(hash);
        if gossip {
            self.outbox.push(Outbound::Broadcast(PeerMsg::TxGossip(tx.clone())));
        }
        self.mempool.push(tx);
        Ok(hash)
    }

    /// Reads from the latest finalized state.
    pub fn serve_query(&self, q: &Query, caller: &PublicKey) -> Result<(u64, Vec<Reading>), ReadError> {
        let readings = read_history(&self.world, &q.contract, caller, q.from_ts, q.to_ts)?;
        Ok((self.chain.height(), readings))
    }

    /// Raises an InvalidBlock alert against the proposer of `b` when the
    /// verdict is invalid. Returns the alert only if it is new.
    pub fn monitor_block(&mut self, b: &Block, verdict: &Verdict, now: u64) -> Option<Alert> {
        let Verdict::Invalid(violations) = verdict else {
            return None;
        };
        let detail = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        self.raise_alert(AlertKind::InvalidBlock, b.header.proposer, b.header.height, detail, now)
    }

    fn raise_alert(
        &mut self,
        kind: AlertKind,
        offender: PublicKey,
        height: u64,
        detail: String,
        now: u64,
    ) -> Option<Alert> {
        let alert = Alert { kind, height, offender, detail, sim_time: now };
        if !self.alert_keys.insert(alert.key()) {
            return None;
        }
        self.alerts.push(alert.clone());
        self.events.push(NodeEvent::Alert(alert.clone()));
        self.outbox.push(Outbound::Broadcast(PeerMsg::Alert(alert.clone())));
        Some(alert)
    }

    /// Wraps a legacy device payload (an encoded [`Reading`]) as an
    /// `add_reading` transaction signed with the device's proxy key and
    /// injects it through the normal channel path.
    pub fn proxy_submit(&mut self, legacy_payload: &[u8], legacy_id: &str, now: u64) -> Result<Ack, Rejection> {
        let reading = Reading::decode(legacy_payload).map_err(Rejection::Malformed)?;
        let proxy = self.proxies.get_mut(legacy_id).ok_or(Rejection::UnknownLegacyDevice)?;
        let pk = proxy.key.public_key();
        let tx_nonce = proxy.next_tx_nonce.max(self.world.account(&pk).next_nonce);
        let payload = ContractCall::AddReading(reading).into_payload(proxy.contract);
        let tx = Transaction::new_signed(&proxy.key, tx_nonce, now, payload, DEFAULT_GAS_LIMIT);
        proxy.channel_nonce += 1;
        let m = ChannelMessage {
            timestamp: now,
            nonce: proxy.channel_nonce,
            identification: pk,
            body: Request::Submit(tx).encode(),
        };
        let key = proxy.key.clone();
        let env = Envelope::seal(&m, &key, &self.me, self.config.channel_mode, &mut self.rng)?;
        let result = self.handle_envelope_inner(&env, now, false);
        if result.is_ok() {
            if let Some(p) = self.proxies.get_mut(legacy_id) {
                p.next_tx_nonce = tx_nonce + 1;
            }
        }
        result
    }

    pub fn handle_peer(&mut self, from: PublicKey, msg: PeerMsg, now: u64) {
        match msg {
            PeerMsg::Consensus(m) => {
                let step = self.engine.on_message(m, &self.chain, now);
                self.absorb(step, now);
                self.try_propose(now);
            }
            PeerMsg::TxGossip(tx) => {
                let _ = self.admit_tx(tx, false);
            }
            PeerMsg::SyncRequest { from_height } => {
                let last = self.chain.height().min(from_height.saturating_add(SYNC_BATCH - 1));
                let batch: Vec<FinalizedBlock> = (from_height.max(1)..=last)
                    .filter_map(|h| {
                        Some(FinalizedBlock {
                            block: self.chain.block(h)?.clone(),
                            certificate: self.certificates.get(&h)?.clone(),
                        })
                    })
                    .collect();
                if !batch.is_empty() {
                    self.outbox.push(Outbound::ToPeer(from, PeerMsg::SyncResponse(batch)));
                }
            }
            PeerMsg::SyncResponse(batch) => {
                for fb in batch {
                    if fb.block.header.height == self.chain.height() + 1
                        && verify_certificate(self.engine.config(), &fb.block, &fb.certificate)
                    {
                        self.apply_finalized(fb, now);
                    }
                }
            }
            PeerMsg::FetchRequest { height, hash } => {
                let block = self
                    .engine
                    .known_block(&hash)
                    .or_else(|| self.chain.block(height).filter(|b| b.hash() == hash))
                    .cloned();
                if let Some(b) = block {
                    self.outbox.push(Outbound::ToPeer(from, PeerMsg::FetchResponse(b)));
                }
            }
            PeerMsg::FetchResponse(block) => {
                if block.header.height == self.chain.height() + 1 {
                    let step = self.engine.supply_block(block, &self.chain);
                    self.absorb(step, now);
                }
            }
            PeerMsg::Alert(a) => {
                if self.peer_alert_keys.insert(a.key()) {
                    self.peer_alerts.push(a);
                }
            }
        }
    }

    /// Proposer duty and consensus timers.
    pub fn tick(&mut self, now: u64) {
        self.try_propose(now);
        let step = self.engine.poll(&self.chain, now);
        self.absorb(step, now);
        self.try_propose(now);
    }

    fn try_propose(&mut self, now: u64) {
        let Some(plan) = self.engine.proposal_due(&self.chain, now) else { return };
        let block = match plan {
            ProposalPlan::Repropose(b) => Some(b),
            ProposalPlan::Fresh => build_block(
                &self.select_txs(),
                self.chain.tip(),
                &self.key,
                &self.chain.authority_set,
                now,
                self.genesis.max_txs,
            )
            .ok(),
        };
        if let Some(b) = block {
            let step = self.engine.propose(b, &self.chain, now);
            self.absorb(step, now);
        }
    }

    /// Mempool transactions whose nonces continue each sender's account
    /// nonce without gaps, in arrival order.
    pub fn select_txs(&self) -> Vec<Transaction> {
        let mut by_sender: BTreeMap<PublicKey, BTreeMap<u64, &Transaction>> = BTreeMap::new();
        for tx in &self.mempool {
            by_sender.entry(tx.sender).or_default().entry(tx.nonce).or_insert(tx);
        }
        let mut picked = Vec::new();
        for (sender, txs) in by_sender {
            let mut expected = self.world.account(&sender).next_nonce;
            while let Some(tx) = txs.get(&expected) {
                picked.push((*tx).clone());
                expected += 1;
            }
        }
        picked
    }

    fn absorb(&mut self, step: Step, now: u64) {
        for m in step.outbound {
            self.outbox.push(Outbound::Broadcast(PeerMsg::Consensus(m)));
        }
        for mb in step.misbehavior {
            let kind = match mb.kind {
                MisbehaviorKind::InvalidBlock => AlertKind::InvalidBlock,
                MisbehaviorKind::Equivocation => AlertKind::Equivocation,
            };
            self.raise_alert(kind, mb.offender, mb.height, mb.detail, now);
        }
        if let Some(fetch) = step.fetch {
            for p in fetch.peers.into_iter().filter(|p| *p != self.me) {
                self.outbox
                    .push(Outbound::ToPeer(p, PeerMsg::FetchRequest { height: fetch.height, hash: fetch.hash }));
            }
        }
        if let Some((height, peer)) = step.sync {
            self.outbox.push(Outbound::ToPeer(peer, PeerMsg::SyncRequest { from_height: height }));
        }
        if let Some(fb) = step.finalized {
            self.apply_finalized(fb, now);
        }
    }

    fn apply_finalized(&mut self, fb: FinalizedBlock, now: u64) {
        let FinalizedBlock { block, certificate } = fb;
        let height = block.header.height;
        if height != self.chain.height() + 1 {
            return;
        }
        let verdict = self.chain.validate_next(&block);
        if !verdict.is_valid() {
            self.monitor_block(&block, &verdict, now);
            return;
        }
        let outcomes = apply_block(&mut self.world, &block, &self.genesis.gas_schedule);
        let hash = block.hash();
        let txs: Vec<Digest> = block.transactions.iter().map(Transaction::hash).collect();
        self.chain.append_block(block).expect("validated above");
        self.certificates.insert(height, certificate);

        let included: HashSet<Digest> = txs.iter().copied().collect();
        let world = &self.world;
        let index = &mut self.mempool_index;
        self.mempool.retain(|tx| {
            let h = tx.hash();
            let keep = !included.contains(&h) && tx.nonce >= world.account(&tx.sender).next_nonce;
            if !keep {
                index.remove(&h);
            }
            keep
        });

        self.events.push(NodeEvent::Finalized { height, hash, txs, now });
        for o in outcomes {
            let (status, gas_used) = match &o.result {
                Ok(r) => (r.status.to_string(), r.gas_used),
                Err(e) => (format!("skipped: {e}"), 0),
            };
            self.events.push(NodeEvent::Executed {
                tx_hash: o.tx_hash,
                sender: o.sender,
                height,
                status: status.clone(),
                gas_used,
            });
            if let Some((client, in_reply_to)) = self.awaiting_confirmation.remove(&o.tx_hash) {
                self.respond(client, in_reply_to, ResponseKind::Confirmed { tx_hash: o.tx_hash, height, status }, now);
            }
            self.receipts.insert(o.tx_hash, (height, o.result));
        }
        let step = self.engine.advance(&self.chain, now);
        self.absorb(step, now);
    }

    /// Re-executes the finalized chain from genesis.
    pub fn replay_world(&self) -> WorldState {
        let mut ws = self.genesis.world();
        for b in self.chain.blocks().iter().skip(1) {
            apply_block(&mut ws, b, &self.genesis.gas_schedule);
        }
        ws
    }

    /// Whether the live state matches a from-genesis replay byte for byte.
    pub fn state_replay_ok(&self) -> bool {
        self.replay_world().encode() == self.world.encode()
    }

    /// Submits a transaction without going through a device channel, as
    /// if it had arrived by gossip. Test and tooling hook.
    pub fn inject_tx(&mut self, tx: Transaction) -> Result<Digest, Rejection> {
        self.admit_tx(tx, false)
    }
}
