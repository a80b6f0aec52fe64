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

//! Proof-of-authority finality in the IBFT style.
//!
//! Each height runs numbered rounds. The proposer for `(height, round)` is
//! `authorities[(height + round) mod n]`. A round moves through
//! PRE_PREPARE (the proposal), PREPARE (votes that the proposal is valid)
//! and COMMIT (votes after seeing a prepare quorum). A commit quorum
//! finalizes the block. When the round timer expires nodes broadcast
//! ROUND_CHANGE carrying the hash of the block they are locked on, and the
//! next proposer takes over once it holds a quorum of those.
//!
//! Locking: a node that sees a prepare quorum for a block in round `r` locks
//! on it and, in later rounds, only prepares that block unless it sees a
//! prepare quorum for another block in a round above its lock round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::chain::{Block, Chain, Verdict};
use crate::channel::{verify, KeyPair, PublicKey, Signature};
use crate::codec::{put_option, put_tag, put_u64, Decode, DecodeError, Encode, Reader};
use crate::hash::Digest;

const MAX_BUFFERED: usize = 4_096;
const MAX_BACKOFF_EXP: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    PrePrepare,
    Prepare,
    Commit,
    RoundChange,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::PrePrepare => 0,
            Phase::Prepare => 1,
            Phase::Commit => 2,
            Phase::RoundChange => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusMessage {
    pub phase: Phase,
    pub height: u64,
    pub round: u32,
    /// Proposal hash; for ROUND_CHANGE, the sender's locked hash or zero.
    pub block_hash: Digest,
    /// Only present on PRE_PREPARE.
    pub block: Option<Block>,
    pub sender: PublicKey,
    pub signature: Signature,
}

impl ConsensusMessage {
    pub fn new_signed(
        key: &KeyPair,
        phase: Phase,
        height: u64,
        round: u32,
        block_hash: Digest,
        block: Option<Block>,
    ) -> Self {
        let mut m = Self {
            phase,
            height,
            round,
            block_hash,
            block,
            sender: key.public_key(),
            signature: Signature::ZERO,
        };
        m.signature = key.sign(&m.signing_bytes());
        m
    }

    fn encode_unsigned(&self, out: &mut Vec<u8>) {
        put_tag(out, self.phase.tag());
        put_u64(out, self.height);
        put_u64(out, u64::from(self.round));
        self.block_hash.encode_to(out);
        put_option(out, self.block.as_ref());
        self.sender.encode_to(out);
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_unsigned(&mut out);
        out
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.sender, &self.signing_bytes(), &self.signature)
    }
}

impl Encode for ConsensusMessage {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.encode_unsigned(out);
        self.signature.encode_to(out);
    }
}

impl Decode for ConsensusMessage {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let phase = match r.tag()? {
            0 => Phase::PrePrepare,
            1 => Phase::Prepare,
            2 => Phase::Commit,
            3 => Phase::RoundChange,
            tag => return Err(DecodeError::BadTag { ty: "Phase", tag }),
        };
        Ok(Self {
            phase,
            height: r.u64()?,
            round: r.u32()?,
            block_hash: Digest::decode_from(r)?,
            block: r.option()?,
            sender: PublicKey::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorityConfig {
    pub authorities: Vec<PublicKey>,
    pub round_timeout_base_ms: u64,
}

impl AuthorityConfig {
    /// Round timeout base is twice the block interval.
    pub fn new(authorities: Vec<PublicKey>, block_interval_ms: u64) -> Self {
        assert!(!authorities.is_empty(), "authority set must not be empty");
        Self { authorities, round_timeout_base_ms: 2 * block_interval_ms }
    }

    pub fn n(&self) -> usize {
        self.authorities.len()
    }

    /// Tolerated Byzantine authorities, `floor((n - 1) / 3)`.
    pub fn f(&self) -> usize {
        (self.n() - 1) / 3
    }

    /// `ceil(2n / 3)`. Equals `2f + 1` whenever `n = 3f + 1`, and keeps any
    /// two quorums overlapping in at least `f + 1` members for other `n`.
    pub fn quorum(&self) -> usize {
        (2 * self.n()).div_ceil(3)
    }

    pub fn is_authority(&self, pk: &PublicKey) -> bool {
        self.authorities.contains(pk)
    }

    pub fn round_timeout_ms(&self, round: u32) -> u64 {
        self.round_timeout_base_ms << round.min(MAX_BACKOFF_EXP)
    }
}

pub fn select_proposer(height: u64, round: u32, cfg: &AuthorityConfig) -> PublicKey {
    let n = cfg.n() as u64;
    cfg.authorities[((height % n + u64::from(round) % n) % n) as usize]
}

/// A block together with the commit quorum that finalized it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalizedBlock {
    pub block: Block,
    pub certificate: Vec<ConsensusMessage>,
}

impl Encode for FinalizedBlock {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.block.encode_to(out);
        crate::codec::put_list(out, &self.certificate);
    }
}

impl Decode for FinalizedBlock {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { block: Block::decode_from(r)?, certificate: r.list()? })
    }
}

/// True when `cert` holds valid COMMITs for `block` from a quorum of
/// distinct authorities in a single round.
pub fn verify_certificate(cfg: &AuthorityConfig, block: &Block, cert: &[ConsensusMessage]) -> bool {
    let hash = block.hash();
    let Some(round) = cert.first().map(|m| m.round) else {
        return false;
    };
    let mut signers = BTreeSet::new();
    for m in cert {
        if m.phase != Phase::Commit
            || m.height != block.header.height
            || m.round != round
            || m.block_hash != hash
            || !cfg.is_authority(&m.sender)
            || !m.verify_signature()
        {
            return false;
        }
        signers.insert(m.sender);
    }
    signers.len() >= cfg.quorum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisbehaviorKind {
    InvalidBlock,
    Equivocation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Misbehavior {
    pub kind: MisbehaviorKind,
    pub offender: PublicKey,
    pub height: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFetch {
    pub height: u64,
    pub hash: Digest,
    pub peers: Vec<PublicKey>,
}

#[derive(Debug, Default)]
pub struct Step {
    /// Messages to broadcast to every other authority.
    pub outbound: Vec<ConsensusMessage>,
    pub finalized: Option<FinalizedBlock>,
    pub misbehavior: Vec<Misbehavior>,
    /// A commit quorum exists for a block whose body we never received.
    pub fetch: Option<BlockFetch>,
    /// Peers are ahead of us; ask this one for the block at `height`.
    pub sync: Option<(u64, PublicKey)>,
}

impl Step {
    pub fn merge(&mut self, other: Step) {
        self.outbound.extend(other.outbound);
        self.misbehavior.extend(other.misbehavior);
        if other.finalized.is_some() {
            self.finalized = other.finalized;
        }
        if other.fetch.is_some() {
            self.fetch = other.fetch;
        }
        if other.sync.is_some() {
            self.sync = other.sync;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundPhase {
    AwaitingProposal,
    Prepared,
    Committed,
    Finalized,
}

#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub height: u64,
    pub round: u32,
    pub phase: RoundPhase,
    pub locked: Option<(u32, Block)>,
    pub prepare_votes: BTreeMap<(u32, Digest), BTreeSet<PublicKey>>,
    pub commit_votes: BTreeMap<(u32, Digest), BTreeMap<PublicKey, ConsensusMessage>>,
    pub round_changes: BTreeMap<u32, BTreeMap<PublicKey, Digest>>,
    pub round_timer_deadline: u64,
    /// Blocks seen at this height that passed validation, by hash.
    proposals: BTreeMap<Digest, Block>,
    accepted_proposal: BTreeMap<u32, Digest>,
    vote_seen: BTreeMap<(Phase, u32, PublicKey), Digest>,
    proposed_rounds: BTreeSet<u32>,
    height_started_at: u64,
    ahead_since: Option<(u64, PublicKey)>,
    fetch_requested_at: Option<u64>,
}

impl ConsensusState {
    fn fresh(height: u64, now: u64, cfg: &AuthorityConfig) -> Self {
        Self {
            height,
            round: 0,
            phase: RoundPhase::AwaitingProposal,
            locked: None,
            prepare_votes: BTreeMap::new(),
            commit_votes: BTreeMap::new(),
            round_changes: BTreeMap::new(),
            round_timer_deadline: now + cfg.round_timeout_ms(0),
            proposals: BTreeMap::new(),
            accepted_proposal: BTreeMap::new(),
            vote_seen: BTreeMap::new(),
            proposed_rounds: BTreeSet::new(),
            height_started_at: now,
            ahead_since: None,
            fetch_requested_at: None,
        }
    }

    pub fn locked_hash(&self) -> Option<Digest> {
        self.locked.as_ref().map(|(_, b)| b.hash())
    }
}

/// What the proposer should put in its PRE_PREPARE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposalPlan {
    Fresh,
    Repropose(Block),
}

/// Single-node consensus state machine. Inputs arrive one at a time; the
/// node owning it applies finalized blocks and then calls [`Engine::advance`].
#[derive(Debug)]
pub struct Engine {
    cfg: AuthorityConfig,
    key: KeyPair,
    block_interval_ms: u64,
    pub state: ConsensusState,
    buffer: VecDeque<ConsensusMessage>,
    pub misbehavior_count: u64,
    pub dropped_count: u64,
}

impl Engine {
    pub fn new(cfg: AuthorityConfig, key: KeyPair, block_interval_ms: u64, chain: &Chain, now: u64) -> Self {
        let state = ConsensusState::fresh(chain.height() + 1, now, &cfg);
        Self {
            cfg,
            key,
            block_interval_ms,
            state,
            buffer: VecDeque::new(),
            misbehavior_count: 0,
            dropped_count: 0,
        }
    }

    pub fn config(&self) -> &AuthorityConfig {
        &self.cfg
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn is_authority(&self) -> bool {
        self.cfg.is_authority(&self.key.public_key())
    }

    /// Entry point for messages from the network.
    pub fn on_message(&mut self, msg: ConsensusMessage, chain: &Chain, now: u64) -> Step {
        let mut step = Step::default();
        if !msg.verify_signature() {
            self.dropped_count += 1;
            return step;
        }
        if !self.cfg.is_authority(&msg.sender) {
            self.dropped_count += 1;
            if let (Phase::PrePrepare, Some(block)) = (msg.phase, &msg.block) {
                let mut detail = String::from("block from non-authority");
                for v in chain.validate_next(block).violations() {
                    detail.push_str("; ");
                    detail.push_str(&v.to_string());
                }
                self.flag(&mut step, MisbehaviorKind::InvalidBlock, msg.sender, msg.height, detail);
            }
            return step;
        }
        self.process(msg, chain, now, &mut step);
        step
    }

    fn flag(&mut self, step: &mut Step, kind: MisbehaviorKind, offender: PublicKey, height: u64, detail: String) {
        self.misbehavior_count += 1;
        step.misbehavior.push(Misbehavior { kind, offender, height, detail });
    }

    fn emit(
        &mut self,
        phase: Phase,
        round: u32,
        hash: Digest,
        block: Option<Block>,
        chain: &Chain,
        now: u64,
        step: &mut Step,
    ) {
        let msg = ConsensusMessage::new_signed(&self.key, phase, self.state.height, round, hash, block);
        step.outbound.push(msg.clone());
        self.process(msg, chain, now, step);
    }

    fn buffer(&mut self, msg: ConsensusMessage) {
        if self.buffer.len() >= MAX_BUFFERED {
            self.buffer.pop_front();
            self.dropped_count += 1;
        }
        self.buffer.push_back(msg);
    }

    fn process(&mut self, msg: ConsensusMessage, chain: &Chain, now: u64, step: &mut Step) {
        let st = &mut self.state;
        if msg.height < st.height || st.phase == RoundPhase::Finalized && msg.height == st.height {
            return;
        }
        if msg.height > st.height {
            if st.ahead_since.is_none() {
                st.ahead_since = Some((now, msg.sender));
            }
            self.buffer(msg);
            return;
        }
        match msg.phase {
            Phase::RoundChange => self.on_round_change(msg, chain, now, step),
            Phase::PrePrepare => {
                if msg.round > self.state.round {
                    self.buffer(msg);
                } else if msg.round == self.state.round {
                    self.on_pre_prepare(msg, chain, now, step);
                }
            }
            Phase::Prepare => {
                if msg.round > self.state.round {
                    self.buffer(msg);
                } else if msg.round == self.state.round {
                    self.on_vote(msg, chain, now, step);
                }
            }
            // Commits from earlier rounds of this height still count
            // toward finality.
            Phase::Commit => {
                if msg.round > self.state.round {
                    self.buffer(msg);
                } else {
                    self.on_vote(msg, chain, now, step);
                }
            }
        }
    }

    fn on_round_change(&mut self, msg: ConsensusMessage, chain: &Chain, now: u64, step: &mut Step) {
        let r = msg.round;
        if r < self.state.round {
            return;
        }
        self.state.round_changes.entry(r).or_default().insert(msg.sender, msg.block_hash);
        if r > self.state.round {
            let votes = self.state.round_changes[&r].len();
            if votes > self.cfg.f() {
                self.enter_round(r, chain, now, step);
            }
        }
    }

    fn on_pre_prepare(&mut self, msg: ConsensusMessage, chain: &Chain, now: u64, step: &mut Step) {
        let (h, r) = (msg.height, msg.round);
        if msg.sender != select_proposer(h, r, &self.cfg) {
            self.dropped_count += 1;
            return;
        }
        let Some(block) = msg.block else {
            self.flag(step, MisbehaviorKind::InvalidBlock, msg.sender, h, "pre-prepare without block".into());
            return;
        };
        let hash = block.hash();
        if hash != msg.block_hash || block.header.height != h {
            self.flag(step, MisbehaviorKind::InvalidBlock, msg.sender, h, "proposal hash/height mismatch".into());
            return;
        }
        if let Some(prev) = self.state.accepted_proposal.get(&r) {
            if *prev != hash {
                self.flag(step, MisbehaviorKind::Equivocation, msg.sender, h, format!("second proposal in round {r}"));
            }
            return;
        }
        if let Verdict::Invalid(violations) = chain.validate_next(&block) {
            let detail = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            self.flag(step, MisbehaviorKind::InvalidBlock, msg.sender, h, detail);
            return;
        }
        self.state.proposals.insert(hash, block);
        self.state.accepted_proposal.insert(r, hash);

        let lock_ok = self.state.locked_hash().is_none_or(|l| l == hash);
        let me = self.key.public_key();
        if lock_ok && self.cfg.is_authority(&me) && !self.state.vote_seen.contains_key(&(Phase::Prepare, r, me)) {
            self.state.phase = RoundPhase::Prepared;
            self.emit(Phase::Prepare, r, hash, None, chain, now, step);
        }
        self.check_prepare_quorum(r, hash, chain, now, step);
        self.check_commit_quorum(r, hash, step);
    }

    fn on_vote(&mut self, msg: ConsensusMessage, chain: &Chain, now: u64, step: &mut Step) {
        let key = (msg.phase, msg.round, msg.sender);
        if let Some(prev) = self.state.vote_seen.get(&key) {
            if *prev != msg.block_hash {
                self.flag(
                    step,
                    MisbehaviorKind::Equivocation,
                    msg.sender,
                    msg.height,
                    format!("conflicting {:?} votes in round {}", msg.phase, msg.round),
                );
            } else {
                self.dropped_count += 1;
            }
            return;
        }
        self.state.vote_seen.insert(key, msg.block_hash);
        let (r, hash) = (msg.round, msg.block_hash);
        match msg.phase {
            Phase::Prepare => {
                self.state.prepare_votes.entry((r, hash)).or_default().insert(msg.sender);
                self.check_prepare_quorum(r, hash, chain, now, step);
            }
            Phase::Commit => {
                self.state.commit_votes.entry((r, hash)).or_default().insert(msg.sender, msg);
                self.check_commit_quorum(r, hash, step);
            }
            _ => unreachable!("only votes reach on_vote"),
        }
    }

    fn check_prepare_quorum(&mut self, r: u32, hash: Digest, chain: &Chain, now: u64, step: &mut Step) {
        let votes = self.state.prepare_votes.get(&(r, hash)).map_or(0, |s| s.len());
        if votes < self.cfg.quorum() {
            return;
        }
        let Some(block) = self.state.proposals.get(&hash).cloned() else {
            return;
        };
        let relock = match &self.state.locked {
            None => true,
            Some((lr, b)) => *lr < r || (*lr == r && b.hash() == hash),
        };
        if !relock {
            return;
        }
        self.state.locked = Some((r, block));
        let me = self.key.public_key();
        if r == self.state.round
            && self.cfg.is_authority(&me)
            && !self.state.vote_seen.contains_key(&(Phase::Commit, r, me))
        {
            self.state.phase = RoundPhase::Committed;
            self.emit(Phase::Commit, r, hash, None, chain, now, step);
        }
    }

    fn check_commit_quorum(&mut self, r: u32, hash: Digest, step: &mut Step) {
        if self.state.phase == RoundPhase::Finalized {
            return;
        }
        let Some(votes) = self.state.commit_votes.get(&(r, hash)) else {
            return;
        };
        if votes.len() < self.cfg.quorum() {
            return;
        }
        match self.state.proposals.get(&hash) {
            Some(block) => {
                step.finalized = Some(FinalizedBlock {
                    block: block.clone(),
                    certificate: votes.values().cloned().collect(),
                });
                self.state.phase = RoundPhase::Finalized;
                step.fetch = None;
            }
            None => {
                step.fetch = Some(BlockFetch {
                    height: self.state.height,
                    hash,
                    peers: votes.keys().copied().collect(),
                });
            }
        }
    }

    fn enter_round(&mut self, r: u32, chain: &Chain, now: u64, step: &mut Step) {
        self.state.round = r;
        self.state.round_timer_deadline = now + self.cfg.round_timeout_ms(r);
        if self.state.phase != RoundPhase::Finalized {
            self.state.phase = RoundPhase::AwaitingProposal;
        }
        let me = self.key.public_key();
        let already_sent = self.state.round_changes.get(&r).is_some_and(|m| m.contains_key(&me));
        if self.cfg.is_authority(&me) && !already_sent {
            let locked = self.state.locked_hash().unwrap_or(Digest::ZERO);
            self.emit(Phase::RoundChange, r, locked, None, chain, now, step);
        }
        self.replay_buffer(chain, now, step);
    }

    fn replay_buffer(&mut self, chain: &Chain, now: u64, step: &mut Step) {
        let (h, r) = (self.state.height, self.state.round);
        let (ready, keep): (VecDeque<_>, VecDeque<_>) = std::mem::take(&mut self.buffer)
            .into_iter()
            .partition(|m| m.height < h || (m.height == h && m.round <= r));
        self.buffer = keep;
        for m in ready {
            self.process(m, chain, now, step);
        }
    }

    /// Timer-driven work: round timeouts, lagging detection and fetch retries.
    pub fn poll(&mut self, chain: &Chain, now: u64) -> Step {
        let mut step = Step::default();
        if self.state.phase == RoundPhase::Finalized {
            return step;
        }
        if now >= self.state.round_timer_deadline {
            step.merge(self.on_timeout(chain, now));
        }
        let patience = self.cfg.round_timeout_base_ms / 2;
        if let Some((since, peer)) = self.state.ahead_since {
            if now >= since + patience {
                step.sync = Some((self.state.height, peer));
                self.state.ahead_since = Some((now, peer));
            }
        }
        if let Some(at) = self.state.fetch_requested_at {
            if now >= at + patience {
                self.state.fetch_requested_at = None;
                let pending: Vec<_> = self.state.commit_votes.keys().copied().collect();
                for (r, hash) in pending {
                    self.check_commit_quorum(r, hash, &mut step);
                }
            }
        }
        if step.fetch.is_some() {
            self.state.fetch_requested_at = Some(now);
        }
        step
    }

    /// Moves to the next round and broadcasts ROUND_CHANGE.
    pub fn on_timeout(&mut self, chain: &Chain, now: u64) -> Step {
        let mut step = Step::default();
        if self.state.phase == RoundPhase::Finalized {
            return step;
        }
        let next = self.state.round + 1;
        self.enter_round(next, chain, now, &mut step);
        step
    }

    /// Whether this node should propose now, and what.
    pub fn proposal_due(&self, chain: &Chain, now: u64) -> Option<ProposalPlan> {
        let st = &self.state;
        let me = self.key.public_key();
        if st.phase == RoundPhase::Finalized
            || st.proposed_rounds.contains(&st.round)
            || select_proposer(st.height, st.round, &self.cfg) != me
            || chain.height() + 1 != st.height
        {
            return None;
        }
        if st.round == 0 {
            if now < chain.tip().header.timestamp + self.block_interval_ms {
                return None;
            }
            return Some(ProposalPlan::Fresh);
        }
        let changes = st.round_changes.get(&st.round)?;
        if changes.len() < self.cfg.quorum() {
            return None;
        }
        if let Some((_, b)) = &st.locked {
            return Some(ProposalPlan::Repropose(b.clone()));
        }
        let mut hinted: Vec<&Digest> = changes.values().filter(|h| **h != Digest::ZERO).collect();
        hinted.sort();
        for h in hinted {
            if let Some(b) = st.proposals.get(h) {
                return Some(ProposalPlan::Repropose(b.clone()));
            }
        }
        Some(ProposalPlan::Fresh)
    }

    /// Broadcasts `block` as this round's proposal.
    pub fn propose(&mut self, block: Block, chain: &Chain, now: u64) -> Step {
        let mut step = Step::default();
        let r = self.state.round;
        self.state.proposed_rounds.insert(r);
        let hash = block.hash();
        self.emit(Phase::PrePrepare, r, hash, Some(block), chain, now, &mut step);
        step
    }

    /// Supplies a block body requested through [`Step::fetch`].
    pub fn supply_block(&mut self, block: Block, chain: &Chain) -> Step {
        let mut step = Step::default();
        if block.header.height != self.state.height || !chain.validate_next(&block).is_valid() {
            return step;
        }
        let hash = block.hash();
        self.state.proposals.entry(hash).or_insert(block);
        let rounds: Vec<u32> = self
            .state
            .commit_votes
            .keys()
            .filter(|(_, h)| *h == hash)
            .map(|(r, _)| *r)
            .collect();
        for r in rounds {
            self.check_commit_quorum(r, hash, &mut step);
        }
        step
    }

    /// Call after the chain tip moved; starts the next height and replays
    /// buffered messages for it.
    pub fn advance(&mut self, chain: &Chain, now: u64) -> Step {
        let mut step = Step::default();
        let next = chain.height() + 1;
        if next <= self.state.height && self.state.phase != RoundPhase::Finalized {
            return step;
        }
        self.state = ConsensusState::fresh(next, now, &self.cfg);
        self.replay_buffer(chain, now, &mut step);
        step
    }

    /// Earliest time at which [`Engine::poll`] or a proposal has work to do.
    pub fn next_deadline(&self, chain: &Chain) -> u64 {
        let st = &self.state;
        let mut t = st.round_timer_deadline;
        if st.round == 0
            && !st.proposed_rounds.contains(&0)
            && select_proposer(st.height, 0, &self.cfg) == self.key.public_key()
        {
            t = t.min(chain.tip().header.timestamp + self.block_interval_ms);
        }
        let patience = self.cfg.round_timeout_base_ms / 2;
        if let Some((since, _)) = st.ahead_since {
            t = t.min(since + patience);
        }
        if let Some(at) = st.fetch_requested_at {
            t = t.min(at + patience);
        }
        t
    }

    /// A validated proposal body for the current height, if seen.
    pub fn known_block(&self, hash: &Digest) -> Option<&Block> {
        self.state.proposals.get(hash)
    }

    pub fn height_started_at(&self) -> u64 {
        self.state.height_started_at
    }
}
