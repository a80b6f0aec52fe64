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

//! Ledger data model: transactions, blocks, stateless validation and the
//! append-only hash chain.
//!
//! `tx_root` is a flat SHA-256 over the concatenated transaction hashes, not
//! a Merkle root. Nothing here needs inclusion proofs; swap it out if that
//! changes.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::channel::{verify, KeyPair, PublicKey, Signature};
use crate::codec::{put_bytes, put_list, put_str, put_tag, put_u64, Decode, DecodeError, Encode, Reader};
use crate::hash::{hash_of, sha256, Digest};

pub type ContractAddress = Digest;

pub const DEFAULT_MAX_TXS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContractKind {
    HealthRecord,
}

impl Encode for ContractKind {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            ContractKind::HealthRecord => put_tag(out, 0),
        }
    }
}

impl Decode for ContractKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            0 => Ok(ContractKind::HealthRecord),
            tag => Err(DecodeError::BadTag { ty: "ContractKind", tag }),
        }
    }
}

/// A read request for a time window of a health record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub contract: ContractAddress,
    pub from_ts: u64,
    pub to_ts: u64,
}

impl Encode for Query {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.contract.encode_to(out);
        put_u64(out, self.from_ts);
        put_u64(out, self.to_ts);
    }
}

impl Decode for Query {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { contract: Digest::decode_from(r)?, from_ts: r.u64()?, to_ts: r.u64()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Transfer { to: PublicKey, amount: u64 },
    Deploy { kind: ContractKind, init_args: Vec<u8> },
    Call { contract: ContractAddress, method: String, args: Vec<u8> },
    /// Served locally by a node; never included in a block.
    Query(Query),
}

impl Encode for Payload {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Payload::Transfer { to, amount } => {
                put_tag(out, 0);
                to.encode_to(out);
                put_u64(out, *amount);
            }
            Payload::Deploy { kind, init_args } => {
                put_tag(out, 1);
                kind.encode_to(out);
                put_bytes(out, init_args);
            }
            Payload::Call { contract, method, args } => {
                put_tag(out, 2);
                contract.encode_to(out);
                put_str(out, method);
                put_bytes(out, args);
            }
            Payload::Query(q) => {
                put_tag(out, 3);
                q.encode_to(out);
            }
        }
    }
}

impl Decode for Payload {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.tag()? {
            0 => Payload::Transfer { to: PublicKey::decode_from(r)?, amount: r.u64()? },
            1 => Payload::Deploy { kind: ContractKind::decode_from(r)?, init_args: r.bytes()? },
            2 => Payload::Call {
                contract: Digest::decode_from(r)?,
                method: r.string()?,
                args: r.bytes()?,
            },
            3 => Payload::Query(Query::decode_from(r)?),
            tag => return Err(DecodeError::BadTag { ty: "Payload", tag }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub sender: PublicKey,
    pub nonce: u64,
    pub timestamp: u64,
    pub payload: Payload,
    pub gas_limit: u64,
    pub signature: Signature,
}

impl Transaction {
    pub fn new_signed(
        key: &KeyPair,
        nonce: u64,
        timestamp: u64,
        payload: Payload,
        gas_limit: u64,
    ) -> Self {
        let mut tx = Self {
            sender: key.public_key(),
            nonce,
            timestamp,
            payload,
            gas_limit,
            signature: Signature::ZERO,
        };
        tx.signature = key.sign(&tx.signing_hash().0);
        tx
    }

    fn encode_unsigned(&self, out: &mut Vec<u8>) {
        self.sender.encode_to(out);
        put_u64(out, self.nonce);
        put_u64(out, self.timestamp);
        self.payload.encode_to(out);
        put_u64(out, self.gas_limit);
    }

    pub fn signing_hash(&self) -> Digest {
        let mut out = Vec::new();
        self.encode_unsigned(&mut out);
        sha256(&out)
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.sender, &self.signing_hash().0, &self.signature)
    }

    pub fn hash(&self) -> Digest {
        hash_tx(self)
    }

    pub fn is_query(&self) -> bool {
        matches!(self.payload, Payload::Query(_))
    }
}

impl Encode for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.encode_unsigned(out);
        self.signature.encode_to(out);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            sender: PublicKey::decode_from(r)?,
            nonce: r.u64()?,
            timestamp: r.u64()?,
            payload: Payload::decode_from(r)?,
            gas_limit: r.u64()?,
            signature: Signature::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockHeader {
    pub height: u64,
    pub timestamp: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub proposer: PublicKey,
    pub proposer_signature: Signature,
}

impl BlockHeader {
    fn encode_unsigned(&self, out: &mut Vec<u8>) {
        put_u64(out, self.height);
        put_u64(out, self.timestamp);
        self.prev_hash.encode_to(out);
        self.tx_root.encode_to(out);
        self.proposer.encode_to(out);
    }

    pub fn signing_hash(&self) -> Digest {
        let mut out = Vec::new();
        self.encode_unsigned(&mut out);
        sha256(&out)
    }

    pub fn sign(&mut self, key: &KeyPair) {
        self.proposer_signature = key.sign(&self.signing_hash().0);
    }
}

impl Encode for BlockHeader {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.encode_unsigned(out);
        self.proposer_signature.encode_to(out);
    }
}

impl Decode for BlockHeader {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: r.u64()?,
            timestamp: r.u64()?,
            prev_hash: Digest::decode_from(r)?,
            tx_root: Digest::decode_from(r)?,
            proposer: PublicKey::decode_from(r)?,
            proposer_signature: Signature::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Digest {
        hash_block(self)
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }
}

impl Encode for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.header.encode_to(out);
        put_list(out, &self.transactions);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { header: BlockHeader::decode_from(r)?, transactions: r.list()? })
    }
}

pub fn hash_tx(t: &Transaction) -> Digest {
    hash_of(t)
}

pub fn hash_block(b: &Block) -> Digest {
    hash_of(b)
}

pub fn compute_tx_root(txs: &[Transaction]) -> Digest {
    let mut buf = Vec::with_capacity(32 * txs.len());
    for tx in txs {
        buf.extend_from_slice(&tx.hash().0);
    }
    sha256(&buf)
}

/// The block at height zero. `commitment` is the hash of the genesis
/// configuration; it takes the place of the transaction root so that the
/// genesis hash pins the whole configuration.
pub fn genesis_block(timestamp: u64, commitment: Digest) -> Block {
    Block {
        header: BlockHeader {
            height: 0,
            timestamp,
            prev_hash: Digest::ZERO,
            tx_root: commitment,
            proposer: PublicKey::default(),
            proposer_signature: Signature::ZERO,
        },
        transactions: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("proposer {0} is not in the authority set")]
    NotAuthority(PublicKey),
    #[error("block failed validation: {0:?}")]
    ValidationRequired(Vec<Violation>),
}

/// Picks up to `max_txs` transactions ordered by `(sender, nonce)` with ties
/// kept in arrival order, skipping queries, and signs the resulting block.
pub fn build_block(
    pending: &[Transaction],
    parent: &Block,
    proposer: &KeyPair,
    authorities: &[PublicKey],
    now: u64,
    max_txs: usize,
) -> Result<Block, ChainError> {
    let me = proposer.public_key();
    if !authorities.contains(&me) {
        return Err(ChainError::NotAuthority(me));
    }
    let mut picked: Vec<&Transaction> = pending.iter().filter(|tx| !tx.is_query()).collect();
    picked.sort_by_key(|tx| (tx.sender, tx.nonce));
    picked.truncate(max_txs);
    let transactions: Vec<Transaction> = picked.into_iter().cloned().collect();

    let mut header = BlockHeader {
        height: parent.header.height + 1,
        timestamp: now.max(parent.header.timestamp + 1),
        prev_hash: hash_block(parent),
        tx_root: compute_tx_root(&transactions),
        proposer: me,
        proposer_signature: Signature::ZERO,
    };
    header.sign(proposer);
    Ok(Block { header, transactions })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    BadParentLink,
    BadHeight { expected: u64, found: u64 },
    NonIncreasingTimestamp,
    UnknownProposer,
    BadProposerSignature,
    BadTxRoot,
    BadTxSignature { index: usize },
    /// Only reported by [`Chain::validate_next`], which knows the history.
    DuplicateTx { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadParentLink => f.write_str("bad parent link"),
            Violation::BadHeight { expected, found } => {
                write!(f, "bad height: expected {expected}, found {found}")
            }
            Violation::NonIncreasingTimestamp => f.write_str("timestamp not after parent"),
            Violation::UnknownProposer => f.write_str("proposer not an authority"),
            Violation::BadProposerSignature => f.write_str("bad proposer signature"),
            Violation::BadTxRoot => f.write_str("tx root mismatch"),
            Violation::BadTxSignature { index } => write!(f, "bad signature on tx {index}"),
            Violation::DuplicateTx { index } => write!(f, "tx {index} already in chain"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(Vec<Violation>),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Valid => &[],
            Verdict::Invalid(v) => v,
        }
    }

    fn from_violations(v: Vec<Violation>) -> Self {
        if v.is_empty() {
            Verdict::Valid
        } else {
            Verdict::Invalid(v)
        }
    }
}

/// Stateless checks of `b` against its parent. Every violation is
/// reported, in check order.
pub fn validate_block(b: &Block, parent: &Block, authorities: &[PublicKey]) -> Verdict {
    let h = &b.header;
    let mut v = Vec::new();
    if h.prev_hash != hash_block(parent) {
        v.push(Violation::BadParentLink);
    }
    if h.height != parent.header.height + 1 {
        v.push(Violation::BadHeight { expected: parent.header.height + 1, found: h.height });
    }
    if h.timestamp <= parent.header.timestamp {
        v.push(Violation::NonIncreasingTimestamp);
    }
    if !authorities.contains(&h.proposer) {
        v.push(Violation::UnknownProposer);
    }
    if !verify(&h.proposer, &h.signing_hash().0, &h.proposer_signature) {
        v.push(Violation::BadProposerSignature);
    }
    if h.tx_root != compute_tx_root(&b.transactions) {
        v.push(Violation::BadTxRoot);
    }
    for (index, tx) in b.transactions.iter().enumerate() {
        if !tx.verify_signature() {
            v.push(Violation::BadTxSignature { index });
        }
    }
    Verdict::from_violations(v)
}

/// Append-only chain of validated blocks.
#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
    tx_index: HashSet<Digest>,
    pub authority_set: Vec<PublicKey>,
}

impl Chain {
    pub fn new(genesis: Block, authority_set: Vec<PublicKey>) -> Self {
        let hash = hash_block(&genesis);
        Self { blocks: vec![genesis], hashes: vec![hash], tx_index: HashSet::new(), authority_set }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn height(&self) -> u64 {
        self.tip().header.height
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_hash(&self) -> Digest {
        *self.hashes.last().expect("chain always holds genesis")
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn block_hash(&self, height: u64) -> Option<Digest> {
        self.hashes.get(usize::try_from(height).ok()?).copied()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn contains_tx(&self, hash: &Digest) -> bool {
        self.tx_index.contains(hash)
    }

    /// [`validate_block`] against the tip, plus a check that no transaction
    /// is already recorded (in history or earlier in the same block).
    pub fn validate_next(&self, b: &Block) -> Verdict {
        let mut v = match validate_block(b, self.tip(), &self.authority_set) {
            Verdict::Valid => Vec::new(),
            Verdict::Invalid(v) => v,
        };
        let mut seen = HashSet::new();
        for (index, tx) in b.transactions.iter().enumerate() {
            let h = tx.hash();
            if self.tx_index.contains(&h) || !seen.insert(h) {
                v.push(Violation::DuplicateTx { index });
            }
        }
        Verdict::from_violations(v)
    }

    pub fn append_block(&mut self, b: Block) -> Result<(), ChainError> {
        if let Verdict::Invalid(v) = self.validate_next(&b) {
            return Err(ChainError::ValidationRequired(v));
        }
        for tx in &b.transactions {
            self.tx_index.insert(tx.hash());
        }
        self.hashes.push(hash_block(&b));
        self.blocks.push(b);
        Ok(())
    }

    /// Recomputes every link; returns the first height whose stored parent
    /// hash does not match its predecessor.
    pub fn verify_links(&self) -> Result<(), u64> {
        for i in 1..self.blocks.len() {
            if self.blocks[i].header.prev_hash != hash_block(&self.blocks[i - 1]) {
                return Err(i as u64);
            }
        }
        Ok(())
    }

    /// Raw access for tamper tests.
    #[doc(hidden)]
    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_keypair;

    fn key(i: u8) -> KeyPair {
        generate_keypair([i; 32])
    }

    fn tx(k: &KeyPair, nonce: u64) -> Transaction {
        Transaction::new_signed(
            k,
            nonce,
            1_000 + nonce,
            Payload::Transfer { to: PublicKey([9; 32]), amount: 5 },
            21_000,
        )
    }

    fn setup() -> (Chain, KeyPair) {
        let proposer = key(1);
        let chain = Chain::new(genesis_block(1_000, Digest::ZERO), vec![proposer.public_key()]);
        (chain, proposer)
    }

    #[test]
    fn empty_pending_gives_heartbeat_block() {
        let (chain, p) = setup();
        let b = build_block(&[], chain.tip(), &p, &chain.authority_set, 2_000, 500).unwrap();
        assert!(b.transactions.is_empty());
        assert_eq!(validate_block(&b, chain.tip(), &chain.authority_set), Verdict::Valid);
    }

    #[test]
    fn non_authority_cannot_build() {
        let (chain, _) = setup();
        let outsider = key(2);
        assert_eq!(
            build_block(&[], chain.tip(), &outsider, &chain.authority_set, 2_000, 500),
            Err(ChainError::NotAuthority(outsider.public_key()))
        );
    }

    #[test]
    fn batch_cap_and_ordering() {
        let (chain, p) = setup();
        let users: Vec<KeyPair> = (10..16).map(key).collect();
        let mut pending = Vec::new();
        for n in (0..100).rev() {
            for u in &users {
                pending.push(tx(u, n));
            }
        }
        assert_eq!(pending.len(), 600);
        let b = build_block(&pending, chain.tip(), &p, &chain.authority_set, 2_000, 500).unwrap();
        assert_eq!(b.transactions.len(), 500);
        let keys: Vec<_> = b.transactions.iter().map(|t| (t.sender, t.nonce)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(validate_block(&b, chain.tip(), &chain.authority_set).is_valid());
    }

    #[test]
    fn ties_keep_arrival_order() {
        let (chain, p) = setup();
        let u = key(20);
        let a = Transaction::new_signed(&u, 0, 1, Payload::Transfer { to: PublicKey([1; 32]), amount: 1 }, 1);
        let b = Transaction::new_signed(&u, 0, 2, Payload::Transfer { to: PublicKey([1; 32]), amount: 1 }, 1);
        let blk = build_block(&[a.clone(), b.clone()], chain.tip(), &p, &chain.authority_set, 5, 10).unwrap();
        assert_eq!(blk.transactions, vec![a, b]);
    }

    #[test]
    fn queries_are_never_included() {
        let (chain, p) = setup();
        let u = key(21);
        let q = Transaction::new_signed(
            &u,
            0,
            1,
            Payload::Query(Query { contract: Digest::ZERO, from_ts: 0, to_ts: 9 }),
            1,
        );
        let b = build_block(&[q, tx(&u, 0)], chain.tip(), &p, &chain.authority_set, 5, 10).unwrap();
        assert_eq!(b.transactions.len(), 1);
        assert!(!b.transactions[0].is_query());
    }

    #[test]
    fn grandparent_link_is_rejected() {
        let (mut chain, p) = setup();
        let b1 = build_block(&[], chain.tip(), &p, &chain.authority_set, 2_000, 500).unwrap();
        let genesis = chain.tip().clone();
        chain.append_block(b1).unwrap();
        let mut b2 = build_block(&[], chain.tip(), &p, &chain.authority_set, 3_000, 500).unwrap();
        b2.header.prev_hash = hash_block(&genesis);
        b2.header.sign(&p);
        assert_eq!(chain.validate_next(&b2), Verdict::Invalid(vec![Violation::BadParentLink]));
    }

    #[test]
    fn forged_tx_is_rejected() {
        let (chain, p) = setup();
        let mut forged = tx(&key(30), 0);
        forged.sender = key(31).public_key();
        let b = build_block(&[tx(&key(32), 0), forged], chain.tip(), &p, &chain.authority_set, 2_000, 500)
            .unwrap();
        let verdict = validate_block(&b, chain.tip(), &chain.authority_set);
        assert!(matches!(
            verdict.violations(),
            [Violation::BadTxSignature { .. }]
        ));
    }

    #[test]
    fn append_invalid_leaves_chain_unchanged() {
        let (mut chain, p) = setup();
        let mut b = build_block(&[], chain.tip(), &p, &chain.authority_set, 2_000, 500).unwrap();
        b.header.height = 7;
        let before = chain.tip_hash();
        assert!(matches!(chain.append_block(b), Err(ChainError::ValidationRequired(_))));
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.tip_hash(), before);
    }

    #[test]
    fn duplicate_tx_across_blocks_is_rejected() {
        let (mut chain, p) = setup();
        let t = tx(&key(40), 0);
        let b1 = build_block(&[t.clone()], chain.tip(), &p, &chain.authority_set, 2_000, 500).unwrap();
        chain.append_block(b1).unwrap();
        let b2 = build_block(&[t], chain.tip(), &p, &chain.authority_set, 3_000, 500).unwrap();
        assert_eq!(
            chain.validate_next(&b2),
            Verdict::Invalid(vec![Violation::DuplicateTx { index: 0 }])
        );
    }

    #[test]
    fn swapping_tx_order_changes_root_and_hash() {
        let (chain, p) = setup();
        let a = tx(&key(50), 0);
        let b = tx(&key(50), 1);
        let b1 = build_block(&[a.clone(), b.clone()], chain.tip(), &p, &chain.authority_set, 2_000, 9).unwrap();
        let mut b2 = b1.clone();
        b2.transactions.swap(0, 1);
        b2.header.tx_root = compute_tx_root(&b2.transactions);
        assert_ne!(b1.header.tx_root, b2.header.tx_root);
        assert_ne!(hash_block(&b1), hash_block(&b2));
    }
}
