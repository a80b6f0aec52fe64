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

//! Deterministic contract execution.
//!
//! There is exactly one contract kind: a per-patient heart-rate record
//! guarded by a permission table. Holders of the permitter permission
//! (id zero) may grant and revoke any permission; a failed guard leaves the
//! table untouched and is reported as [`ExecStatus::Denied`]. Every executed
//! transaction pays its scheduled gas up front, denied ones included, and
//! the fee goes to the block proposer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, ContractAddress, ContractKind, Payload, Transaction};
use crate::channel::PublicKey;
use crate::codec::{put_bytes, put_len, put_list, put_tag, put_u64, Decode, DecodeError, Encode, Reader};
use crate::hash::{sha256, Digest};

pub const METHOD_ADD_READING: &str = "add_reading";
pub const METHOD_GRANT: &str = "grant";
pub const METHOD_REVOKE: &str = "revoke";
pub const METHOD_READ_HISTORY: &str = "read_history";

pub const EVENT_READING_ADDED: &str = "ReadingAdded";
pub const EVENT_PERMISSION_CHANGED: &str = "PermissionChanged";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PermissionId(pub [u8; 32]);

impl PermissionId {
    pub const fn from_u8(v: u8) -> Self {
        let mut id = [0u8; 32];
        id[31] = v;
        PermissionId(id)
    }
}

pub const PERMITTER_PERMISSION: PermissionId = PermissionId::from_u8(0);
pub const WRITE_PERMISSION: PermissionId = PermissionId::from_u8(1);
pub const READ_PERMISSION: PermissionId = PermissionId::from_u8(2);

impl fmt::Debug for PermissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PERMITTER_PERMISSION => f.write_str("PERMITTER"),
            WRITE_PERMISSION => f.write_str("WRITE"),
            READ_PERMISSION => f.write_str("READ"),
            _ => write!(f, "PermissionId({})", hex::encode(self.0)),
        }
    }
}

impl Encode for PermissionId {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_bytes(out, &self.0);
    }
}

impl Decode for PermissionId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PermissionId(r.array()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("permission denied")]
pub struct PermissionDenied;

/// Mapping from permission id to the set of addresses holding it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermissionTable {
    permissions: BTreeMap<PermissionId, BTreeSet<PublicKey>>,
}

impl PermissionTable {
    /// A table whose only entry is `deployer` under the permitter permission.
    pub fn initialize(deployer: PublicKey) -> Self {
        let mut t = Self::default();
        t.permissions.entry(PERMITTER_PERMISSION).or_default().insert(deployer);
        t
    }

    pub fn has_permission(&self, permission: PermissionId, addr: &PublicKey) -> bool {
        self.permissions.get(&permission).is_some_and(|s| s.contains(addr))
    }

    pub fn grant_permission(
        &mut self,
        caller: &PublicKey,
        permission: PermissionId,
        addr: PublicKey,
    ) -> Result<(), PermissionDenied> {
        if !self.has_permission(PERMITTER_PERMISSION, caller) {
            return Err(PermissionDenied);
        }
        self.permissions.entry(permission).or_default().insert(addr);
        Ok(())
    }

    pub fn revoke_permission(
        &mut self,
        caller: &PublicKey,
        permission: PermissionId,
        addr: &PublicKey,
    ) -> Result<(), PermissionDenied> {
        if !self.has_permission(PERMITTER_PERMISSION, caller) {
            return Err(PermissionDenied);
        }
        if let Some(set) = self.permissions.get_mut(&permission) {
            set.remove(addr);
            if set.is_empty() {
                self.permissions.remove(&permission);
            }
        }
        Ok(())
    }

    pub fn members(&self, permission: PermissionId) -> impl Iterator<Item = &PublicKey> {
        self.permissions.get(&permission).into_iter().flatten()
    }
}

impl Encode for PermissionTable {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_len(out, self.permissions.len());
        for (id, members) in &self.permissions {
            id.encode_to(out);
            put_len(out, members.len());
            for m in members {
                m.encode_to(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reading {
    pub timestamp: u64,
    pub heart_rate: u16,
}

impl Encode for Reading {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.timestamp);
        put_u64(out, u64::from(self.heart_rate));
    }
}

impl Decode for Reading {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { timestamp: r.u64()?, heart_rate: r.u16()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthRecordState {
    pub owner: PublicKey,
    pub readings: Vec<Reading>,
    pub permission_table: PermissionTable,
}

impl HealthRecordState {
    pub fn can_read(&self, caller: &PublicKey) -> bool {
        *caller == self.owner || self.permission_table.has_permission(READ_PERMISSION, caller)
    }

    pub fn readings_in(&self, from_ts: u64, to_ts: u64) -> Vec<Reading> {
        self.readings
            .iter()
            .filter(|r| from_ts <= r.timestamp && r.timestamp <= to_ts)
            .copied()
            .collect()
    }
}

impl Encode for HealthRecordState {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.owner.encode_to(out);
        put_list(out, &self.readings);
        self.permission_table.encode_to(out);
    }
}

/// Gas charged per operation. Contract defaults are measured costs of the
/// reference contract; `read_query` and `transfer` use the base transaction
/// cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub deploy: u64,
    pub add_data: u64,
    pub grant: u64,
    pub revoke: u64,
    pub read_query: u64,
    pub transfer: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        Self {
            deploy: 701_382,
            add_data: 48_182,
            grant: 23_521,
            revoke: 21_948,
            read_query: 21_000,
            transfer: 21_000,
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [self.deploy, self.add_data, self.grant, self.revoke, self.read_query, self.transfer];
        if all.contains(&0) {
            return Err("gas schedule entries must be positive");
        }
        Ok(())
    }
}

impl Encode for GasSchedule {
    fn encode_to(&self, out: &mut Vec<u8>) {
        for v in [self.deploy, self.add_data, self.grant, self.revoke, self.read_query, self.transfer] {
            put_u64(out, v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub contract_address: ContractAddress,
    pub name: String,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    pub block_height: u64,
    pub tx_hash: Digest,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Account {
    pub balance: u64,
    pub next_nonce: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub accounts: BTreeMap<PublicKey, Account>,
    pub contracts: BTreeMap<ContractAddress, HealthRecordState>,
}

impl WorldState {
    pub fn with_balances<I: IntoIterator<Item = (PublicKey, u64)>>(balances: I) -> Self {
        let mut ws = Self::default();
        for (pk, balance) in balances {
            ws.accounts.insert(pk, Account { balance, next_nonce: 0 });
        }
        ws
    }

    pub fn account(&self, pk: &PublicKey) -> Account {
        self.accounts.get(pk).copied().unwrap_or_default()
    }

    pub fn balance(&self, pk: &PublicKey) -> u64 {
        self.account(pk).balance
    }

    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| u128::from(a.balance)).sum()
    }

    fn credit(&mut self, pk: PublicKey, amount: u64) {
        let acct = self.accounts.entry(pk).or_default();
        acct.balance = acct.balance.checked_add(amount).expect("coin supply overflow");
    }
}

impl Encode for WorldState {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_len(out, self.accounts.len());
        for (pk, acct) in &self.accounts {
            pk.encode_to(out);
            put_u64(out, acct.balance);
            put_u64(out, acct.next_nonce);
        }
        put_len(out, self.contracts.len());
        for (addr, c) in &self.contracts {
            addr.encode_to(out);
            c.encode_to(out);
        }
    }
}

pub fn contract_address(deployer: &PublicKey, deployer_nonce: u64) -> ContractAddress {
    let mut buf = [0u8; 40];
    buf[..32].copy_from_slice(&deployer.0);
    buf[32..].copy_from_slice(&deployer_nonce.to_be_bytes());
    sha256(&buf)
}

/// Typed view of the contract methods carried in [`Payload::Call`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractCall {
    AddReading(Reading),
    Grant { permission: PermissionId, addr: PublicKey },
    Revoke { permission: PermissionId, addr: PublicKey },
    ReadHistory { from_ts: u64, to_ts: u64 },
}

impl ContractCall {
    pub fn method(&self) -> &'static str {
        match self {
            ContractCall::AddReading(_) => METHOD_ADD_READING,
            ContractCall::Grant { .. } => METHOD_GRANT,
            ContractCall::Revoke { .. } => METHOD_REVOKE,
            ContractCall::ReadHistory { .. } => METHOD_READ_HISTORY,
        }
    }

    pub fn args(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ContractCall::AddReading(r) => r.encode_to(&mut out),
            ContractCall::Grant { permission, addr } | ContractCall::Revoke { permission, addr } => {
                permission.encode_to(&mut out);
                addr.encode_to(&mut out);
            }
            ContractCall::ReadHistory { from_ts, to_ts } => {
                put_u64(&mut out, *from_ts);
                put_u64(&mut out, *to_ts);
            }
        }
        out
    }

    pub fn into_payload(self, contract: ContractAddress) -> Payload {
        Payload::Call { contract, method: self.method().to_string(), args: self.args() }
    }

    pub fn parse(method: &str, args: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(args);
        let call = match method {
            METHOD_ADD_READING => ContractCall::AddReading(Reading::decode_from(&mut r)?),
            METHOD_GRANT => ContractCall::Grant {
                permission: PermissionId::decode_from(&mut r)?,
                addr: PublicKey::decode_from(&mut r)?,
            },
            METHOD_REVOKE => ContractCall::Revoke {
                permission: PermissionId::decode_from(&mut r)?,
                addr: PublicKey::decode_from(&mut r)?,
            },
            METHOD_READ_HISTORY => ContractCall::ReadHistory { from_ts: r.u64()?, to_ts: r.u64()? },
            _ => return Err(DecodeError::Invalid("unknown method")),
        };
        r.finish()?;
        Ok(call)
    }
}

/// Encodes the initial writer list carried by a deploy transaction.
pub fn deploy_args(writers: &[PublicKey]) -> Vec<u8> {
    let mut out = Vec::new();
    put_list(&mut out, writers);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Success,
    Denied,
    OutOfGas,
    Failed(String),
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecStatus::Success => f.write_str("success"),
            ExecStatus::Denied => f.write_str("denied"),
            ExecStatus::OutOfGas => f.write_str("out_of_gas"),
            ExecStatus::Failed(why) => write!(f, "failed:{why}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_hash: Digest,
    pub gas_used: u64,
    pub events: Vec<Event>,
    pub status: ExecStatus,
    pub contract_created: Option<ContractAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("balance {balance} below required gas {required}")]
    InsufficientBalance { balance: u64, required: u64 },
    #[error("bad nonce: expected {expected}, found {found}")]
    BadNonce { expected: u64, found: u64 },
    #[error("queries are not executable in blocks")]
    NotExecutable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecContext {
    pub height: u64,
    pub proposer: PublicKey,
}

fn required_gas(payload: &Payload, schedule: &GasSchedule) -> u64 {
    match payload {
        Payload::Transfer { .. } | Payload::Query(_) => schedule.transfer,
        Payload::Deploy { .. } => schedule.deploy,
        Payload::Call { method, .. } => match method.as_str() {
            METHOD_ADD_READING => schedule.add_data,
            METHOD_GRANT => schedule.grant,
            METHOD_REVOKE => schedule.revoke,
            METHOD_READ_HISTORY => schedule.read_query,
            _ => schedule.transfer,
        },
    }
}

/// Executes one transaction. On `Err` the state is untouched and the nonce
/// is not consumed; on `Ok` the fee has been moved to the proposer and the
/// sender's nonce advanced, whatever the status.
pub fn execute_transaction(
    ws: &mut WorldState,
    tx: &Transaction,
    schedule: &GasSchedule,
    ctx: ExecContext,
) -> Result<Receipt, ExecError> {
    if tx.is_query() {
        return Err(ExecError::NotExecutable);
    }
    let sender = ws.account(&tx.sender);
    if tx.nonce != sender.next_nonce {
        return Err(ExecError::BadNonce { expected: sender.next_nonce, found: tx.nonce });
    }
    let required = required_gas(&tx.payload, schedule);
    if sender.balance < required {
        return Err(ExecError::InsufficientBalance { balance: sender.balance, required });
    }

    let tx_hash = tx.hash();
    let gas_used = required.min(tx.gas_limit);
    {
        let acct = ws.accounts.entry(tx.sender).or_default();
        acct.balance -= gas_used;
        acct.next_nonce += 1;
    }
    ws.credit(ctx.proposer, gas_used);

    let mut receipt = Receipt {
        tx_hash,
        gas_used,
        events: Vec::new(),
        status: ExecStatus::Success,
        contract_created: None,
    };
    if tx.gas_limit < required {
        receipt.status = ExecStatus::OutOfGas;
        return Ok(receipt);
    }

    match &tx.payload {
        Payload::Transfer { to, amount } => {
            let acct = ws.accounts.get_mut(&tx.sender).expect("sender account exists");
            if acct.balance < *amount {
                receipt.status = ExecStatus::Failed("insufficient funds".into());
            } else {
                acct.balance -= amount;
                ws.credit(*to, *amount);
            }
        }
        Payload::Deploy { kind: ContractKind::HealthRecord, init_args } => {
            let writers = match decode_writers(init_args) {
                Ok(w) => w,
                Err(_) => {
                    receipt.status = ExecStatus::Failed("bad init args".into());
                    return Ok(receipt);
                }
            };
            let addr = contract_address(&tx.sender, tx.nonce);
            let mut table = PermissionTable::initialize(tx.sender);
            for w in writers {
                table
                    .grant_permission(&tx.sender, WRITE_PERMISSION, w)
                    .expect("deployer holds the permitter permission");
            }
            ws.contracts.insert(
                addr,
                HealthRecordState { owner: tx.sender, readings: Vec::new(), permission_table: table },
            );
            receipt.contract_created = Some(addr);
        }
        Payload::Call { contract, method, args } => {
            let Some(state) = ws.contracts.get_mut(contract) else {
                receipt.status = ExecStatus::Failed("unknown contract".into());
                return Ok(receipt);
            };
            let call = match ContractCall::parse(method, args) {
                Ok(c) => c,
                Err(e) => {
                    receipt.status = ExecStatus::Failed(format!("bad call: {e}"));
                    return Ok(receipt);
                }
            };
            let event = |name: &str, data: Vec<u8>| Event {
                contract_address: *contract,
                name: name.to_string(),
                data,
                block_height: ctx.height,
                tx_hash,
            };
            match call {
                ContractCall::AddReading(reading) => {
                    if state.permission_table.has_permission(WRITE_PERMISSION, &tx.sender) {
                        state.readings.push(reading);
                        receipt.events.push(event(EVENT_READING_ADDED, reading.encode()));
                    } else {
                        receipt.status = ExecStatus::Denied;
                    }
                }
                ContractCall::Grant { permission, addr } => {
                    match state.permission_table.grant_permission(&tx.sender, permission, addr) {
                        Ok(()) => receipt
                            .events
                            .push(event(EVENT_PERMISSION_CHANGED, permission_event(0, permission, &addr))),
                        Err(PermissionDenied) => receipt.status = ExecStatus::Denied,
                    }
                }
                ContractCall::Revoke { permission, addr } => {
                    match state.permission_table.revoke_permission(&tx.sender, permission, &addr) {
                        Ok(()) => receipt
                            .events
                            .push(event(EVENT_PERMISSION_CHANGED, permission_event(1, permission, &addr))),
                        Err(PermissionDenied) => receipt.status = ExecStatus::Denied,
                    }
                }
                ContractCall::ReadHistory { .. } => {
                    if !state.can_read(&tx.sender) {
                        receipt.status = ExecStatus::Denied;
                    }
                }
            }
        }
        Payload::Query(_) => unreachable!("rejected above"),
    }
    Ok(receipt)
}

fn decode_writers(args: &[u8]) -> Result<Vec<PublicKey>, DecodeError> {
    if args.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = Reader::new(args);
    let w = r.list()?;
    r.finish()?;
    Ok(w)
}

fn permission_event(tag: u8, permission: PermissionId, addr: &PublicKey) -> Vec<u8> {
    let mut out = Vec::new();
    put_tag(&mut out, tag);
    permission.encode_to(&mut out);
    addr.encode_to(&mut out);
    out
}

/// Outcome of one transaction inside a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutcome {
    pub tx_hash: Digest,
    pub sender: PublicKey,
    pub result: Result<Receipt, ExecError>,
}

/// Applies every transaction of `block` in order. Skipped transactions
/// (execution errors) leave no trace in the state.
pub fn apply_block(ws: &mut WorldState, block: &Block, schedule: &GasSchedule) -> Vec<TxOutcome> {
    let ctx = ExecContext { height: block.header.height, proposer: block.header.proposer };
    block
        .transactions
        .iter()
        .map(|tx| TxOutcome {
            tx_hash: tx.hash(),
            sender: tx.sender,
            result: execute_transaction(ws, tx, schedule, ctx),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReadError {
    #[error("permission denied")]
    PermissionDenied,
    #[error("unknown contract")]
    UnknownContract,
}

/// Readings with `from_ts <= timestamp <= to_ts`, in append order. The
/// caller must be the owner or hold the read permission.
pub fn read_history(
    ws: &WorldState,
    contract: &ContractAddress,
    caller: &PublicKey,
    from_ts: u64,
    to_ts: u64,
) -> Result<Vec<Reading>, ReadError> {
    let state = ws.contracts.get(contract).ok_or(ReadError::UnknownContract)?;
    if !state.can_read(caller) {
        return Err(ReadError::PermissionDenied);
    }
    Ok(state.readings_in(from_ts, to_ts))
}

/// Canonical encoding of a read result, used in query responses.
pub fn encode_readings(readings: &[Reading]) -> Vec<u8> {
    let mut out = Vec::new();
    put_list(&mut out, readings);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_keypair, KeyPair};

    fn key(i: u8) -> KeyPair {
        generate_keypair([i; 32])
    }

    const CTX: ExecContext = ExecContext { height: 1, proposer: PublicKey([0xAA; 32]) };

    fn call(k: &KeyPair, nonce: u64, contract: Digest, c: ContractCall) -> Transaction {
        Transaction::new_signed(k, nonce, 0, c.into_payload(contract), 1_000_000)
    }

    fn deploy(k: &KeyPair, nonce: u64, writers: &[PublicKey]) -> Transaction {
        Transaction::new_signed(
            k,
            nonce,
            0,
            Payload::Deploy { kind: ContractKind::HealthRecord, init_args: deploy_args(writers) },
            1_000_000,
        )
    }

    #[test]
    fn initialize_grants_only_permitter_to_deployer() {
        let a = key(1).public_key();
        let b = key(2).public_key();
        let t = PermissionTable::initialize(a);
        assert!(t.has_permission(PERMITTER_PERMISSION, &a));
        assert!(!t.has_permission(WRITE_PERMISSION, &a));
        assert!(!t.has_permission(PERMITTER_PERMISSION, &b));
        assert!(!t.has_permission(PermissionId([0xFF; 32]), &a));
    }

    #[test]
    fn grant_and_revoke_guarded_by_permitter() {
        let owner = key(1).public_key();
        let doctor = key(2).public_key();
        let outsider = key(3).public_key();
        let mut t = PermissionTable::initialize(owner);

        t.grant_permission(&owner, READ_PERMISSION, doctor).unwrap();
        assert!(t.has_permission(READ_PERMISSION, &doctor));
        t.grant_permission(&owner, READ_PERMISSION, doctor).unwrap();
        assert_eq!(t.members(READ_PERMISSION).count(), 1);

        let before = t.clone();
        assert_eq!(t.grant_permission(&outsider, WRITE_PERMISSION, outsider), Err(PermissionDenied));
        assert_eq!(t.revoke_permission(&outsider, READ_PERMISSION, &doctor), Err(PermissionDenied));
        assert_eq!(t, before);

        t.revoke_permission(&owner, READ_PERMISSION, &doctor).unwrap();
        assert!(!t.has_permission(READ_PERMISSION, &doctor));
        let snapshot = t.clone();
        t.revoke_permission(&owner, READ_PERMISSION, &outsider).unwrap();
        assert_eq!(t, snapshot);
    }

    #[test]
    fn table_gas_figures() {
        let owner = key(1);
        let doctor = key(2).public_key();
        let mut ws = WorldState::with_balances([(owner.public_key(), 10_000_000)]);
        let s = GasSchedule::default();

        let r = execute_transaction(&mut ws, &deploy(&owner, 0, &[owner.public_key()]), &s, CTX).unwrap();
        assert_eq!(r.gas_used, 701_382);
        let addr = r.contract_created.unwrap();
        assert_eq!(addr, contract_address(&owner.public_key(), 0));

        let r = execute_transaction(
            &mut ws,
            &call(&owner, 1, addr, ContractCall::AddReading(Reading { timestamp: 5, heart_rate: 72 })),
            &s,
            CTX,
        )
        .unwrap();
        assert_eq!((r.gas_used, r.status.clone(), r.events.len()), (48_182, ExecStatus::Success, 1));
        assert_eq!(r.events[0].name, EVENT_READING_ADDED);
        assert_eq!(ws.contracts[&addr].readings.len(), 1);

        let grant = ContractCall::Grant { permission: READ_PERMISSION, addr: doctor };
        let r = execute_transaction(&mut ws, &call(&owner, 2, addr, grant), &s, CTX).unwrap();
        assert_eq!(r.gas_used, 23_521);
        assert_eq!(r.events[0].name, EVENT_PERMISSION_CHANGED);

        let revoke = ContractCall::Revoke { permission: READ_PERMISSION, addr: doctor };
        let r = execute_transaction(&mut ws, &call(&owner, 3, addr, revoke), &s, CTX).unwrap();
        assert_eq!(r.gas_used, 21_948);
    }

    #[test]
    fn denied_calls_drain_balance() {
        let owner = key(1);
        let attacker = key(9);
        let s = GasSchedule::default();
        let mut ws =
            WorldState::with_balances([(owner.public_key(), 1_000_000), (attacker.public_key(), 100_000)]);
        let addr = execute_transaction(&mut ws, &deploy(&owner, 0, &[]), &s, CTX)
            .unwrap()
            .contract_created
            .unwrap();

        let mut processed = 0;
        for nonce in 0..3 {
            let tx = call(&attacker, nonce, addr, ContractCall::AddReading(Reading { timestamp: 1, heart_rate: 1 }));
            match execute_transaction(&mut ws, &tx, &s, CTX) {
                Ok(r) => {
                    assert_eq!(r.status, ExecStatus::Denied);
                    assert!(r.events.is_empty());
                    processed += 1;
                }
                Err(e) => {
                    assert_eq!(e, ExecError::InsufficientBalance { balance: 100_000 - 2 * 48_182, required: 48_182 });
                    assert_eq!(ws.account(&attacker.public_key()).next_nonce, 2);
                }
            }
        }
        assert_eq!(processed, 100_000 / 48_182);
        assert!(ws.contracts[&addr].readings.is_empty());
    }

    #[test]
    fn bad_nonce_leaves_state_untouched() {
        let owner = key(1);
        let mut ws = WorldState::with_balances([(owner.public_key(), 1_000_000)]);
        let before = ws.clone();
        let err = execute_transaction(&mut ws, &deploy(&owner, 3, &[]), &GasSchedule::default(), CTX).unwrap_err();
        assert_eq!(err, ExecError::BadNonce { expected: 0, found: 3 });
        assert_eq!(ws, before);
    }

    #[test]
    fn read_history_access_and_range() {
        let owner = key(1);
        let doctor = key(2);
        let s = GasSchedule::default();
        let mut ws = WorldState::with_balances([(owner.public_key(), 10_000_000)]);
        let addr = execute_transaction(&mut ws, &deploy(&owner, 0, &[owner.public_key()]), &s, CTX)
            .unwrap()
            .contract_created
            .unwrap();
        for i in 0..10u64 {
            let c = ContractCall::AddReading(Reading { timestamp: 100 * i, heart_rate: 60 + i as u16 });
            execute_transaction(&mut ws, &call(&owner, 1 + i, addr, c), &s, CTX).unwrap();
        }
        let all = read_history(&ws, &addr, &owner.public_key(), 0, u64::MAX).unwrap();
        assert_eq!(all.len(), 10);
        assert_eq!(
            read_history(&ws, &addr, &doctor.public_key(), 0, u64::MAX),
            Err(ReadError::PermissionDenied)
        );
        assert_eq!(
            read_history(&ws, &Digest([1; 32]), &owner.public_key(), 0, 1),
            Err(ReadError::UnknownContract)
        );
        let window = read_history(&ws, &addr, &owner.public_key(), 250, 600).unwrap();
        let oracle: Vec<_> = all.iter().filter(|r| (250..=600).contains(&r.timestamp)).copied().collect();
        assert_eq!(window, oracle);
    }

    #[test]
    fn contract_call_round_trips() {
        let calls = [
            ContractCall::AddReading(Reading { timestamp: 9, heart_rate: 180 }),
            ContractCall::Grant { permission: WRITE_PERMISSION, addr: PublicKey([3; 32]) },
            ContractCall::Revoke { permission: READ_PERMISSION, addr: PublicKey([4; 32]) },
            ContractCall::ReadHistory { from_ts: 1, to_ts: 2 },
        ];
        for c in calls {
            assert_eq!(ContractCall::parse(c.method(), &c.args()).unwrap(), c);
        }
        assert!(ContractCall::parse("selfdestruct", &[]).is_err());
    }
}
