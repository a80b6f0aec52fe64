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

//! Gas figures and fee accounting through a running node.

use edgelinker_core::chain::{ContractKind, Payload, Transaction};
use edgelinker_core::channel::KeyPair;
use edgelinker_core::genesis::GenesisConfig;
use edgelinker_core::node::{FogNode, NodeConfig};
use edgelinker_core::vm::{
    contract_address, deploy_args, execute_transaction, ContractCall, ExecContext, ExecStatus, GasSchedule, Reading,
    WorldState, READ_PERMISSION,
};
use proptest::prelude::*;

const GAS: u64 = 1_000_000;

fn single_node(balances: &[(&KeyPair, u64)]) -> (FogNode, u64) {
    let auth = KeyPair::from_seed([100; 32]);
    let mut g = GenesisConfig::new("gas", vec![auth.public_key()]);
    for (k, b) in balances {
        g.initial_balances.insert(k.public_key(), *b);
    }
    let t0 = g.genesis_time_ms;
    (FogNode::new(auth, g, NodeConfig::default()), t0)
}

/// Ticks once per block interval until `n` blocks exist.
fn produce(node: &mut FogNode, t: &mut u64, blocks: u64) {
    let target = node.chain().height() + blocks;
    while node.chain().height() < target {
        *t += 1_000;
        node.tick(*t);
    }
}

#[test]
fn receipts_report_table_gas() {
    let patient = KeyPair::from_seed([1; 32]);
    let doctor = KeyPair::from_seed([2; 32]).public_key();
    let (mut node, mut t) = single_node(&[(&patient, 10_000_000)]);
    let contract = contract_address(&patient.public_key(), 0);
    let payloads = vec![
        Payload::Deploy { kind: ContractKind::HealthRecord, init_args: deploy_args(&[patient.public_key()]) },
        ContractCall::AddReading(Reading { timestamp: 1, heart_rate: 70 }).into_payload(contract),
        ContractCall::Grant { permission: READ_PERMISSION, addr: doctor }.into_payload(contract),
        ContractCall::Revoke { permission: READ_PERMISSION, addr: doctor }.into_payload(contract),
    ];
    let mut hashes = Vec::new();
    for (nonce, p) in payloads.into_iter().enumerate() {
        let tx = Transaction::new_signed(&patient, nonce as u64, t, p, GAS);
        hashes.push(node.inject_tx(tx).unwrap());
    }
    produce(&mut node, &mut t, 1);
    let gas: Vec<u64> = hashes
        .iter()
        .map(|h| {
            let (_, r) = node.receipt(h).expect("receipt");
            let r = r.as_ref().expect("executed");
            assert_eq!(r.status, ExecStatus::Success);
            r.gas_used
        })
        .collect();
    assert_eq!(gas, [701_382, 48_182, 23_521, 21_948]);
    let spent: u64 = gas.iter().sum();
    assert_eq!(node.world().balance(&patient.public_key()), 10_000_000 - spent);
    assert_eq!(node.world().balance(&node.public_key()), spent);
    assert!(node.state_replay_ok());
}

#[test]
fn denied_writes_drain_exactly_floor_balance_over_gas() {
    for balance in [0, 48_181, 48_182, 1_000_000, 5_000_000] {
        let owner = KeyPair::from_seed([1; 32]);
        let intruder = KeyPair::from_seed([7; 32]);
        let mut ws = WorldState::with_balances([(owner.public_key(), 10_000_000), (intruder.public_key(), balance)]);
        let s = GasSchedule::default();
        let ctx = ExecContext { height: 1, proposer: KeyPair::from_seed([9; 32]).public_key() };
        let deploy = Payload::Deploy { kind: ContractKind::HealthRecord, init_args: deploy_args(&[owner.public_key()]) };
        execute_transaction(&mut ws, &Transaction::new_signed(&owner, 0, 1, deploy, GAS), &s, ctx).unwrap();
        let contract = contract_address(&owner.public_key(), 0);
        let mut processed = 0;
        for nonce in 0..200 {
            let call = ContractCall::AddReading(Reading { timestamp: nonce, heart_rate: 1 }).into_payload(contract);
            match execute_transaction(&mut ws, &Transaction::new_signed(&intruder, nonce, 1, call, GAS), &s, ctx) {
                Ok(r) => {
                    assert_eq!((r.status, r.gas_used), (ExecStatus::Denied, 48_182));
                    processed += 1;
                }
                Err(_) => break,
            }
        }
        assert_eq!(processed, balance / 48_182, "balance {balance}");
        assert_eq!(ws.balance(&intruder.public_key()), balance % 48_182);
        assert!(ws.contracts[&contract].readings.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Fees only move between accounts.
    #[test]
    fn total_balance_is_conserved(ops in prop::collection::vec((0..3usize, 0..4u8, 0..3usize), 1..40)) {
        let keys: Vec<KeyPair> = (1..=3).map(|i| KeyPair::from_seed([i; 32])).collect();
        let mut ws = WorldState::with_balances(keys.iter().map(|k| (k.public_key(), 2_000_000)));
        let total = ws.total_balance();
        let s = GasSchedule::default();
        let ctx = ExecContext { height: 1, proposer: keys[0].public_key() };
        let contract = contract_address(&keys[0].public_key(), 0);
        let mut nonces = [0u64; 3];
        for (who, kind, other) in ops {
            let payload = match kind {
                0 => Payload::Deploy { kind: ContractKind::HealthRecord, init_args: deploy_args(&[keys[who].public_key()]) },
                1 => ContractCall::AddReading(Reading { timestamp: 1, heart_rate: 60 }).into_payload(contract),
                2 => ContractCall::Grant { permission: READ_PERMISSION, addr: keys[other].public_key() }.into_payload(contract),
                _ => Payload::Transfer { to: keys[other].public_key(), amount: 12_345 },
            };
            let tx = Transaction::new_signed(&keys[who], nonces[who], 1, payload, GAS);
            if execute_transaction(&mut ws, &tx, &s, ctx).is_ok() {
                nonces[who] += 1;
            }
            prop_assert_eq!(ws.total_balance(), total);
        }
    }
}
