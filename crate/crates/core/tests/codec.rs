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

//! Canonical encoding: injectivity, round trips and signature coverage.

use std::collections::HashSet;

use edgelinker_core::chain::{build_block, validate_block, ContractKind, Payload, Query, Transaction};
use edgelinker_core::channel::{KeyPair, PublicKey};
use edgelinker_core::codec::{Decode, Encode};
use edgelinker_core::genesis::GenesisConfig;
use edgelinker_core::hash::Digest;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_payload(rng: &mut ChaCha8Rng) -> Payload {
    let bytes = |rng: &mut ChaCha8Rng| (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect::<Vec<u8>>();
    match rng.gen_range(0..4) {
        0 => Payload::Transfer { to: PublicKey(rng.gen()), amount: rng.gen() },
        1 => Payload::Deploy { kind: ContractKind::HealthRecord, init_args: bytes(rng) },
        2 => Payload::Call {
            contract: Digest(rng.gen()),
            method: ["add_reading", "grant", "revoke", "read_history", ""][rng.gen_range(0..5)].to_string(),
            args: bytes(rng),
        },
        _ => Payload::Query(Query { contract: Digest(rng.gen()), from_ts: rng.gen(), to_ts: rng.gen() }),
    }
}

fn random_tx(rng: &mut ChaCha8Rng, keys: &[KeyPair]) -> Transaction {
    let key = &keys[rng.gen_range(0..keys.len())];
    let nonce = rng.gen_range(0..4);
    let ts = rng.gen_range(0..4);
    let payload = random_payload(rng);
    Transaction::new_signed(key, nonce, ts, payload, rng.gen_range(0..3))
}

#[test]
fn ten_thousand_transactions_encode_injectively() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let keys: Vec<KeyPair> = (0..4).map(|i| KeyPair::from_seed([i; 32])).collect();
    let mut by_encoding = std::collections::HashMap::new();
    let mut hashes = HashSet::new();
    for _ in 0..10_000 {
        let tx = random_tx(&mut rng, &keys);
        let bytes = tx.encode();
        assert_eq!(Transaction::decode(&bytes).unwrap(), tx);
        if let Some(prev) = by_encoding.insert(bytes, tx.clone()) {
            assert_eq!(prev, tx, "two transactions share an encoding");
        } else {
            assert!(hashes.insert(tx.hash()), "distinct transactions share a hash");
        }
    }
}

/// Every field change must break the signature and change the hash.
#[test]
fn any_field_mutation_invalidates_signature() {
    let key = KeyPair::from_seed([9; 32]);
    let tx = Transaction::new_signed(
        &key,
        3,
        1_000,
        Payload::Call { contract: Digest([1; 32]), method: "add_reading".into(), args: vec![1, 2, 3] },
        50_000,
    );
    assert!(tx.verify_signature());
    let mut mutants: Vec<(&str, Transaction)> = Vec::new();
    let mut m = tx.clone();
    m.sender = KeyPair::from_seed([8; 32]).public_key();
    mutants.push(("sender", m));
    let mut m = tx.clone();
    m.nonce += 1;
    mutants.push(("nonce", m));
    let mut m = tx.clone();
    m.timestamp += 1;
    mutants.push(("timestamp", m));
    let mut m = tx.clone();
    m.gas_limit -= 1;
    mutants.push(("gas_limit", m));
    for (name, payload) in [
        ("contract", Payload::Call { contract: Digest([2; 32]), method: "add_reading".into(), args: vec![1, 2, 3] }),
        ("method", Payload::Call { contract: Digest([1; 32]), method: "grant".into(), args: vec![1, 2, 3] }),
        ("args", Payload::Call { contract: Digest([1; 32]), method: "add_reading".into(), args: vec![1, 2, 4] }),
    ] {
        let mut m = tx.clone();
        m.payload = payload;
        mutants.push((name, m));
    }
    for byte in 0..64 {
        let mut m = tx.clone();
        m.signature.0[byte] ^= 0x01;
        mutants.push(("signature", m));
    }
    for (name, m) in &mutants {
        assert!(!m.verify_signature(), "{name} mutation still verifies");
        assert_ne!(m.hash(), tx.hash(), "{name} mutation keeps the hash");
    }
}

#[test]
fn tampering_with_an_included_tx_breaks_the_block() {
    let p = KeyPair::from_seed([1; 32]);
    let chain = GenesisConfig::new("t", vec![p.public_key()]).chain();
    let user = KeyPair::from_seed([2; 32]);
    let txs: Vec<Transaction> =
        (0..3).map(|n| Transaction::new_signed(&user, n, 5, Payload::Transfer { to: p.public_key(), amount: 1 }, 21_000)).collect();
    let b = build_block(&txs, chain.tip(), &p, &chain.authority_set, chain.tip().header.timestamp + 1, 500).unwrap();
    assert!(validate_block(&b, chain.tip(), &chain.authority_set).is_valid());
    for i in 0..txs.len() {
        let mut bad = b.clone();
        bad.transactions[i].nonce += 10;
        assert!(!validate_block(&bad, chain.tip(), &chain.authority_set).is_valid());
    }
}

fn payload_strategy() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (any::<[u8; 32]>(), any::<u64>()).prop_map(|(to, amount)| Payload::Transfer { to: PublicKey(to), amount }),
        prop::collection::vec(any::<u8>(), 0..64)
            .prop_map(|init_args| Payload::Deploy { kind: ContractKind::HealthRecord, init_args }),
        (any::<[u8; 32]>(), "[a-z_]{0,16}", prop::collection::vec(any::<u8>(), 0..64))
            .prop_map(|(c, method, args)| Payload::Call { contract: Digest(c), method, args }),
        (any::<[u8; 32]>(), any::<u64>(), any::<u64>())
            .prop_map(|(c, from_ts, to_ts)| Payload::Query(Query { contract: Digest(c), from_ts, to_ts })),
    ]
}

proptest! {
    #[test]
    fn payload_round_trips(p in payload_strategy()) {
        prop_assert_eq!(Payload::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn distinct_payloads_encode_differently(a in payload_strategy(), b in payload_strategy()) {
        prop_assert_eq!(a == b, a.encode() == b.encode());
    }

    #[test]
    fn truncated_encodings_fail(p in payload_strategy(), cut in 1usize..8) {
        let bytes = p.encode();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(Payload::decode(&bytes[..keep]).is_err());
    }
}
