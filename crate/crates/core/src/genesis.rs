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

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{genesis_block, Block, Chain, DEFAULT_MAX_TXS};
use crate::channel::PublicKey;
use crate::codec::{put_len, put_list, put_str, put_u64, Encode};
use crate::hash::hash_of;
use crate::vm::{GasSchedule, WorldState};

pub const DEFAULT_BLOCK_INTERVAL_MS: u64 = 1_000;
pub const DEFAULT_GENESIS_TIME_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Error)]
pub enum GenesisError {
    #[error("reading genesis file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing genesis file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid genesis: {0}")]
    Invalid(&'static str),
}

/// Everything needed to bootstrap a chain. Loaded from JSON; public keys
/// and addresses are hex strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_id: String,
    pub authorities: Vec<PublicKey>,
    #[serde(default)]
    pub initial_balances: BTreeMap<PublicKey, u64>,
    #[serde(default)]
    pub gas_schedule: GasSchedule,
    #[serde(default = "default_interval")]
    pub block_interval_ms: u64,
    #[serde(default = "default_max_txs")]
    pub max_txs: usize,
    #[serde(default = "default_genesis_time")]
    pub genesis_time_ms: u64,
}

fn default_interval() -> u64 {
    DEFAULT_BLOCK_INTERVAL_MS
}

fn default_max_txs() -> usize {
    DEFAULT_MAX_TXS
}

fn default_genesis_time() -> u64 {
    DEFAULT_GENESIS_TIME_MS
}

impl GenesisConfig {
    pub fn new(chain_id: impl Into<String>, authorities: Vec<PublicKey>) -> Self {
        Self {
            chain_id: chain_id.into(),
            authorities,
            initial_balances: BTreeMap::new(),
            gas_schedule: GasSchedule::default(),
            block_interval_ms: DEFAULT_BLOCK_INTERVAL_MS,
            max_txs: DEFAULT_MAX_TXS,
            genesis_time_ms: DEFAULT_GENESIS_TIME_MS,
        }
    }

    pub fn load(path: &Path) -> Result<Self, GenesisError> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GenesisError> {
        if self.authorities.is_empty() {
            return Err(GenesisError::Invalid("authority set is empty"));
        }
        let mut sorted = self.authorities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.authorities.len() {
            return Err(GenesisError::Invalid("duplicate authority"));
        }
        if self.block_interval_ms == 0 {
            return Err(GenesisError::Invalid("block_interval_ms must be positive"));
        }
        if self.max_txs == 0 {
            return Err(GenesisError::Invalid("max_txs must be positive"));
        }
        self.gas_schedule.validate().map_err(GenesisError::Invalid)
    }

    pub fn block(&self) -> Block {
        genesis_block(self.genesis_time_ms, hash_of(self))
    }

    pub fn chain(&self) -> Chain {
        Chain::new(self.block(), self.authorities.clone())
    }

    pub fn world(&self) -> WorldState {
        WorldState::with_balances(self.initial_balances.iter().map(|(k, v)| (*k, *v)))
    }
}

impl Encode for GenesisConfig {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_str(out, &self.chain_id);
        put_list(out, &self.authorities);
        put_len(out, self.initial_balances.len());
        for (pk, amount) in &self.initial_balances {
            pk.encode_to(out);
            put_u64(out, *amount);
        }
        self.gas_schedule.encode_to(out);
        put_u64(out, self.block_interval_ms);
        put_u64(out, self.max_txs as u64);
        put_u64(out, self.genesis_time_ms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genesis_hash_is_stable_and_config_bound() {
        let cfg = GenesisConfig::new("test", vec![PublicKey([1; 32])]);
        assert_eq!(cfg.block().hash(), cfg.clone().block().hash());
        let mut other = cfg.clone();
        other.chain_id = "other".into();
        assert_ne!(cfg.block().hash(), other.block().hash());
        let g = cfg.block();
        assert_eq!(g.header.height, 0);
        assert_eq!(g.header.prev_hash, crate::hash::Digest::ZERO);
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let json = format!(
            r#"{{"chain_id":"c","authorities":["{}"],"initial_balances":{{"{}":5}}}}"#,
            hex::encode([2u8; 32]),
            hex::encode([3u8; 32])
        );
        let cfg: GenesisConfig = serde_json::from_str(&json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.gas_schedule, GasSchedule::default());
        assert_eq!(cfg.max_txs, 500);
        assert_eq!(cfg.initial_balances[&PublicKey([3; 32])], 5);
        let back: GenesisConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_empty_authorities() {
        let cfg = GenesisConfig::new("c", vec![]);
        assert!(cfg.validate().is_err());
    }
}
