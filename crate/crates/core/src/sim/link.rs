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

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Addr;
use crate::hash::sha256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_latency_us: u64,
    /// Upper bound of a uniform extra delay.
    pub jitter_us: u64,
    pub drop_probability: f64,
    /// Unordered node index pairs that cannot reach each other.
    pub partitions: Vec<(usize, usize)>,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { base_latency_us: 1_000, jitter_us: 200, drop_probability: 0.0, partitions: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Scheduled(u64),
    Dropped,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!("drop_probability {} outside [0, 1]", self.drop_probability));
        }
        Ok(())
    }

    pub fn is_partitioned(&self, from: Addr, to: Addr) -> bool {
        let (Addr::Node(a), Addr::Node(b)) = (from, to) else {
            return false;
        };
        self.partitions.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }

    /// Arrival time for a message sent at `now`, or `Dropped`.
    pub fn deliver<R: Rng>(&self, from: Addr, to: Addr, now: u64, rng: &mut R) -> Delivery {
        if self.is_partitioned(from, to) {
            return Delivery::Dropped;
        }
        let jitter = if self.jitter_us == 0 { 0 } else { rng.gen_range(0..=self.jitter_us) };
        if self.drop_probability > 0.0 && rng.gen_bool(self.drop_probability) {
            return Delivery::Dropped;
        }
        Delivery::Scheduled(now + self.base_latency_us + jitter)
    }
}

/// Traffic class. Each `(from, to, class)` triple draws from its own RNG
/// stream, so attack and alert traffic never shifts honest delivery times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Honest,
    Alert,
    Attack,
}

pub struct Streams {
    seed: u64,
    rngs: BTreeMap<(Addr, Addr, Class), ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed, rngs: BTreeMap::new() }
    }

    pub fn get(&mut self, from: Addr, to: Addr, class: Class) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.rngs.entry((from, to, class)).or_insert_with(|| {
            let label = format!("link/{seed}/{from}/{to}/{class:?}");
            ChaCha8Rng::from_seed(sha256(label.as_bytes()).0)
        })
    }
}
