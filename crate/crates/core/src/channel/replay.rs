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

use thiserror::Error;

use super::{ChannelMessage, PublicKey};

pub const DEFAULT_CLOCK_SKEW_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReplayReject {
    #[error("nonce {nonce} already used (last accepted {last})")]
    NonceReplayed { nonce: u64, last: u64 },
    #[error("nonce {nonce} skips ahead of expected {expected}")]
    NonceGap { nonce: u64, expected: u64 },
    #[error("timestamp {timestamp} outside tolerance at {now}")]
    StaleTimestamp { timestamp: u64, now: u64 },
}

/// Highest accepted nonce per sender. Single writer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayState {
    last_nonce: BTreeMap<PublicKey, u64>,
    pub clock_skew_tolerance_ms: u64,
}

impl Default for ReplayState {
    fn default() -> Self {
        Self::new(DEFAULT_CLOCK_SKEW_MS)
    }
}

impl ReplayState {
    pub fn new(clock_skew_tolerance_ms: u64) -> Self {
        Self { last_nonce: BTreeMap::new(), clock_skew_tolerance_ms }
    }

    pub fn last_nonce(&self, sender: &PublicKey) -> u64 {
        self.last_nonce.get(sender).copied().unwrap_or(0)
    }

    pub fn expected_nonce(&self, sender: &PublicKey) -> u64 {
        self.last_nonce(sender) + 1
    }

    /// Accepts `m` iff its nonce is exactly the next one for its sender and
    /// its timestamp is within tolerance of `now` (both unix ms).
    pub fn check_and_record(&mut self, m: &ChannelMessage, now: u64) -> Result<(), ReplayReject> {
        let last = self.last_nonce(&m.identification);
        if m.nonce <= last {
            return Err(ReplayReject::NonceReplayed { nonce: m.nonce, last });
        }
        if m.nonce != last + 1 {
            return Err(ReplayReject::NonceGap { nonce: m.nonce, expected: last + 1 });
        }
        if m.timestamp.abs_diff(now) > self.clock_skew_tolerance_ms {
            return Err(ReplayReject::StaleTimestamp { timestamp: m.timestamp, now });
        }
        self.last_nonce.insert(m.identification, m.nonce);
        Ok(())
    }
}
