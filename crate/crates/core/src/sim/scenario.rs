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

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attack::AttackConfig;
use super::link::LinkModel;
use super::SimError;
use crate::chain::DEFAULT_MAX_TXS;
use crate::genesis::DEFAULT_BLOCK_INTERVAL_MS;
use crate::node::ChannelMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Deploy, periodic patient writes, grant, read, revoke, denied read.
    Lifecycle { writes: usize, period_ms: u64 },
    /// Deploy, then a burst of `tasks` writes spread over nodes and writers.
    Write { tasks: usize },
    /// Deploy, seed writes and a grant, then a burst of `tasks` reads.
    Read { tasks: usize },
    /// Like `Read`, with the measured burst alternating reads and writes.
    Mixed { tasks: usize },
    /// No client traffic; blocks are still produced.
    Idle,
}

impl Workload {
    pub fn name(&self) -> &'static str {
        match self {
            Workload::Lifecycle { .. } => "lifecycle",
            Workload::Write { .. } => "write",
            Workload::Read { .. } => "read",
            Workload::Mixed { .. } => "mixed",
            Workload::Idle => "idle",
        }
    }
}

/// Simulated node-side cost of serving one client envelope. Client
/// envelopes queue FIFO per node; consensus traffic is not queued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceModel {
    pub read_us: u64,
    pub write_us: u64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self { read_us: 1_500, write_us: 1_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub nodes: usize,
    pub seed: u64,
    pub duration_ms: u64,
    pub link: LinkModel,
    pub channel: ChannelMode,
    pub workload: Workload,
    /// Node indices that equivocate as proposers and vote for every proposal.
    pub byzantine: Vec<usize>,
    /// Node indices that never run.
    pub crashed: Vec<usize>,
    pub attack: Option<AttackConfig>,
    pub service: ServiceModel,
    pub block_interval_ms: u64,
    pub max_txs: usize,
    pub client_balance: u64,
    /// Extra writer devices used by write and mixed workloads.
    pub writers: usize,
    pub request_timeout_ms: u64,
    /// End the run `settle_ms` after the workload and attack finish.
    pub stop_when_done: bool,
    pub settle_ms: u64,
    /// Record every send, delivery and drop in the trace.
    pub record_messages: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            seed: 42,
            duration_ms: 20 * 60 * 1000,
            link: LinkModel::default(),
            channel: ChannelMode::Secure,
            workload: Workload::Lifecycle { writes: 10, period_ms: 60_000 },
            byzantine: Vec::new(),
            crashed: Vec::new(),
            attack: None,
            service: ServiceModel::default(),
            block_interval_ms: DEFAULT_BLOCK_INTERVAL_MS,
            max_txs: DEFAULT_MAX_TXS,
            client_balance: 1_000_000_000_000,
            writers: 10,
            request_timeout_ms: 10_000,
            stop_when_done: true,
            settle_ms: 3_000,
            record_messages: false,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if self.nodes == 0 {
            return bad("nodes must be at least 1".into());
        }
        for &i in self.byzantine.iter().chain(&self.crashed) {
            if i >= self.nodes {
                return bad(format!("node index {i} out of range"));
            }
        }
        if self.byzantine.iter().any(|i| self.crashed.contains(i)) {
            return bad("a node cannot be both byzantine and crashed".into());
        }
        if self.crashed.len() == self.nodes {
            return bad("all nodes crashed".into());
        }
        if self.duration_ms == 0 || self.block_interval_ms == 0 || self.max_txs == 0 {
            return bad("duration, block interval and max_txs must be positive".into());
        }
        if let Workload::Lifecycle { period_ms: 0, .. } = self.workload {
            return bad("lifecycle period must be positive".into());
        }
        let needs_writers = matches!(self.workload, Workload::Write { .. } | Workload::Mixed { .. });
        if needs_writers && self.writers == 0 {
            return bad("write workloads need at least one writer".into());
        }
        self.link.validate().map_err(SimError::ConfigInvalid)
    }
}
