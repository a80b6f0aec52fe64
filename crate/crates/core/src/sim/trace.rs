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

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::attack::AttackReport;
use super::link::Class;
use super::Addr;
use crate::channel::PublicKey;
use crate::hash::{sha256, Digest};
use crate::node::{Alert, AlertKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub t_us: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Send { from: Addr, to: Addr, class: Class, msg: &'static str, bytes: usize },
    Deliver { from: Addr, to: Addr, msg: &'static str },
    Drop { from: Addr, to: Addr, msg: &'static str },
    PhaseStart { phase: String },
    PhaseDone { phase: String },
    Request { id: usize, client: usize, node: usize, action: String },
    Response { id: usize, outcome: String },
    Finalized { node: usize, height: u64, hash: Digest, txs: usize },
    Executed { tx_hash: Digest, height: u64, status: String, gas_used: u64 },
    Alert { node: usize, kind: AlertKind, offender: PublicKey, height: u64 },
    Rejected { node: usize, reason: String },
    Attack { id: usize, action: String, node: Option<usize>, outcome: String },
}

/// Lifecycle of one client request. All times are simulated microseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestRecord {
    pub id: usize,
    pub phase: String,
    pub client: usize,
    pub node: usize,
    pub action: String,
    pub created_us: u64,
    pub sent_us: Option<u64>,
    /// Arrival at the node.
    pub received_us: Option<u64>,
    /// Node finished handling the envelope.
    pub served_us: Option<u64>,
    pub accepted_us: Option<u64>,
    /// The receiving node finalized the transaction.
    pub finalized_us: Option<u64>,
    /// Final response arrived at the client.
    pub completed_us: Option<u64>,
    pub outcome: Option<String>,
    pub tx_hash: Option<Digest>,
    pub readings: Option<usize>,
}

impl RequestRecord {
    pub fn is_read(&self) -> bool {
        self.action == "read"
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.outcome.as_deref(), Some("readings" | "success"))
    }

    /// Receipt at the node until the data is recorded (writes) or served
    /// (reads).
    pub fn processing_delay_us(&self) -> Option<u64> {
        let done = if self.is_read() { self.served_us } else { self.finalized_us };
        Some(done?.saturating_sub(self.received_us?))
    }

    /// Client send until the final response.
    pub fn processing_time_us(&self) -> Option<u64> {
        Some(self.completed_us?.saturating_sub(self.sent_us?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseRecord {
    pub name: String,
    pub measured: bool,
    pub started_us: Option<u64>,
    pub completed_us: Option<u64>,
    pub requests: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    Byzantine,
    Crashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub index: usize,
    pub public_key: PublicKey,
    pub behavior: Behavior,
    pub height: u64,
    pub tip_hash: Digest,
    /// Hash over the canonical encoding of every block.
    pub chain_digest: Digest,
    /// Hash of the canonical encoding of the world state.
    pub world_digest: Digest,
    pub state_replay_ok: bool,
    pub links_ok: bool,
    pub alerts: Vec<Alert>,
    pub peer_alerts: usize,
    pub consensus_misbehavior: u64,
    pub mempool: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Still in transit when the run stopped.
    pub in_flight: u64,
    pub sent_by_class: BTreeMap<Class, u64>,
}

impl MessageStats {
    /// Every sent message is delivered, dropped or still in transit.
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.in_flight
    }
}

/// Wall-clock measurements. Not deterministic; kept apart from the trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Measured {
    pub node_compute_ns: u64,
    /// Seal, open and node handling time per request id.
    pub request_compute_ns: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseMetrics {
    pub requests: usize,
    pub succeeded: usize,
    pub delay_mean_us: f64,
    pub time_mean_us: f64,
    pub elapsed_us: u64,
    pub tps: f64,
    pub compute_mean_us: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub seed: u64,
    pub end_us: u64,
    pub events: Vec<TraceEvent>,
    pub requests: Vec<RequestRecord>,
    pub phases: Vec<PhaseRecord>,
    pub nodes: Vec<NodeSummary>,
    pub messages: MessageStats,
    pub attack: Option<AttackReport>,
    pub attacker_key: Option<PublicKey>,
    pub measured: Measured,
}

impl SimTrace {
    /// One JSON object per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_requests_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.requests {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Digest over everything deterministic: events, requests and node
    /// summaries.
    pub fn digest(&self) -> Digest {
        let mut buf = self.to_jsonl().into_bytes();
        buf.extend(serde_json::to_vec(&self.requests).expect("requests serialize"));
        buf.extend(serde_json::to_vec(&self.nodes).expect("summaries serialize"));
        sha256(&buf)
    }

    pub fn honest(&self) -> impl Iterator<Item = &NodeSummary> {
        self.nodes.iter().filter(|n| n.behavior == Behavior::Honest)
    }

    pub fn min_honest_height(&self) -> u64 {
        self.honest().map(|n| n.height).min().unwrap_or(0)
    }

    /// Heights at which two honest nodes finalized different blocks.
    pub fn conflicting_finalizations(&self) -> usize {
        let honest: BTreeSet<usize> = self.honest().map(|n| n.index).collect();
        let mut by_height: BTreeMap<u64, BTreeSet<Digest>> = BTreeMap::new();
        for e in &self.events {
            if let TraceKind::Finalized { node, height, hash, .. } = &e.kind {
                if honest.contains(node) {
                    by_height.entry(*height).or_default().insert(*hash);
                }
            }
        }
        by_height.values().filter(|s| s.len() > 1).count()
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.name == name)
    }

    /// Metrics over the requests of every measured phase.
    pub fn measured_metrics(&self) -> PhaseMetrics {
        let ids: Vec<usize> = self.phases.iter().filter(|p| p.measured).flat_map(|p| p.requests.clone()).collect();
        self.metrics_for(&ids)
    }

    pub fn metrics_for(&self, ids: &[usize]) -> PhaseMetrics {
        let reqs: Vec<&RequestRecord> = ids.iter().map(|&i| &self.requests[i]).collect();
        let ok: Vec<&RequestRecord> = reqs.iter().copied().filter(|r| r.succeeded()).collect();
        let mean = |xs: Vec<u64>| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<u64>() as f64 / xs.len() as f64
            }
        };
        let delay = mean(ok.iter().filter_map(|r| r.processing_delay_us()).collect());
        let time = mean(ok.iter().filter_map(|r| r.processing_time_us()).collect());
        let first = ok.iter().filter_map(|r| r.sent_us).min();
        let last = ok.iter().filter_map(|r| r.completed_us).max();
        let elapsed = match (first, last) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        };
        let tps = if elapsed == 0 { 0.0 } else { ok.len() as f64 / (elapsed as f64 / 1e6) };
        let compute = mean(
            ids.iter()
                .filter_map(|&i| self.measured.request_compute_ns.get(i).copied())
                .collect(),
        ) / 1_000.0;
        PhaseMetrics {
            requests: reqs.len(),
            succeeded: ok.len(),
            delay_mean_us: delay,
            time_mean_us: time,
            elapsed_us: elapsed,
            tps,
            compute_mean_us: compute,
        }
    }
}
