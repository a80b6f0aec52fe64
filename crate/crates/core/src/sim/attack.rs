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

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::trace::{Behavior, SimTrace};
use crate::node::AlertKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Replay,
    Eavesdrop,
    Insertion,
    Dos,
    Spoof,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] =
        [AttackKind::Replay, AttackKind::Eavesdrop, AttackKind::Insertion, AttackKind::Dos, AttackKind::Spoof];
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Replay => "replay",
            AttackKind::Eavesdrop => "eavesdrop",
            AttackKind::Insertion => "insertion",
            AttackKind::Dos => "dos",
            AttackKind::Spoof => "spoof",
        })
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    /// Capture the first `captures` client envelopes and re-send each to
    /// its original node, at least `spacing_ms` apart.
    Replay { captures: usize, spacing_ms: u64 },
    /// Record up to `max_taps` client-side envelopes and try to open them
    /// offline without the right key.
    Eavesdrop { max_taps: usize },
    /// A non-authority pushes forged blocks to every node.
    Insertion { attempts: usize, interval_ms: u64 },
    /// A funded key without write permission floods `add_reading` calls.
    DosFlood { balance: u64, calls: usize, interval_ms: u64 },
    /// Envelopes with forged identities or transaction senders.
    Spoof { attempts: usize, interval_ms: u64 },
}

impl AttackConfig {
    pub fn default_for(kind: AttackKind) -> Self {
        match kind {
            AttackKind::Replay => AttackConfig::Replay { captures: 10, spacing_ms: 1_500 },
            AttackKind::Eavesdrop => AttackConfig::Eavesdrop { max_taps: 10_000 },
            AttackKind::Insertion => AttackConfig::Insertion { attempts: 10, interval_ms: 2_500 },
            AttackKind::Dos => AttackConfig::DosFlood { balance: 1_000_000, calls: 30, interval_ms: 20 },
            AttackKind::Spoof => AttackConfig::Spoof { attempts: 30, interval_ms: 500 },
        }
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            AttackConfig::Replay { .. } => AttackKind::Replay,
            AttackConfig::Eavesdrop { .. } => AttackKind::Eavesdrop,
            AttackConfig::Insertion { .. } => AttackKind::Insertion,
            AttackConfig::DosFlood { .. } => AttackKind::Dos,
            AttackConfig::Spoof { .. } => AttackKind::Spoof,
        }
    }
}

/// One attacker action and how the target responded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackRecord {
    pub id: usize,
    pub action: String,
    pub node: Option<usize>,
    pub sent_us: u64,
    pub outcome: Option<String>,
    pub rejected: Option<bool>,
    pub state_changed: Option<bool>,
    pub alert_raised: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub records: Vec<AttackRecord>,
    pub eavesdrop_attempts: usize,
    pub eavesdrop_successes: usize,
    pub dos_processed: u64,
    pub dos_expected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), pass, detail }
    }
}

/// Checks an attack run against the defenses it should trigger. Eavesdrop
/// and insertion runs are compared with an attack-free `baseline` at the
/// same seed.
pub fn evaluate(trace: &SimTrace, baseline: Option<&SimTrace>) -> Vec<Check> {
    let Some(report) = &trace.attack else {
        return vec![Check::new("attack ran", false, "trace has no attack report".into())];
    };
    let mut checks = Vec::new();
    let honest: Vec<_> = trace.nodes.iter().filter(|n| n.behavior == Behavior::Honest).collect();
    checks.push(Check::new(
        "state replay integrity",
        honest.iter().all(|n| n.state_replay_ok),
        format!("{} honest nodes", honest.len()),
    ));
    let records = &report.records;
    match report.kind {
        AttackKind::Replay => {
            let finished = records.iter().filter(|r| r.outcome.is_some()).count();
            checks.push(Check::new(
                "every replay processed",
                !records.is_empty() && finished == records.len(),
                format!("{finished}/{} replays reached a node", records.len()),
            ));
            let rejected = records
                .iter()
                .filter(|r| r.outcome.as_deref().is_some_and(|o| o.contains("already used")))
                .count();
            checks.push(Check::new(
                "replays rejected as used nonces",
                rejected == records.len(),
                format!("{rejected}/{}", records.len()),
            ));
            let changed = records.iter().filter(|r| r.state_changed != Some(false)).count();
            checks.push(Check::new("no state changes", changed == 0, format!("{changed} replays changed state")));
            let alerted = records.iter().filter(|r| r.alert_raised == Some(true)).count();
            checks.push(Check::new(
                "replay alert per envelope",
                alerted == records.len(),
                format!("{alerted}/{} with a ReplayDetected alert", records.len()),
            ));
        }
        AttackKind::Eavesdrop => {
            checks.push(Check::new(
                "offline opens fail",
                report.eavesdrop_attempts > 0 && report.eavesdrop_successes == 0,
                format!("{} of {} opened", report.eavesdrop_successes, report.eavesdrop_attempts),
            ));
            checks.push(same_as_baseline(trace, baseline, true));
        }
        AttackKind::Insertion => {
            let attacker = trace.attacker_key;
            let alerted = honest
                .iter()
                .filter(|n| n.alerts.iter().any(|a| a.kind == AlertKind::InvalidBlock && Some(a.offender) == attacker))
                .count();
            checks.push(Check::new(
                "every honest node alerts",
                alerted == honest.len(),
                format!("{alerted}/{} honest nodes raised InvalidBlock", honest.len()),
            ));
            checks.push(same_as_baseline(trace, baseline, false));
        }
        AttackKind::Dos => {
            checks.push(Check::new(
                "denied calls drain balance",
                report.dos_processed == report.dos_expected,
                format!("processed {} expected {}", report.dos_processed, report.dos_expected),
            ));
        }
        AttackKind::Spoof => {
            let rejected = records.iter().filter(|r| r.rejected == Some(true)).count();
            checks.push(Check::new(
                "spoofed envelopes rejected",
                !records.is_empty() && rejected == records.len(),
                format!("{rejected}/{}", records.len()),
            ));
            let changed = records.iter().filter(|r| r.state_changed != Some(false)).count();
            checks.push(Check::new("no state changes", changed == 0, format!("{changed} spoofs changed state")));
        }
    }
    checks
}

fn same_as_baseline(trace: &SimTrace, baseline: Option<&SimTrace>, world_too: bool) -> Check {
    let Some(base) = baseline else {
        return Check::new("matches attack-free baseline", false, "no baseline run".into());
    };
    let mut mismatched = Vec::new();
    for (a, b) in trace.nodes.iter().zip(&base.nodes) {
        if a.behavior != Behavior::Honest {
            continue;
        }
        if a.chain_digest != b.chain_digest || (world_too && a.world_digest != b.world_digest) {
            mismatched.push(a.index);
        }
    }
    Check::new(
        "matches attack-free baseline",
        mismatched.is_empty() && trace.nodes.len() == base.nodes.len(),
        if mismatched.is_empty() {
            "honest chains byte-identical".into()
        } else {
            format!("nodes {mismatched:?} differ")
        },
    )
}
