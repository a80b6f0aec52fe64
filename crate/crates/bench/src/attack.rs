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

//! Attack runs checked against the defenses they should trigger.

use edgelinker_core::sim::attack::{evaluate, AttackConfig, AttackKind, Check};
use edgelinker_core::sim::scenario::{ScenarioConfig, Workload};
use edgelinker_core::sim::trace::SimTrace;
use edgelinker_core::sim::{inject_attack, run_scenario, SimError};

/// Default scenario for attack runs: four nodes, a short patient
/// lifecycle, and a fixed duration so baseline and attack runs cover the
/// same span of virtual time.
pub fn attack_scenario() -> ScenarioConfig {
    ScenarioConfig {
        nodes: 4,
        workload: Workload::Lifecycle { writes: 20, period_ms: 1_500 },
        duration_ms: 90_000,
        stop_when_done: false,
        ..ScenarioConfig::default()
    }
}

pub struct AttackRun {
    pub trace: SimTrace,
    pub baseline: Option<SimTrace>,
    pub checks: Vec<Check>,
}

impl AttackRun {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }
}

fn needs_baseline(kind: AttackKind) -> bool {
    matches!(kind, AttackKind::Eavesdrop | AttackKind::Insertion)
}

/// Runs `attack` on `config` and, where the checks need one, an
/// attack-free baseline at the same seed.
pub fn run_attack(config: &ScenarioConfig, attack: AttackConfig, seed: u64) -> Result<AttackRun, SimError> {
    let mut cfg = ScenarioConfig { attack: None, ..config.clone() };
    let baseline = if needs_baseline(attack.kind()) {
        // Compare equal spans of virtual time.
        cfg.stop_when_done = false;
        Some(run_scenario(&cfg, seed)?)
    } else {
        None
    };
    let trace = inject_attack(&cfg, attack, seed)?;
    let checks = evaluate(&trace, baseline.as_ref());
    Ok(AttackRun { trace, baseline, checks })
}

/// Attack config for `kind`: the scenario's own if it names the same
/// kind, otherwise the defaults.
pub fn attack_for(kind: AttackKind, config: &ScenarioConfig) -> AttackConfig {
    match &config.attack {
        Some(a) if a.kind() == kind => a.clone(),
        _ => AttackConfig::default_for(kind),
    }
}
