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

//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Every tolerance and budget is fixed here.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use edgelinker_bench::attack::{attack_scenario, run_attack};
use edgelinker_bench::overhead::{loglog_slope, DEFAULT_SIZES, MIN_SAMPLES};
use edgelinker_bench::run::{non_timing_columns, run_plan, RunPlan, WorkloadKind};
use edgelinker_core::channel::{derive_shared_key, open_message, seal_message_with_rng, ChannelMessage, KeyPair, SecureEnvelope};
use edgelinker_core::sim::attack::{AttackConfig, AttackKind};
use edgelinker_core::sim::scenario::{ScenarioConfig, Workload};
use edgelinker_core::sim::trace::{SimTrace, TraceKind};
use edgelinker_core::sim::run_scenario;
use edgelinker_core::vm::{PermissionId, PermissionTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const C1_BUDGET: Duration = Duration::from_secs(5);
const C2_BUDGET: Duration = Duration::from_secs(60);
const C4_BUDGET: Duration = Duration::from_secs(300);
const ADD_DATA_GAS: u64 = 48_182;
/// Upper bound on the log-log slope of overhead against size.
const MAX_OVERHEAD_SLOPE: f64 = 1.1;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, err: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(err.into())
    }
}

fn within(budget: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    check(
        took < budget,
        format!("{detail}; {:.2}s < {}s", took.as_secs_f64(), budget.as_secs()),
        format!("{detail}; took {:.2}s, budget {}s", took.as_secs_f64(), budget.as_secs()),
    )
}

/// Every honest node's world equals a replay of its chain.
fn replay_ok(t: &SimTrace) -> bool {
    t.honest().all(|n| n.state_replay_ok)
}

// ---- 1: permission table against a set-replay oracle ----

fn c1_permissions() -> Outcome {
    let started = Instant::now();
    let pks: Vec<_> = (0..6u8).map(|i| KeyPair::from_seed([i + 1; 32]).public_key()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut mismatches, mut guard_mutations, mut ops) = (0usize, 0usize, 0usize);
    for _ in 0..1_000 {
        let deployer = rng.gen_range(0..pks.len());
        let mut table = PermissionTable::initialize(pks[deployer]);
        let mut oracle: BTreeSet<(u8, usize)> = BTreeSet::from([(0, deployer)]);
        for _ in 0..rng.gen_range(1..60) {
            ops += 1;
            let (caller, addr, perm) = (rng.gen_range(0..pks.len()), rng.gen_range(0..pks.len()), rng.gen_range(0..4u8));
            let id = PermissionId::from_u8(perm);
            let allowed = oracle.contains(&(0, caller));
            let before = table.clone();
            match rng.gen_range(0..3) {
                0 => {
                    let res = table.grant_permission(&pks[caller], id, pks[addr]);
                    if allowed {
                        oracle.insert((perm, addr));
                    }
                    mismatches += usize::from(res.is_ok() != allowed);
                    guard_mutations += usize::from(!allowed && table != before);
                }
                1 => {
                    let res = table.revoke_permission(&pks[caller], id, &pks[addr]);
                    if allowed {
                        oracle.remove(&(perm, addr));
                    }
                    mismatches += usize::from(res.is_ok() != allowed);
                    guard_mutations += usize::from(!allowed && table != before);
                }
                _ => {
                    mismatches += usize::from(table.has_permission(id, &pks[addr]) != oracle.contains(&(perm, addr)));
                }
            }
        }
        for perm in 0..4u8 {
            for (a, pk) in pks.iter().enumerate() {
                mismatches += usize::from(table.has_permission(PermissionId::from_u8(perm), pk) != oracle.contains(&(perm, a)));
            }
        }
    }
    if mismatches + guard_mutations > 0 {
        return Err(format!("{mismatches} mismatches, {guard_mutations} guard violations mutated state"));
    }
    within(C1_BUDGET, started, format!("1000 sequences, {ops} ops, 0 mismatches"))
}

// ---- 2: channel round trips, bit flips, key agreement ----

fn c2_channel() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failed_trips = 0;
    for i in 0..10_000u64 {
        let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let body: Vec<u8> = (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect();
        let m = ChannelMessage { timestamp: i, nonce: i + 1, identification: a.public_key(), body };
        let env = seal_message_with_rng(&m, &a, &b.public_key(), &mut rng).unwrap();
        let back = SecureEnvelope::from_bytes(&env.to_bytes()).and_then(|e| open_message(&e, &b, &e.sender_hint));
        failed_trips += usize::from(back.as_ref() != Ok(&m));
    }

    let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
    let probe = |len: usize, rng: &mut ChaCha8Rng| {
        let m = ChannelMessage { timestamp: 1, nonce: 1, identification: a.public_key(), body: vec![7; len] };
        seal_message_with_rng(&m, &a, &b.public_key(), rng).unwrap().to_bytes()
    };
    let base = probe(0, &mut rng).len();
    let bytes = probe(256 - base, &mut rng);
    let mut accepted = 0;
    for bit in 0..bytes.len() * 8 {
        let mut f = bytes.clone();
        f[bit / 8] ^= 1 << (bit % 8);
        if let Ok(e) = SecureEnvelope::from_bytes(&f) {
            accepted += usize::from(open_message(&e, &b, &e.sender_hint).is_ok());
        }
    }

    let mut asymmetric = 0;
    for _ in 0..1_000 {
        let (x, y) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        asymmetric += usize::from(
            derive_shared_key(&x, &y.public_key()).unwrap().0 != derive_shared_key(&y, &x.public_key()).unwrap().0,
        );
    }
    if failed_trips + accepted + asymmetric > 0 || bytes.len() != 256 {
        return Err(format!(
            "{failed_trips} failed round trips, {accepted}/{} flips accepted on {} bytes, {asymmetric} asymmetric keys",
            bytes.len() * 8,
            bytes.len()
        ));
    }
    within(C2_BUDGET, started, "10000 round trips, 2048/2048 flips rejected, 1000 symmetric pairs".into())
}

// ---- 3: replay defense ----

fn c3_replay(replays: &mut Vec<bool>) -> Outcome {
    let cfg = ScenarioConfig {
        nodes: 4,
        workload: Workload::Lifecycle { writes: 1_000, period_ms: 1_500 },
        duration_ms: 3 * 60 * 60 * 1_000,
        stop_when_done: true,
        ..ScenarioConfig::default()
    };
    let run = run_attack(&cfg, AttackConfig::Replay { captures: 1_000, spacing_ms: 1_500 }, 42).map_err(|e| e.to_string())?;
    replays.push(replay_ok(&run.trace));
    let report = run.trace.attack.as_ref().ok_or("no attack report")?;
    let n = report.records.len();
    let changed = report.records.iter().filter(|r| r.state_changed != Some(false)).count();
    let alerted = report.records.iter().filter(|r| r.alert_raised == Some(true)).count();
    let failing: Vec<_> = run.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    check(
        n == 1_000 && changed == 0 && alerted == n && failing.is_empty(),
        format!("{n} replays, 0 state changes, {alerted} with ReplayDetected"),
        format!("{n} replays, {changed} changed state, {alerted} alerted; {failing:?}"),
    )
}

// ---- 4: consensus safety and liveness ----

fn c4_consensus(replays: &mut Vec<bool>) -> Outcome {
    let started = Instant::now();
    let sizes = [4usize, 7, 10];
    let safety: Vec<(usize, usize, bool, u64)> = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let n = sizes[i % 3];
            let f = (n - 1) / 3;
            let byzantine: Vec<usize> = (0..f).map(|k| (i + 3 * k) % n).collect();
            let cfg = ScenarioConfig {
                nodes: n,
                byzantine,
                workload: Workload::Write { tasks: 20 },
                duration_ms: 15_000,
                stop_when_done: false,
                ..ScenarioConfig::default()
            };
            let t = run_scenario(&cfg, 1_000 + i as u64).expect("valid scenario");
            (n, t.conflicting_finalizations(), replay_ok(&t), t.min_honest_height())
        })
        .collect();
    let conflicts: usize = safety.iter().map(|s| s.1).sum();
    replays.extend(safety.iter().map(|s| s.2));
    let min_byz_height = safety.iter().map(|s| s.3).min().unwrap_or(0);

    let liveness: Vec<(usize, u64, bool)> = sizes
        .par_iter()
        .map(|&n| {
            let f = (n - 1) / 3;
            let cfg = ScenarioConfig {
                nodes: n,
                crashed: (0..f).map(|k| (1 + 2 * k) % n).collect(),
                workload: Workload::Idle,
                duration_ms: 10 * 60 * 1_000,
                ..ScenarioConfig::default()
            };
            let t = run_scenario(&cfg, 7 + n as u64).expect("valid scenario");
            (n, t.min_honest_height(), replay_ok(&t) && t.conflicting_finalizations() == 0)
        })
        .collect();
    replays.extend(liveness.iter().map(|l| l.2));
    let growth: Vec<String> = liveness.iter().map(|(n, h, _)| format!("n={n}:{h}")).collect();
    if conflicts > 0 || liveness.iter().any(|l| l.1 < 50 || !l.2) {
        return Err(format!("{conflicts} conflicting finalizations over 100 runs; crash-run heights {growth:?} (need >= 50)"));
    }
    within(
        C4_BUDGET,
        started,
        format!("100 equivocation runs, 0 conflicts (min height {min_byz_height}); f crashed, 10 min: {}", growth.join(" ")),
    )
}

// ---- 5: insertion attack ----

fn c5_insertion(replays: &mut Vec<bool>) -> Outcome {
    let run = run_attack(&attack_scenario(), AttackConfig::default_for(AttackKind::Insertion), 42).map_err(|e| e.to_string())?;
    replays.push(replay_ok(&run.trace));
    let base = run.baseline.as_ref().ok_or("no baseline")?;
    let identical = run.trace.honest().zip(base.honest()).all(|(a, b)| a.chain_digest == b.chain_digest);
    let failing: Vec<_> = run.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    check(
        identical && failing.is_empty(),
        format!("honest chains byte-identical to baseline at height {}", run.trace.min_honest_height()),
        format!("identical={identical}; {failing:?}"),
    )
}

// ---- 6: gas and fees ----

fn c6_gas(replays: &mut Vec<bool>) -> Outcome {
    let cfg = ScenarioConfig {
        nodes: 4,
        workload: Workload::Lifecycle { writes: 5, period_ms: 1_000 },
        duration_ms: 120_000,
        ..ScenarioConfig::default()
    };
    let t = run_scenario(&cfg, 5).map_err(|e| e.to_string())?;
    replays.push(replay_ok(&t));
    let expected = [("deploy", 701_382u64), ("write", ADD_DATA_GAS), ("grant", 23_521), ("revoke", 21_948)];
    let mut seen = Vec::new();
    for (action, gas) in expected {
        let hashes: BTreeSet<_> = t.requests.iter().filter(|r| r.action == action).filter_map(|r| r.tx_hash).collect();
        let used: BTreeSet<u64> = t
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                TraceKind::Executed { tx_hash, gas_used, status, .. } if hashes.contains(tx_hash) && status == "success" => {
                    Some(*gas_used)
                }
                _ => None,
            })
            .collect();
        if used != BTreeSet::from([gas]) {
            return Err(format!("{action}: receipts report {used:?}, expected {gas}"));
        }
        seen.push(format!("{action}={gas}"));
    }

    let mut drains = Vec::new();
    for (balance, calls) in [(1_000_000u64, 30usize), (5_000_000, 120)] {
        let attack = AttackConfig::DosFlood { balance, calls, interval_ms: 20 };
        let run = run_attack(&attack_scenario(), attack, 42).map_err(|e| e.to_string())?;
        replays.push(replay_ok(&run.trace));
        let report = run.trace.attack.as_ref().ok_or("no attack report")?;
        let want = balance / ADD_DATA_GAS;
        if report.dos_processed != want {
            return Err(format!("balance {balance}: drained {} calls, expected {want}", report.dos_processed));
        }
        drains.push(format!("{balance}->{want}"));
    }
    Ok(format!("receipts {}; DoS drains {}", seen.join(" "), drains.join(" ")))
}

// ---- 7: determinism of the run command ----

fn c7_determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("edgelinker-acceptance-{}", std::process::id()));
    let run = |sub: &str| -> Result<(String, String), String> {
        let out = dir.join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_edgelinker"))
            .args(["run", "--nodes", "1,4", "--tasks", "40,80", "--reps", "2", "--workload", "mixed", "--seed", "42"])
            .arg("--out")
            .arg(&out)
            .env_remove(edgelinker_bench::SEED_ENV)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run exited {}: {}", status.status, String::from_utf8_lossy(&status.stderr)));
        }
        let csv = std::fs::read_to_string(out.join("run_mixed_secure.csv")).map_err(|e| e.to_string())?;
        let tips = {
            let mut rdr = csv::Reader::from_reader(csv.as_bytes());
            let idx = rdr.headers().map_err(|e| e.to_string())?.iter().position(|h| h == "tip_hash").ok_or("no tip_hash")?;
            rdr.records().map(|r| r.map(|r| r[idx].to_string())).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?.join("|")
        };
        Ok((non_timing_columns(&csv).map_err(|e| e.to_string())?, tips))
    };
    let a = run("a")?;
    let b = run("b")?;
    let _ = std::fs::remove_dir_all(&dir);
    check(
        a == b && !a.1.is_empty(),
        format!("non-timing columns and tip hashes identical ({} bytes)", a.0.len()),
        "two runs differ",
    )
}

// ---- 8: read throughput trend ----

fn c8_read_trend(replays: &mut Vec<bool>) -> Outcome {
    let plan = RunPlan {
        node_counts: vec![1, 5, 10, 15, 20],
        task_counts: vec![500],
        repetitions: 5,
        workload: WorkloadKind::Read,
        ..RunPlan::default()
    };
    let rows = run_plan(&plan)?;
    replays.extend(rows.iter().map(|r| r.state_replay_ok));
    let tps: Vec<f64> = rows.iter().map(|r| r.sim_throughput_tps_mean).collect();
    let shown: Vec<String> = rows.iter().zip(&tps).map(|(r, t)| format!("{}:{t:.0}", r.nodes)).collect();
    check(
        tps.windows(2).all(|w| w[1] > w[0]),
        format!("read TPS strictly increasing {}", shown.join(" < ")),
        format!("read TPS not strictly increasing: {}", shown.join(", ")),
    )
}

// ---- 9: state replay integrity ----

fn c9_state_replay(replays: &mut Vec<bool>) -> Outcome {
    for (i, w) in [
        Workload::Write { tasks: 50 },
        Workload::Read { tasks: 50 },
        Workload::Mixed { tasks: 50 },
        Workload::Lifecycle { writes: 10, period_ms: 800 },
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = ScenarioConfig { nodes: 5, workload: w, ..ScenarioConfig::default() };
        replays.push(replay_ok(&run_scenario(&cfg, 300 + i as u64).map_err(|e| e.to_string())?));
    }
    for kind in [AttackKind::Eavesdrop, AttackKind::Spoof, AttackKind::Replay] {
        let run = run_attack(&attack_scenario(), AttackConfig::default_for(kind), 42).map_err(|e| e.to_string())?;
        replays.push(replay_ok(&run.trace));
    }
    let bad = replays.iter().filter(|ok| !**ok).count();
    check(
        bad == 0 && !replays.is_empty(),
        format!("{} scenarios, every honest node replays to its live state", replays.len()),
        format!("{bad} of {} scenarios diverge", replays.len()),
    )
}

// ---- 10: channel overhead report ----

fn c10_overhead() -> Outcome {
    let sizes: Vec<String> = DEFAULT_SIZES.iter().map(|s| s.to_string()).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_edgelinker"))
        .args(["channel-overhead", "--samples", &MIN_SAMPLES.max(200).to_string(), "--sizes", &sizes.join(",")])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("channel-overhead exited {}", out.status));
    }
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<edgelinker_bench::overhead::OverheadRecord> = rdr
        .records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            let f = |i: usize| r[i].parse::<f64>().map_err(|e| e.to_string());
            Ok(edgelinker_bench::overhead::OverheadRecord {
                size_bytes: r[0].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
                samples: r[1].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
                plain_wire_bytes: r[2].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
                secure_wire_bytes: r[3].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
                measured_plain_mean_us: f(4)?,
                measured_plain_p99_us: f(5)?,
                measured_secure_mean_us: f(6)?,
                measured_secure_p99_us: f(7)?,
                measured_overhead_mean_us: f(8)?,
                measured_overhead_p99_us: f(9)?,
            })
        })
        .collect::<Result<_, String>>()?;
    if rows.len() != DEFAULT_SIZES.len() {
        return Err(format!("{} rows for {} sizes", rows.len(), DEFAULT_SIZES.len()));
    }
    let nonpositive: Vec<usize> = rows.iter().filter(|r| r.measured_overhead_mean_us <= 0.0).map(|r| r.size_bytes).collect();
    let slope = loglog_slope(&rows).ok_or("slope undefined")?;
    let summary: Vec<String> = rows.iter().map(|r| format!("{}B:{:.0}us", r.size_bytes, r.measured_overhead_mean_us)).collect();
    check(
        nonpositive.is_empty() && slope <= MAX_OVERHEAD_SLOPE,
        format!("overhead > 0 at every size ({}), log-log slope {slope:.3} <= {MAX_OVERHEAD_SLOPE}", summary.join(" ")),
        format!("non-positive at {nonpositive:?}, slope {slope:.3}"),
    )
}

#[test]
fn acceptance() {
    let mut replays = Vec::new();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut run = |id: u8, name: &'static str, f: &mut dyn FnMut(&mut Vec<bool>) -> Outcome| {
        let out = catch_unwind(AssertUnwindSafe(|| f(&mut replays))).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {id:>2} {name}: {detail}");
        results.push((id, name, out));
    };
    run(1, "permission oracle", &mut |_| c1_permissions());
    run(2, "channel conformance", &mut |_| c2_channel());
    run(3, "replay defense", &mut c3_replay);
    run(4, "consensus safety and liveness", &mut c4_consensus);
    run(5, "insertion rejection", &mut c5_insertion);
    run(6, "gas and fee accounting", &mut c6_gas);
    run(7, "run determinism", &mut |_| c7_determinism());
    run(8, "read throughput trend", &mut c8_read_trend);
    run(9, "state replay integrity", &mut c9_state_replay);
    run(10, "channel overhead report", &mut |_| c10_overhead());
    let failed: Vec<u8> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
