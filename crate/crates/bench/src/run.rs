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

//! Throughput and latency sweeps over (nodes, tasks) cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use edgelinker_core::node::ChannelMode;
use edgelinker_core::sim::scenario::{ScenarioConfig, Workload};
use edgelinker_core::sim::{run_scenario, SimError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{mean, stddev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Read,
    Write,
    Mixed,
}

impl WorkloadKind {
    pub fn workload(self, tasks: usize) -> Workload {
        match self {
            WorkloadKind::Read => Workload::Read { tasks },
            WorkloadKind::Write => Workload::Write { tasks },
            WorkloadKind::Mixed => Workload::Mixed { tasks },
        }
    }

    pub fn name(self) -> &'static str {
        self.workload(0).name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub node_counts: Vec<usize>,
    pub task_counts: Vec<usize>,
    pub repetitions: usize,
    pub workload: WorkloadKind,
    pub channel: ChannelMode,
    pub seed: u64,
    /// Everything not swept: links, service model, block interval.
    pub base: ScenarioConfig,
}

impl Default for RunPlan {
    fn default() -> Self {
        Self {
            node_counts: vec![1, 5, 10, 15, 20],
            task_counts: vec![100, 200, 300, 400, 500],
            repetitions: 5,
            workload: WorkloadKind::Read,
            channel: ChannelMode::Secure,
            seed: 42,
            base: ScenarioConfig::default(),
        }
    }
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        if self.node_counts.is_empty() || self.task_counts.is_empty() {
            return Err("node and task lists must be non-empty".into());
        }
        if self.node_counts.contains(&0) {
            return Err("node counts must be positive".into());
        }
        if self.task_counts.contains(&0) {
            return Err("task counts must be positive".into());
        }
        for cell in self.cells() {
            self.scenario(cell, 0).validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.node_counts {
            for &t in &self.task_counts {
                out.push((n, t));
            }
        }
        out
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn scenario(&self, (nodes, tasks): (usize, usize), rep: usize) -> ScenarioConfig {
        ScenarioConfig {
            nodes,
            seed: self.rep_seed(rep),
            channel: self.channel,
            workload: self.workload.workload(tasks),
            attack: None,
            byzantine: Vec::new(),
            crashed: Vec::new(),
            ..self.base.clone()
        }
    }
}

/// Result of one simulation run.
#[derive(Debug, Clone)]
struct RepResult {
    requests: usize,
    confirmed: usize,
    delay_us: f64,
    time_us: f64,
    tps: f64,
    elapsed_us: u64,
    tip_hash: String,
    replay_ok: bool,
    compute_us: f64,
    node_compute_ms: f64,
    wall_ms: f64,
}

/// One CSV row per (nodes, tasks) cell, aggregated over repetitions.
/// `sim_*` columns come from virtual time and are deterministic;
/// `measured_*` columns are wall-clock and vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub workload: String,
    pub channel: ChannelMode,
    pub nodes: usize,
    pub tasks: usize,
    pub reps: usize,
    pub seed: u64,
    pub requests: usize,
    pub confirmed_tx: usize,
    pub sim_processing_delay_us_mean: f64,
    pub sim_processing_delay_us_std: f64,
    pub sim_processing_time_us_mean: f64,
    pub sim_processing_time_us_std: f64,
    pub sim_throughput_tps_mean: f64,
    pub sim_throughput_tps_std: f64,
    pub sim_elapsed_us_mean: f64,
    pub state_replay_ok: bool,
    /// Node 0 tip hash of each repetition, `;`-separated.
    pub tip_hash: String,
    pub measured_compute_us_mean: f64,
    pub measured_compute_us_std: f64,
    pub measured_node_compute_ms_mean: f64,
    pub measured_wall_ms_mean: f64,
}

/// Columns compared for reproducibility.
pub const NON_TIMING_PREFIX: &str = "sim_";

fn run_rep(cfg: &ScenarioConfig) -> Result<RepResult, SimError> {
    let t0 = Instant::now();
    let trace = run_scenario(cfg, cfg.seed)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let m = trace.measured_metrics();
    Ok(RepResult {
        requests: m.requests,
        confirmed: m.succeeded,
        delay_us: m.delay_mean_us,
        time_us: m.time_mean_us,
        tps: m.tps,
        elapsed_us: m.elapsed_us,
        tip_hash: trace.nodes[0].tip_hash.to_string(),
        replay_ok: trace.nodes.iter().all(|n| n.state_replay_ok),
        compute_us: m.compute_mean_us,
        node_compute_ms: trace.measured.node_compute_ns as f64 / 1e6,
        wall_ms,
    })
}

/// Runs every (cell, repetition) pair. Cells run in parallel; rows come
/// back in plan order.
pub fn run_plan(plan: &RunPlan) -> Result<Vec<MetricsRecord>, String> {
    plan.validate()?;
    let cells = plan.cells();
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..plan.repetitions).map(move |r| (c, r))).collect();
    let results: Vec<Result<RepResult, SimError>> =
        jobs.par_iter().map(|&(c, r)| run_rep(&plan.scenario(cells[c], r))).collect();
    let mut rows = Vec::with_capacity(cells.len());
    for (c, &(nodes, tasks)) in cells.iter().enumerate() {
        let reps = results[c * plan.repetitions..(c + 1) * plan.repetitions]
            .iter()
            .cloned()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let col = |f: fn(&RepResult) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
        let (delay, time, tps) = (col(|r| r.delay_us), col(|r| r.time_us), col(|r| r.tps));
        let compute = col(|r| r.compute_us);
        rows.push(MetricsRecord {
            run_id: format!("{}-{}-n{nodes}-t{tasks}", plan.workload.name(), channel_name(plan.channel)),
            workload: plan.workload.name().to_string(),
            channel: plan.channel,
            nodes,
            tasks,
            reps: plan.repetitions,
            seed: plan.seed,
            requests: reps.iter().map(|r| r.requests).sum(),
            confirmed_tx: reps.iter().map(|r| r.confirmed).sum(),
            sim_processing_delay_us_mean: mean(&delay),
            sim_processing_delay_us_std: stddev(&delay),
            sim_processing_time_us_mean: mean(&time),
            sim_processing_time_us_std: stddev(&time),
            sim_throughput_tps_mean: mean(&tps),
            sim_throughput_tps_std: stddev(&tps),
            sim_elapsed_us_mean: mean(&col(|r| r.elapsed_us as f64)),
            state_replay_ok: reps.iter().all(|r| r.replay_ok),
            tip_hash: reps.iter().map(|r| r.tip_hash.as_str()).collect::<Vec<_>>().join(";"),
            measured_compute_us_mean: mean(&compute),
            measured_compute_us_std: stddev(&compute),
            measured_node_compute_ms_mean: mean(&col(|r| r.node_compute_ms)),
            measured_wall_ms_mean: mean(&col(|r| r.wall_ms)),
        });
    }
    Ok(rows)
}

pub fn channel_name(mode: ChannelMode) -> &'static str {
    match mode {
        ChannelMode::Secure => "secure",
        ChannelMode::Plain => "plain",
    }
}

pub fn write_csv<W: std::io::Write>(rows: &[MetricsRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// The CSV with every `measured_*` column removed.
pub fn non_timing_columns(csv_text: &str) -> Result<String, csv::Error> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers()?.clone();
    let keep: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| !h.starts_with("measured_")).map(|(i, _)| i).collect();
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(keep.iter().map(|&i| &headers[i]))?;
    for rec in rdr.records() {
        let rec = rec?;
        out.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    Ok(String::from_utf8(out.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    plan: &'a RunPlan,
    commit: String,
    csv: String,
    rows: usize,
}

fn commit_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `<out>/run_<workload>_<channel>.csv` and `<out>/manifest.json`.
/// Returns the CSV path.
pub fn write_results(plan: &RunPlan, rows: &[MetricsRecord], out: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(out)?;
    let name = format!("run_{}_{}.csv", plan.workload.name(), channel_name(plan.channel));
    let path = out.join(&name);
    write_csv(rows, fs::File::create(&path)?).map_err(std::io::Error::other)?;
    let manifest = Manifest { plan, commit: commit_hash(), csv: name, rows: rows.len() };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(workload: WorkloadKind, nodes: Vec<usize>) -> RunPlan {
        RunPlan { node_counts: nodes, task_counts: vec![20], repetitions: 2, workload, ..Default::default() }
    }

    #[test]
    fn one_row_per_cell() {
        let plan = RunPlan { task_counts: vec![10, 20], ..small(WorkloadKind::Write, vec![1]) };
        let rows = run_plan(&plan).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].requests, 20);
        assert_eq!(rows[1].requests, 40);
        assert!(rows.iter().all(|r| r.confirmed_tx == r.requests && r.state_replay_ok));
        assert_eq!(rows[0].tip_hash.split(';').count(), 2);
    }

    #[test]
    fn processing_time_covers_delay() {
        for r in run_plan(&small(WorkloadKind::Mixed, vec![4])).unwrap() {
            assert!(r.sim_processing_time_us_mean >= r.sim_processing_delay_us_mean);
            assert!(r.sim_throughput_tps_mean > 0.0);
        }
    }

    #[test]
    fn secure_and_plain_agree_on_outcomes() {
        let secure = run_plan(&small(WorkloadKind::Write, vec![4])).unwrap();
        let plain = run_plan(&RunPlan { channel: ChannelMode::Plain, ..small(WorkloadKind::Write, vec![4]) }).unwrap();
        assert_eq!(secure[0].confirmed_tx, plain[0].confirmed_tx);
        assert_eq!(secure[0].tip_hash, plain[0].tip_hash);
    }

    #[test]
    fn rejects_zero_reps() {
        let plan = RunPlan { repetitions: 0, ..Default::default() };
        assert!(run_plan(&plan).is_err());
    }

    #[test]
    fn strips_measured_columns() {
        let rows = run_plan(&small(WorkloadKind::Read, vec![1])).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let stripped = non_timing_columns(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert!(!stripped.contains("measured_"));
        assert!(stripped.contains("sim_throughput_tps_mean"));
        assert!(stripped.contains("tip_hash"));
    }
}
