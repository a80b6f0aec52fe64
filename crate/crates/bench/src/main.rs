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

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edgelinker_bench::attack::{attack_for, attack_scenario, run_attack};
use edgelinker_bench::overhead::{self, channel_overhead, loglog_slope, DEFAULT_SIZES};
use edgelinker_bench::resolve_seed;
use edgelinker_bench::run::{run_plan, write_results, RunPlan, WorkloadKind};
use edgelinker_core::node::ChannelMode;
use edgelinker_core::sim::attack::AttackKind;
use edgelinker_core::sim::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "edgelinker", version, about = "Benchmark and attack harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadArg {
    Read,
    Write,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Secure,
    Plain,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Replay,
    Eavesdrop,
    Insertion,
    Dos,
    Spoof,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep node and task counts and write one CSV row per cell.
    Run {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 15, 20])]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 300, 400, 500])]
        tasks: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, value_enum, default_value = "read")]
        workload: WorkloadArg,
        #[arg(long, value_enum, default_value = "secure")]
        channel: ChannelArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario JSON for the settings that are not swept.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Measure secure-channel cost against plain encoding.
    ChannelOverhead {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inject an attack and check the defenses.
    Attack {
        #[arg(long, value_enum)]
        kind: AttackArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, default: ScenarioConfig) -> Result<ScenarioConfig, String> {
    match path {
        Some(p) => ScenarioConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(default),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Run { nodes, tasks, reps, workload, channel, seed, config, out } => {
            let base = load_config(config.as_ref(), ScenarioConfig::default())?;
            let plan = RunPlan {
                node_counts: nodes,
                task_counts: tasks,
                repetitions: reps,
                workload: match workload {
                    WorkloadArg::Read => WorkloadKind::Read,
                    WorkloadArg::Write => WorkloadKind::Write,
                    WorkloadArg::Mixed => WorkloadKind::Mixed,
                },
                channel: match channel {
                    ChannelArg::Secure => ChannelMode::Secure,
                    ChannelArg::Plain => ChannelMode::Plain,
                },
                seed: resolve_seed(seed, base.seed)?,
                base,
            };
            let rows = run_plan(&plan)?;
            let path = write_results(&plan, &rows, &out).map_err(|e| e.to_string())?;
            for r in &rows {
                println!(
                    "{:<28} confirmed={:<6} delay={:>10.1}us time={:>10.1}us tps={:>10.2}",
                    r.run_id,
                    r.confirmed_tx,
                    r.sim_processing_delay_us_mean,
                    r.sim_processing_time_us_mean,
                    r.sim_throughput_tps_mean
                );
            }
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ChannelOverhead { sizes, samples, out } => {
            let rows = channel_overhead(&sizes, samples, 0)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    overhead::write_csv(&rows, f).map_err(|e| e.to_string())?;
                }
                None => overhead::write_csv(&rows, std::io::stdout()).map_err(|e| e.to_string())?,
            }
            match loglog_slope(&rows) {
                Some(s) => eprintln!("log-log slope of mean overhead vs size: {s:.3}"),
                None => eprintln!("log-log slope: not enough sizes"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Attack { kind, config, seed } => {
            let kind = match kind {
                AttackArg::Replay => AttackKind::Replay,
                AttackArg::Eavesdrop => AttackKind::Eavesdrop,
                AttackArg::Insertion => AttackKind::Insertion,
                AttackArg::Dos => AttackKind::Dos,
                AttackArg::Spoof => AttackKind::Spoof,
            };
            let cfg = load_config(config.as_ref(), attack_scenario())?;
            let seed = resolve_seed(seed, cfg.seed)?;
            let run = run_attack(&cfg, attack_for(kind, &cfg), seed).map_err(|e| e.to_string())?;
            for c in &run.checks {
                println!("{} {kind}: {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(report) = &run.trace.attack {
                println!("{kind}: {} attacker actions, seed {seed}", report.records.len());
            }
            Ok(if run.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
