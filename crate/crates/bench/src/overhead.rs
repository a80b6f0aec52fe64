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

//! Wall-clock cost of the secure channel relative to plain encoding.

use std::hint::black_box;
use std::time::Instant;

use edgelinker_core::channel::{ChannelMessage, KeyPair};
use edgelinker_core::codec::{Decode, Encode};
use edgelinker_core::node::{ChannelMode, Envelope};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{mean, percentile};

pub const DEFAULT_SIZES: [usize; 6] = [64, 256, 1_024, 4_096, 16_384, 65_536];
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRecord {
    pub size_bytes: usize,
    pub samples: usize,
    pub plain_wire_bytes: usize,
    pub secure_wire_bytes: usize,
    pub measured_plain_mean_us: f64,
    pub measured_plain_p99_us: f64,
    pub measured_secure_mean_us: f64,
    pub measured_secure_p99_us: f64,
    pub measured_overhead_mean_us: f64,
    pub measured_overhead_p99_us: f64,
}

/// Times seal+open against plain encode+decode for each body size.
pub fn channel_overhead(sizes: &[usize], samples: usize, seed: u64) -> Result<Vec<OverheadRecord>, String> {
    if samples < MIN_SAMPLES {
        return Err(format!("samples must be at least {MIN_SAMPLES}, got {samples}"));
    }
    if sizes.is_empty() {
        return Err("no message sizes given".into());
    }
    let sender = KeyPair::from_seed([1; 32]);
    let node = KeyPair::from_seed([2; 32]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let m = ChannelMessage {
            timestamp: 1,
            nonce: 1,
            identification: sender.public_key(),
            body: (0..size).map(|i| i as u8).collect(),
        };
        let mut plain = Vec::with_capacity(samples);
        let mut secure = Vec::with_capacity(samples);
        let mut secure_wire = 0;
        for _ in 0..samples {
            let t0 = Instant::now();
            let bytes = black_box(m.encode());
            let back = ChannelMessage::decode(&bytes).map_err(|e| e.to_string())?;
            black_box(back);
            plain.push(t0.elapsed().as_secs_f64() * 1e6);

            let t0 = Instant::now();
            let env = Envelope::seal(&m, &sender, &node.public_key(), ChannelMode::Secure, &mut rng)
                .map_err(|e| e.to_string())?;
            let back = env.open(&node).map_err(|e| e.to_string())?;
            black_box(back);
            secure.push(t0.elapsed().as_secs_f64() * 1e6);
            secure_wire = env.wire_len();
        }
        let overhead: Vec<f64> = secure.iter().zip(&plain).map(|(s, p)| s - p).collect();
        out.push(OverheadRecord {
            size_bytes: size,
            samples,
            plain_wire_bytes: m.encode().len(),
            secure_wire_bytes: secure_wire,
            measured_plain_mean_us: mean(&plain),
            measured_plain_p99_us: percentile(&plain, 0.99),
            measured_secure_mean_us: mean(&secure),
            measured_secure_p99_us: percentile(&secure, 0.99),
            measured_overhead_mean_us: mean(&overhead),
            measured_overhead_p99_us: percentile(&overhead, 0.99),
        });
    }
    Ok(out)
}

/// Least-squares slope of ln(mean overhead) against ln(size). A slope at
/// or below one means the overhead grows no faster than linearly.
pub fn loglog_slope(rows: &[OverheadRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.measured_overhead_mean_us > 0.0)
        .map(|r| ((r.size_bytes as f64).ln(), r.measured_overhead_mean_us.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

pub fn write_csv<W: std::io::Write>(rows: &[OverheadRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
