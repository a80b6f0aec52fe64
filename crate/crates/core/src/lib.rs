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

//! Core of a blockchain-backed fog layer for health telemetry.
//!
//! - [`channel`]: authenticated, encrypted device-to-fog messaging with replay protection
//! - [`chain`]: transactions, blocks and the validated hash chain
//! - [`vm`]: permissioned heart-rate record contract with gas metering
//! - [`consensus`]: three-phase proof-of-authority finality engine
//! - [`node`]: fog node runtime tying the above together
//! - [`sim`]: deterministic discrete-event network simulator and attack injectors

pub mod chain;
pub mod channel;
pub mod codec;
pub mod consensus;
pub mod genesis;
pub mod hash;
pub mod node;
pub mod sim;
pub mod vm;
