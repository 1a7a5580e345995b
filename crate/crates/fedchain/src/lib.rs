//! Deterministic simulator for incentive-aware federated learning settled on a
//! blockchain.
//!
//! The crate wires five layers together:
//!
//! * [`ledger`] — a simulated public chain: mempool, periodic block production,
//!   gas metering, and the contract event log.
//! * [`contract`] — the training-project smart contract as an explicit state
//!   machine: registration, per-round event choreography, committee
//!   certification, and automated reward payout.
//! * [`crypto`] — ECDH key agreement, per-round symmetric keys, key wrapping,
//!   and authenticated encryption of model payloads.
//! * [`dataplane`] — the hybrid off-chain data plane: direct peer transfers
//!   with a latency/bandwidth cost model and a content-addressed fallback
//!   store.
//! * [`fl`] / [`contribution`] — desk-scale federated training on a synthetic
//!   task, pluggable aggregation, and Shapley/leave-one-out contribution
//!   valuation feeding the on-chain allocation rule.
//!
//! [`orchestrator`] drives full protocol rounds over a single simulated clock
//! and collects per-phase timing plus gas reports; [`scenario`] and [`runner`]
//! provide the experiment sweep machinery behind the `fedchain` binary.
//!
//! Everything is deterministic under a scenario seed: reruns produce
//! byte-identical reports.

pub mod account;
pub mod contract;
pub mod contribution;
pub mod crypto;
pub mod dataplane;
pub mod fl;
pub mod ledger;
pub mod orchestrator;
pub mod runner;
pub mod scenario;

/// Simulated time in seconds.
pub type SimTime = f64;
