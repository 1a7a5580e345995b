//! Simulated public blockchain: timestamped transaction queue, periodic block
//! production, gas metering, and the contract event log.
//!
//! The chain is the sole source of settlement truth. Blocks are produced on a
//! fixed schedule (empty blocks included), transactions are ordered FIFO by
//! `(submit_time, sender, nonce)`, and a transaction arriving exactly on a
//! block boundary goes to the *next* block. There is no fee market, no forks,
//! and no real hashing; determinism is the contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::account::AccountId;
use crate::SimTime;

/// Gas units.
pub type Gas = u64;

/// Tolerance for block-boundary comparisons on the simulated clock.
const TIME_EPS: f64 = 1e-9;

/// Chain parameters: block rhythm, capacity, and the gas schedule.
///
/// The gas schedule is fixed at the familiar 21000 base + 16/byte so totals
/// stay interpretable; it is synthetic, not EVM-exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Seconds between consecutive blocks.
    pub block_interval: f64,
    /// Maximum transactions per block.
    pub txs_per_block: usize,
    /// Maximum total gas per block.
    pub gas_limit_per_block: Gas,
    /// Flat gas charged per transaction.
    pub base_tx_gas: Gas,
    /// Gas charged per payload byte.
    pub per_byte_gas: Gas,
}

impl ChainConfig {
    pub const DEFAULT_BASE_TX_GAS: Gas = 21_000;
    pub const DEFAULT_PER_BYTE_GAS: Gas = 16;
    pub const DEFAULT_GAS_LIMIT: Gas = 30_000_000;

    /// Builds a config from explicit block interval and capacity.
    pub fn custom(block_interval: f64, txs_per_block: usize) -> Result<Self, LedgerError> {
        Self {
            block_interval,
            txs_per_block,
            gas_limit_per_block: Self::DEFAULT_GAS_LIMIT,
            base_tx_gas: Self::DEFAULT_BASE_TX_GAS,
            per_byte_gas: Self::DEFAULT_PER_BYTE_GAS,
        }
        .validated()
    }

    /// Returns one of the named public-chain presets.
    ///
    /// Block capacity is fixed as mid-range TPS times the block interval,
    /// since published figures quote TPS ranges rather than per-block counts.
    pub fn preset(name: &str) -> Result<Self, LedgerError> {
        let (interval, mid_tps) = match name {
            // ~12 s blocks, 25-30 TPS
            "ethereum-l1" => (12.0, 27.5),
            // ~10 min blocks, 3-7 TPS
            "bitcoin" => (600.0, 5.0),
            // ~0.4 s blocks, >1400 TPS
            "solana" => (0.4, 1400.0),
            other => return Err(LedgerError::UnknownPreset(other.to_string())),
        };
        Self::custom(interval, (mid_tps * interval).round() as usize)
    }

    pub fn validated(self) -> Result<Self, LedgerError> {
        if !(self.block_interval > 0.0) || !self.block_interval.is_finite() {
            return Err(LedgerError::InvalidParameter("block_interval must be > 0"));
        }
        if self.txs_per_block < 1 {
            return Err(LedgerError::InvalidParameter("txs_per_block must be >= 1"));
        }
        if self.gas_limit_per_block < self.base_tx_gas {
            return Err(LedgerError::InvalidParameter(
                "gas_limit_per_block must cover base_tx_gas",
            ));
        }
        Ok(self)
    }

    /// Gas charged for a payload of `len` bytes: `base + per_byte * len`.
    pub fn tx_gas(&self, len: usize) -> Gas {
        self.base_tx_gas + self.per_byte_gas * len as Gas
    }

    /// Timestamp of the block at `height`.
    pub fn block_time(&self, height: u64) -> SimTime {
        height as f64 * self.block_interval
    }

    /// First block boundary strictly after `now`.
    pub fn next_boundary(&self, now: SimTime) -> SimTime {
        let mut h = (now / self.block_interval).floor() as u64 + 1;
        // Guard against `now` sitting a hair past an exact boundary.
        while self.block_time(h) <= now + TIME_EPS {
            h += 1;
        }
        self.block_time(h)
    }
}

/// A submitted contract call, opaque to the ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub sender: AccountId,
    pub payload: Vec<u8>,
    pub submit_time: SimTime,
    pub gas: Gas,
    pub nonce: u64,
}

/// A produced block. `timestamp == height * block_interval` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub timestamp: SimTime,
    pub txs: Vec<Transaction>,
    pub gas_used: Gas,
}

/// The four contract events that choreograph a training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    KeyRequest,
    KeyAchieved,
    GlobalModelUpdated,
    LocalTrainingFinished,
}

/// Contract event as recorded in the chain's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub round: u64,
    pub emitter: AccountId,
    pub block_height: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data: BTreeMap<String, String>,
}

/// Returned by [`Ledger::submit`]; identifies the pending transaction and
/// carries a predicted inclusion time (next boundary plus capacity spill).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingReceipt {
    pub sender: AccountId,
    pub nonce: u64,
    pub gas: Gas,
    pub predicted_inclusion: SimTime,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LedgerError {
    #[error("unknown chain preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid chain parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("nonce gap for {sender}: expected {expected}, got {got}")]
    NonceGap {
        sender: AccountId,
        expected: u64,
        got: u64,
    },
    #[error("payload needs {gas} gas, above the block limit {limit}")]
    PayloadTooLarge { gas: Gas, limit: Gas },
    #[error("clock regression: ledger is at {now}, request was {requested}")]
    ClockRegression { now: SimTime, requested: SimTime },
}

/// The simulated chain. Single-threaded within one simulation instance.
#[derive(Debug, Clone)]
pub struct Ledger {
    config: ChainConfig,
    now: SimTime,
    mempool: Vec<Transaction>,
    next_nonce: BTreeMap<AccountId, u64>,
    blocks: Vec<Block>,
    events: Vec<EventRecord>,
    included: BTreeMap<(AccountId, u64), u64>,
}

impl Ledger {
    pub fn new(config: ChainConfig) -> Self {
        Self {
            config,
            now: 0.0,
            mempool: Vec::new(),
            next_nonce: BTreeMap::new(),
            blocks: Vec::new(),
            events: Vec::new(),
            included: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn next_nonce(&self, sender: AccountId) -> u64 {
        self.next_nonce.get(&sender).copied().unwrap_or(0)
    }

    /// Queues a transaction at simulated time `now`, auto-assigning the next
    /// nonce for the sender.
    pub fn submit(
        &mut self,
        sender: AccountId,
        payload: Vec<u8>,
        now: SimTime,
    ) -> Result<PendingReceipt, LedgerError> {
        let nonce = self.next_nonce(sender);
        self.submit_with_nonce(sender, payload, now, nonce)
    }

    /// Queues a transaction with an explicit nonce, which must be the next
    /// one for the sender.
    pub fn submit_with_nonce(
        &mut self,
        sender: AccountId,
        payload: Vec<u8>,
        now: SimTime,
        nonce: u64,
    ) -> Result<PendingReceipt, LedgerError> {
        if now < self.now - TIME_EPS {
            return Err(LedgerError::ClockRegression {
                now: self.now,
                requested: now,
            });
        }
        let expected = self.next_nonce(sender);
        if nonce != expected {
            return Err(LedgerError::NonceGap {
                sender,
                expected,
                got: nonce,
            });
        }
        let gas = self.config.tx_gas(payload.len());
        if gas > self.config.gas_limit_per_block {
            return Err(LedgerError::PayloadTooLarge {
                gas,
                limit: self.config.gas_limit_per_block,
            });
        }
        self.now = self.now.max(now);
        self.next_nonce.insert(sender, nonce + 1);
        let tx = Transaction {
            sender,
            payload,
            submit_time: now,
            gas,
            nonce,
        };
        let predicted_inclusion = self.predict_inclusion(&tx);
        let key = |t: &Transaction| (t.submit_time, t.sender, t.nonce);
        let pos = self
            .mempool
            .partition_point(|queued| key(queued) <= key(&tx));
        self.mempool.insert(pos, tx);
        Ok(PendingReceipt {
            sender,
            nonce,
            gas,
            predicted_inclusion,
        })
    }

    /// Walks the current queue under both capacity limits to find the block
    /// boundary where `tx` (queued last) would land.
    fn predict_inclusion(&self, tx: &Transaction) -> SimTime {
        let mut boundary = self.config.next_boundary(tx.submit_time);
        let mut count = 0usize;
        let mut gas = 0u64;
        for queued in self.mempool.iter().chain(std::iter::once(tx)) {
            if count + 1 > self.config.txs_per_block
                || gas + queued.gas > self.config.gas_limit_per_block
            {
                boundary += self.config.block_interval;
                count = 0;
                gas = 0;
            }
            count += 1;
            gas += queued.gas;
        }
        boundary
    }

    /// Produces every block with timestamp <= `time`, draining the mempool
    /// FIFO under the per-block capacity and gas limits. Empty blocks are
    /// produced on schedule.
    pub fn advance_to(&mut self, time: SimTime) -> Result<Vec<Block>, LedgerError> {
        if time < self.now - TIME_EPS {
            return Err(LedgerError::ClockRegression {
                now: self.now,
                requested: time,
            });
        }
        let mut produced = Vec::new();
        loop {
            let height = self.blocks.len() as u64 + 1;
            let ts = self.config.block_time(height);
            if ts > time + TIME_EPS {
                break;
            }
            let mut txs = Vec::new();
            let mut gas_used = 0u64;
            while let Some(front) = self.mempool.first() {
                if front.submit_time >= ts - TIME_EPS
                    || txs.len() + 1 > self.config.txs_per_block
                    || gas_used + front.gas > self.config.gas_limit_per_block
                {
                    break;
                }
                let tx = self.mempool.remove(0);
                gas_used += tx.gas;
                self.included.insert((tx.sender, tx.nonce), height);
                txs.push(tx);
            }
            let block = Block {
                height,
                timestamp: ts,
                txs,
                gas_used,
            };
            self.blocks.push(block.clone());
            produced.push(block);
        }
        self.now = self.now.max(time);
        Ok(produced)
    }

    /// Records a contract event emitted while executing an included call.
    pub fn record_event(&mut self, event: EventRecord) {
        self.events.push(event);
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn pending(&self) -> usize {
        self.mempool.len()
    }

    /// Block height and timestamp where a submitted transaction landed.
    pub fn inclusion(&self, sender: AccountId, nonce: u64) -> Option<(u64, SimTime)> {
        let height = *self.included.get(&(sender, nonce))?;
        Some((height, self.config.block_time(height)))
    }

    /// Event log as JSON lines, one record per line.
    pub fn export_events_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}
