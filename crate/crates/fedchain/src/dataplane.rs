//! Hybrid off-chain communication: direct peer channels under a
//! latency/bandwidth cost model, plus a content-addressed fallback store with
//! degraded throughput and a failure probability.
//!
//! Direct delivery is preferred; the fallback store is best-effort backup
//! keyed by content id. Payload framing on the wire is `cid (32 bytes) ||
//! ciphertext`. All failure sampling draws from the scenario seed, so
//! transfers replay identically.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::account::AccountId;
use crate::crypto::Digest;
use crate::SimTime;

/// Content identifier: SHA-256 of the stored bytes. Equal bytes, equal id.
pub type ContentId = Digest;

/// Cost model and failure profile for one scenario's network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Round-trip latency between any two peers, seconds.
    pub rtt: f64,
    /// Direct-link bandwidth, bits per second.
    pub bandwidth: f64,
    /// Fallback-store throughput, bytes per second. Configured below
    /// `bandwidth / 8` in every preset: the fallback is the slow path.
    pub fallback_throughput: f64,
    /// Per-attempt failure probability of a fallback retrieval.
    pub fallback_failure_prob: f64,
    /// Per-attempt failure probability of a direct transfer.
    pub direct_failure_prob: f64,
    /// Uniform throughput jitter for fallback retrievals, as a fraction
    /// (0.2 means +-20%). Zero disables the draw entirely.
    pub fallback_jitter: f64,
    /// Attempts per fallback retrieval before giving up.
    pub max_attempts: u32,
    /// Anchor every disseminated payload in the fallback store.
    pub anchor_cids: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            rtt: 0.05,
            bandwidth: 100e6,
            fallback_throughput: 2e6,
            fallback_failure_prob: 0.0,
            direct_failure_prob: 0.0,
            fallback_jitter: 0.0,
            max_attempts: 3,
            anchor_cids: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), DataPlaneError> {
        let nonneg = [
            self.rtt,
            self.bandwidth,
            self.fallback_throughput,
            self.fallback_jitter,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DataPlaneError::InvalidConfig(
                "rates and latencies must be finite and non-negative",
            ));
        }
        for p in [self.direct_failure_prob, self.fallback_failure_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataPlaneError::InvalidConfig(
                    "failure probabilities must lie in [0, 1]",
                ));
            }
        }
        if self.bandwidth <= 0.0 || self.fallback_throughput <= 0.0 {
            return Err(DataPlaneError::InvalidConfig(
                "bandwidth and fallback throughput must be positive",
            ));
        }
        if self.max_attempts == 0 {
            return Err(DataPlaneError::InvalidConfig(
                "max_attempts must be at least 1",
            ));
        }
        Ok(())
    }

    /// Duration of a successful direct transfer: `rtt/2 + bits / bandwidth`.
    pub fn direct_duration(&self, nbytes: u64) -> f64 {
        self.rtt / 2.0 + nbytes as f64 * 8.0 / self.bandwidth
    }
}

/// Which path delivered a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Fallback,
}

/// Timing record for one completed delivery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferReceipt {
    pub route: Route,
    pub start: SimTime,
    pub end: SimTime,
    pub bytes: u64,
    pub attempts: u32,
}

impl TransferReceipt {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Delivery strategy for [`DataPlane::disseminate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryPolicy {
    /// Try the direct channel once, then fall back to the store.
    DirectFirst,
    /// Skip the direct channel entirely.
    FallbackOnly,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DataPlaneError {
    #[error("invalid network config: {0}")]
    InvalidConfig(&'static str),
    #[error("peer {0} is not registered")]
    NotRegistered(AccountId),
    #[error("direct link failure")]
    LinkFailure,
    #[error("no content stored under {0}")]
    NotFound(ContentId),
    #[error("delivery unavailable after {attempts} attempts")]
    Unavailable { attempts: u32 },
}

/// The off-chain data plane owned by one simulation instance.
#[derive(Debug, Clone)]
pub struct DataPlane {
    config: NetworkConfig,
    store: BTreeMap<ContentId, Vec<u8>>,
    peers: BTreeSet<AccountId>,
    rng: ChaCha20Rng,
    log: Vec<TransferReceipt>,
}

impl DataPlane {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, DataPlaneError> {
        config.validate()?;
        Ok(Self {
            config,
            store: BTreeMap::new(),
            peers: BTreeSet::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Registration is instantaneous; signaling infrastructure is out of
    /// scope for the cost model.
    pub fn register_peer(&mut self, id: AccountId) {
        self.peers.insert(id);
    }

    fn require_peer(&self, id: AccountId) -> Result<(), DataPlaneError> {
        if self.peers.contains(&id) {
            Ok(())
        } else {
            Err(DataPlaneError::NotRegistered(id))
        }
    }

    /// One direct transfer attempt. On success the receipt ends at
    /// `now + rtt/2 + bits/bandwidth`; failures are sampled from the seeded
    /// stream.
    pub fn send_direct(
        &mut self,
        from: AccountId,
        to: AccountId,
        nbytes: u64,
        now: SimTime,
    ) -> Result<TransferReceipt, DataPlaneError> {
        self.require_peer(from)?;
        self.require_peer(to)?;
        if self.rng.gen::<f64>() < self.config.direct_failure_prob {
            return Err(DataPlaneError::LinkFailure);
        }
        let receipt = TransferReceipt {
            route: Route::Direct,
            start: now,
            end: now + self.config.direct_duration(nbytes),
            bytes: nbytes,
            attempts: 1,
        };
        self.log.push(receipt);
        Ok(receipt)
    }

    /// Stores bytes under their content id. Idempotent: identical bytes map
    /// to the identical id.
    pub fn put_fallback(&mut self, bytes: &[u8]) -> ContentId {
        let cid = ContentId::of(bytes);
        self.store.entry(cid).or_insert_with(|| bytes.to_vec());
        cid
    }

    pub fn contains(&self, cid: &ContentId) -> bool {
        self.store.contains_key(cid)
    }

    /// Retrieves stored bytes. Each attempt takes `nbytes /
    /// fallback_throughput` (with optional jitter) and fails with the
    /// configured probability; the receipt accumulates the time of failed
    /// attempts too.
    pub fn get_fallback(
        &mut self,
        cid: &ContentId,
        now: SimTime,
    ) -> Result<(Vec<u8>, TransferReceipt), DataPlaneError> {
        let bytes = self
            .store
            .get(cid)
            .cloned()
            .ok_or(DataPlaneError::NotFound(*cid))?;
        let (receipt, attempts) = self.fallback_attempts(bytes.len() as u64, now, 0)?;
        debug_assert_eq!(receipt.attempts, attempts);
        Ok((bytes, receipt))
    }

    fn fallback_attempts(
        &mut self,
        nbytes: u64,
        start: SimTime,
        prior_attempts: u32,
    ) -> Result<(TransferReceipt, u32), DataPlaneError> {
        let mut end = start;
        let mut attempts = prior_attempts;
        for _ in 0..self.config.max_attempts {
            attempts += 1;
            let jitter = if self.config.fallback_jitter > 0.0 {
                let j = self.config.fallback_jitter;
                self.rng.gen_range(1.0 - j..1.0 + j)
            } else {
                1.0
            };
            end += nbytes as f64 / self.config.fallback_throughput * jitter;
            if self.rng.gen::<f64>() >= self.config.fallback_failure_prob {
                let receipt = TransferReceipt {
                    route: Route::Fallback,
                    start,
                    end,
                    bytes: nbytes,
                    attempts,
                };
                self.log.push(receipt);
                return Ok((receipt, attempts));
            }
        }
        Err(DataPlaneError::Unavailable { attempts })
    }

    /// Delivers a sealed payload: anchors the content id, tries the direct
    /// channel first (under [`DeliveryPolicy::DirectFirst`]), and retrieves
    /// from the fallback store when the link fails. A failed direct attempt
    /// costs one full round trip before the fallback starts.
    pub fn disseminate(
        &mut self,
        payload: &[u8],
        from: AccountId,
        to: AccountId,
        now: SimTime,
        policy: DeliveryPolicy,
    ) -> Result<(ContentId, TransferReceipt), DataPlaneError> {
        let cid = if self.config.anchor_cids {
            self.put_fallback(payload)
        } else {
            ContentId::of(payload)
        };
        match policy {
            DeliveryPolicy::DirectFirst => match self.send_direct(from, to, payload.len() as u64, now) {
                Ok(receipt) => Ok((cid, receipt)),
                Err(DataPlaneError::LinkFailure) => {
                    if !self.contains(&cid) {
                        return Err(DataPlaneError::Unavailable { attempts: 1 });
                    }
                    let (receipt, _) =
                        self.fallback_attempts(payload.len() as u64, now + self.config.rtt, 1)?;
                    Ok((cid, receipt))
                }
                Err(other) => Err(other),
            },
            DeliveryPolicy::FallbackOnly => {
                if !self.contains(&cid) {
                    self.put_fallback(payload);
                }
                let (receipt, _) = self.fallback_attempts(payload.len() as u64, now, 0)?;
                Ok((cid, receipt))
            }
        }
    }

    pub fn receipts(&self) -> &[TransferReceipt] {
        &self.log
    }

    /// Transfer trace as CSV: `route,bytes,start,end`.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("route,bytes,start,end\n");
        for r in &self.log {
            let route = match r.route {
                Route::Direct => "direct",
                Route::Fallback => "fallback",
            };
            out.push_str(&format!(
                "{route},{},{:.6},{:.6}\n",
                r.bytes, r.start, r.end
            ));
        }
        out
    }
}
