//! Byte encoding of contract calls.
//!
//! Payloads are tagged records with fixed-width little-endian fields and
//! length-prefixed variable sections, so gas tracks payload size exactly:
//!
//! ```text
//! tag u8, then per call:
//!   0x01 create_project        digest(32) budget(8) fee(8) round_budget(8)
//!                              rounds(8) deadline(f64 8) pubkey(32)
//!                              committee: count u16 + count * u32
//!   0x02 register_key          pubkey(32)
//!   0x03 join_round            project(8) round(4) fee(8)
//!   0x04 publish_wrapped_keys  project(8) round(4) base_model(32)
//!                              count u16 + count * (trainer u32, len u16, bytes)
//!   0x05 submit_update_ref     project(8) round(4) cid(32)
//!   0x06 publish_global_model  project(8) round(4) model(32) scores_digest(32)
//!   0x07 endorse               project(8) round(4) model(32) scores_digest(32)
//!   0x08 submit_contributions  project(8) round(4)
//!                              count u16 + count * (trainer u32, score i64)
//! ```

use crate::account::AccountId;
use crate::crypto::{Digest, PublicKey, WrappedKey};
use crate::dataplane::ContentId;

use super::{ContractError, ProjectConfig, ProjectId};

const TAG_CREATE: u8 = 0x01;
const TAG_REGISTER: u8 = 0x02;
const TAG_JOIN: u8 = 0x03;
const TAG_WRAPPED: u8 = 0x04;
const TAG_UPDATE_REF: u8 = 0x05;
const TAG_PUBLISH: u8 = 0x06;
const TAG_ENDORSE: u8 = 0x07;
const TAG_SCORES: u8 = 0x08;

#[derive(Debug, Clone, PartialEq)]
pub enum ContractCall {
    CreateProject {
        config: ProjectConfig,
    },
    RegisterKey {
        pubkey: PublicKey,
    },
    JoinRound {
        project: ProjectId,
        round: u64,
        fee: u64,
    },
    PublishWrappedKeys {
        project: ProjectId,
        round: u64,
        base_model: ContentId,
        wrapped: Vec<(AccountId, WrappedKey)>,
    },
    SubmitUpdateRef {
        project: ProjectId,
        round: u64,
        cid: ContentId,
    },
    PublishGlobalModel {
        project: ProjectId,
        round: u64,
        model: ContentId,
        contribution_digest: Digest,
    },
    Endorse {
        project: ProjectId,
        round: u64,
        model: ContentId,
        contribution_digest: Digest,
    },
    SubmitContributions {
        project: ProjectId,
        round: u64,
        scores: Vec<(AccountId, i64)>,
    },
}

impl ContractCall {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ContractCall::CreateProject { config } => {
                out.push(TAG_CREATE);
                out.extend_from_slice(&config.config_digest.0);
                out.extend_from_slice(&config.budget.to_le_bytes());
                out.extend_from_slice(&config.required_fee.to_le_bytes());
                out.extend_from_slice(&config.round_budget.to_le_bytes());
                out.extend_from_slice(&config.planned_rounds.to_le_bytes());
                out.extend_from_slice(&config.round_deadline.to_le_bytes());
                out.extend_from_slice(&config.customer_pubkey.0);
                out.extend_from_slice(&(config.committee.len() as u16).to_le_bytes());
                for member in &config.committee {
                    out.extend_from_slice(&member.0.to_le_bytes());
                }
            }
            ContractCall::RegisterKey { pubkey } => {
                out.push(TAG_REGISTER);
                out.extend_from_slice(&pubkey.0);
            }
            ContractCall::JoinRound {
                project,
                round,
                fee,
            } => {
                out.push(TAG_JOIN);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&fee.to_le_bytes());
            }
            ContractCall::PublishWrappedKeys {
                project,
                round,
                base_model,
                wrapped,
            } => {
                out.push(TAG_WRAPPED);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&base_model.0);
                out.extend_from_slice(&(wrapped.len() as u16).to_le_bytes());
                for (trainer, key) in wrapped {
                    out.extend_from_slice(&trainer.0.to_le_bytes());
                    out.extend_from_slice(&(key.bytes.len() as u16).to_le_bytes());
                    out.extend_from_slice(&key.bytes);
                }
            }
            ContractCall::SubmitUpdateRef {
                project,
                round,
                cid,
            } => {
                out.push(TAG_UPDATE_REF);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&cid.0);
            }
            ContractCall::PublishGlobalModel {
                project,
                round,
                model,
                contribution_digest,
            } => {
                out.push(TAG_PUBLISH);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&model.0);
                out.extend_from_slice(&contribution_digest.0);
            }
            ContractCall::Endorse {
                project,
                round,
                model,
                contribution_digest,
            } => {
                out.push(TAG_ENDORSE);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&model.0);
                out.extend_from_slice(&contribution_digest.0);
            }
            ContractCall::SubmitContributions {
                project,
                round,
                scores,
            } => {
                out.push(TAG_SCORES);
                out.extend_from_slice(&project.0.to_le_bytes());
                out.extend_from_slice(&(*round as u32).to_le_bytes());
                out.extend_from_slice(&(scores.len() as u16).to_le_bytes());
                for (trainer, score) in scores {
                    out.extend_from_slice(&trainer.0.to_le_bytes());
                    out.extend_from_slice(&score.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ContractError> {
        let mut r = Reader::new(bytes);
        let call = match r.u8()? {
            TAG_CREATE => {
                let config_digest = Digest(r.array::<32>()?);
                let budget = r.u64()?;
                let required_fee = r.u64()?;
                let round_budget = r.u64()?;
                let planned_rounds = r.u64()?;
                let round_deadline = f64::from_le_bytes(r.array::<8>()?);
                let customer_pubkey = PublicKey(r.array::<32>()?);
                let count = r.u16()? as usize;
                let mut committee = Vec::with_capacity(count);
                for _ in 0..count {
                    committee.push(AccountId(r.u32()?));
                }
                ContractCall::CreateProject {
                    config: ProjectConfig {
                        config_digest,
                        budget,
                        required_fee,
                        round_budget,
                        planned_rounds,
                        committee,
                        customer_pubkey,
                        round_deadline,
                    },
                }
            }
            TAG_REGISTER => ContractCall::RegisterKey {
                pubkey: PublicKey(r.array::<32>()?),
            },
            TAG_JOIN => ContractCall::JoinRound {
                project: ProjectId(r.u64()?),
                round: u64::from(r.u32()?),
                fee: r.u64()?,
            },
            TAG_WRAPPED => {
                let project = ProjectId(r.u64()?);
                let round = u64::from(r.u32()?);
                let base_model = Digest(r.array::<32>()?);
                let count = r.u16()? as usize;
                let mut wrapped = Vec::with_capacity(count);
                for _ in 0..count {
                    let trainer = AccountId(r.u32()?);
                    let len = r.u16()? as usize;
                    wrapped.push((
                        trainer,
                        WrappedKey {
                            round,
                            bytes: r.bytes(len)?.to_vec(),
                        },
                    ));
                }
                ContractCall::PublishWrappedKeys {
                    project,
                    round,
                    base_model,
                    wrapped,
                }
            }
            TAG_UPDATE_REF => ContractCall::SubmitUpdateRef {
                project: ProjectId(r.u64()?),
                round: u64::from(r.u32()?),
                cid: Digest(r.array::<32>()?),
            },
            TAG_PUBLISH => ContractCall::PublishGlobalModel {
                project: ProjectId(r.u64()?),
                round: u64::from(r.u32()?),
                model: Digest(r.array::<32>()?),
                contribution_digest: Digest(r.array::<32>()?),
            },
            TAG_ENDORSE => ContractCall::Endorse {
                project: ProjectId(r.u64()?),
                round: u64::from(r.u32()?),
                model: Digest(r.array::<32>()?),
                contribution_digest: Digest(r.array::<32>()?),
            },
            TAG_SCORES => {
                let project = ProjectId(r.u64()?);
                let round = u64::from(r.u32()?);
                let count = r.u16()? as usize;
                let mut scores = Vec::with_capacity(count);
                for _ in 0..count {
                    let trainer = AccountId(r.u32()?);
                    let score = i64::from_le_bytes(r.array::<8>()?);
                    scores.push((trainer, score));
                }
                ContractCall::SubmitContributions {
                    project,
                    round,
                    scores,
                }
            }
            _ => return Err(ContractError::MalformedCall("unknown tag")),
        };
        if !r.is_empty() {
            return Err(ContractError::MalformedCall("trailing bytes"));
        }
        Ok(call)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn is_empty(&self) -> bool {
        self.at == self.bytes.len()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], ContractError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or(ContractError::MalformedCall("record truncated"))?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ContractError> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, ContractError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, ContractError> {
        Ok(u16::from_le_bytes(self.array::<2>()?))
    }

    fn u32(&mut self) -> Result<u32, ContractError> {
        Ok(u32::from_le_bytes(self.array::<4>()?))
    }

    fn u64(&mut self) -> Result<u64, ContractError> {
        Ok(u64::from_le_bytes(self.array::<8>()?))
    }
}
