//! Flat parameter vectors and their byte-exact wire format.
//!
//! Frame layout, little-endian throughout:
//!
//! ```text
//! kind      u8    1 = global model, 2 = trainer update
//! arch_tag  u32   (n_features << 16) | n_classes for the logistic family
//! dim       u32   parameter count
//! round     u32
//! sender    u32   account id
//! n_samples u64   shard size for updates, 0 for models
//! values    dim * f64
//! padding   zero bytes up to the inflation target
//! ```
//!
//! Parameters are 8-byte reals in fixed order, so content ids and gas charges
//! are reproducible across platforms.

use serde::{Deserialize, Serialize};

use super::FlError;
use crate::account::AccountId;
use crate::crypto::Digest;

pub const FRAME_HEADER_LEN: usize = 1 + 4 + 4 + 4 + 4 + 8;

const KIND_MODEL: u8 = 1;
const KIND_UPDATE: u8 = 2;

/// Global-model parameters as a flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch_tag: u32,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Zero-initialized model for the logistic family over `n_features`
    /// inputs and `n_classes` outputs.
    pub fn zeros(n_features: usize, n_classes: usize) -> Self {
        Self {
            arch_tag: arch_tag(n_features, n_classes),
            values: vec![0.0; n_features * n_classes + n_classes],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Commitment digest over the canonical (unpadded, header-free)
    /// serialization: `arch_tag || dim || values`.
    pub fn digest(&self) -> Digest {
        let mut bytes = Vec::with_capacity(8 + self.values.len() * 8);
        bytes.extend_from_slice(&self.arch_tag.to_le_bytes());
        bytes.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Digest::of(&bytes)
    }
}

pub fn arch_tag(n_features: usize, n_classes: usize) -> u32 {
    ((n_features as u32) << 16) | n_classes as u32
}

pub fn arch_dims(tag: u32) -> (usize, usize) {
    ((tag >> 16) as usize, (tag & 0xffff) as usize)
}

/// One trainer's round contribution: `delta = W_t - W_local`, so the local
/// model is recovered as `W_t - delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub delta: Vec<f64>,
    pub n_samples: u64,
    pub trainer: AccountId,
    pub round: u64,
}

impl Update {
    /// Reconstructs the trained local model relative to `base`.
    pub fn local_model(&self, base: &ModelParams) -> Result<ModelParams, FlError> {
        if base.dim() != self.delta.len() {
            return Err(FlError::DimensionMismatch {
                expected: base.dim(),
                got: self.delta.len(),
            });
        }
        Ok(ModelParams {
            arch_tag: base.arch_tag,
            values: base
                .values
                .iter()
                .zip(&self.delta)
                .map(|(w, d)| w - d)
                .collect(),
        })
    }
}

/// A decoded wire frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Model {
        model: ModelParams,
        round: u64,
        sender: AccountId,
    },
    Update(Update, u32),
}

pub fn encode_model(
    model: &ModelParams,
    round: u64,
    sender: AccountId,
    pad_to: usize,
) -> Vec<u8> {
    encode_frame(
        KIND_MODEL,
        model.arch_tag,
        &model.values,
        round,
        sender,
        0,
        pad_to,
    )
}

pub fn encode_update(update: &Update, arch: u32, pad_to: usize) -> Vec<u8> {
    encode_frame(
        KIND_UPDATE,
        arch,
        &update.delta,
        update.round,
        update.trainer,
        update.n_samples,
        pad_to,
    )
}

fn encode_frame(
    kind: u8,
    arch: u32,
    values: &[f64],
    round: u64,
    sender: AccountId,
    n_samples: u64,
    pad_to: usize,
) -> Vec<u8> {
    let body = FRAME_HEADER_LEN + values.len() * 8;
    let mut out = Vec::with_capacity(body.max(pad_to));
    out.push(kind);
    out.extend_from_slice(&arch.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    out.extend_from_slice(&(round as u32).to_le_bytes());
    out.extend_from_slice(&sender.0.to_le_bytes());
    out.extend_from_slice(&n_samples.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if out.len() < pad_to {
        out.resize(pad_to, 0);
    }
    out
}

/// Decodes a frame, ignoring any zero padding past the value block.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FlError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FlError::MalformedFrame("frame shorter than header"));
    }
    let kind = bytes[0];
    let le_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let arch = le_u32(1);
    let dim = le_u32(5) as usize;
    let round = u64::from(le_u32(9));
    let sender = AccountId(le_u32(13));
    let n_samples = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
    let need = FRAME_HEADER_LEN + dim * 8;
    if bytes.len() < need {
        return Err(FlError::MalformedFrame("value block truncated"));
    }
    let values: Vec<f64> = bytes[FRAME_HEADER_LEN..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match kind {
        KIND_MODEL => Ok(Frame::Model {
            model: ModelParams {
                arch_tag: arch,
                values,
            },
            round,
            sender,
        }),
        KIND_UPDATE => Ok(Frame::Update(
            Update {
                delta: values,
                n_samples,
                trainer: sender,
                round,
            },
            arch,
        )),
        _ => Err(FlError::MalformedFrame("unknown frame kind")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_frame_round_trips() {
        let model = ModelParams {
            arch_tag: arch_tag(3, 2),
            values: vec![0.5, -1.25, 3.0, 0.0, f64::MIN_POSITIVE, -0.0, 7.5, 2.0],
        };
        let bytes = encode_model(&model, 4, AccountId(0), 0);
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + 8 * 8);
        match decode_frame(&bytes).unwrap() {
            Frame::Model {
                model: decoded,
                round,
                sender,
            } => {
                assert_eq!(decoded, model);
                assert_eq!(round, 4);
                assert_eq!(sender, AccountId(0));
            }
            other => panic!("wrong frame: {other:?}"),
        }
    }

    #[test]
    fn padding_inflates_without_changing_content() {
        let update = Update {
            delta: vec![1.0, 2.0],
            n_samples: 17,
            trainer: AccountId(3),
            round: 2,
        };
        let plain = encode_update(&update, arch_tag(1, 2), 0);
        let padded = encode_update(&update, arch_tag(1, 2), 4096);
        assert_eq!(padded.len(), 4096);
        assert!(padded[plain.len()..].iter().all(|&b| b == 0));
        let Frame::Update(decoded, _) = decode_frame(&padded).unwrap() else {
            panic!("wrong frame kind");
        };
        assert_eq!(decoded, update);
    }

    #[test]
    fn truncated_frames_are_rejected() {
        let model = ModelParams::zeros(2, 2);
        let bytes = encode_model(&model, 0, AccountId(0), 0);
        assert!(decode_frame(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_frame(&bytes[..10]).is_err());
    }

    #[test]
    fn digest_tracks_values_bit_for_bit() {
        let a = ModelParams {
            arch_tag: 1,
            values: vec![1.0, 2.0],
        };
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.values[1] = 2.0 + f64::EPSILON;
        assert_ne!(a.digest(), b.digest());
    }
}
