//! Synthetic classification task and its partition into trainer shards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::account::AccountId;

/// How samples are split across trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Partition {
    /// Disjoint, identically distributed shards of equal size.
    Iid,
    /// Each trainer draws its home class with probability `skew`, otherwise
    /// uniformly. `skew = 1.0` gives single-class shards.
    LabelSkew { skew: f64 },
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub n_trainers: usize,
    pub samples_per_trainer: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub val_samples: usize,
    pub partition: Partition,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            n_trainers: 5,
            samples_per_trainer: 40,
            n_features: 16,
            n_classes: 4,
            val_samples: 400,
            partition: Partition::Iid,
            seed: 0,
        }
    }
}

/// A labeled sample set, row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub n_features: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    fn with_capacity(n: usize, n_features: usize) -> Self {
        Self {
            features: Vec::with_capacity(n * n_features),
            labels: Vec::with_capacity(n),
            n_features,
        }
    }

    fn push(&mut self, features: &[f64], label: u8) {
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }
}

/// One trainer's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub data: Dataset,
    pub owner: AccountId,
}

/// Builds the synthetic task: Gaussian class clusters, pairwise-disjoint
/// shards, and a held-out validation set (kept by the customer).
///
/// Deterministic: the same parameters produce identical bytes.
pub fn make_task(params: &TaskParams) -> Result<(Vec<Shard>, Dataset), FlError> {
    if params.n_trainers == 0 || params.samples_per_trainer == 0 || params.val_samples == 0 {
        return Err(FlError::InvalidPartition("all counts must be positive"));
    }
    if !(2..=10).contains(&params.n_classes) {
        return Err(FlError::InvalidPartition("n_classes must lie in 2..=10"));
    }
    if params.n_features == 0 {
        return Err(FlError::InvalidPartition("n_features must be positive"));
    }
    if let Partition::LabelSkew { skew } = params.partition {
        if !(0.0..=1.0).contains(&skew) {
            return Err(FlError::InvalidPartition("skew must lie in [0, 1]"));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let d = params.n_features;
    let k = params.n_classes;

    // Cluster centers spread so classes are separable but not trivial.
    let spread = 2.0 / (d as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| gaussian(&mut rng) * 2.0).collect())
        .collect();

    let mut draw = |class: u8, buf: &mut Vec<f64>| {
        buf.clear();
        let mean = &means[class as usize];
        for item in mean.iter().take(d) {
            buf.push(item + gaussian(&mut rng) * spread * 2.0);
        }
    };

    let mut shards = Vec::with_capacity(params.n_trainers);
    let mut buf = Vec::with_capacity(d);
    for t in 0..params.n_trainers {
        let mut data = Dataset::with_capacity(params.samples_per_trainer, d);
        for _ in 0..params.samples_per_trainer {
            let class = match params.partition {
                Partition::Iid => rng.gen_range(0..k) as u8,
                Partition::LabelSkew { skew } => {
                    if rng.gen::<f64>() < skew {
                        (t % k) as u8
                    } else {
                        rng.gen_range(0..k) as u8
                    }
                }
            };
            draw(class, &mut buf);
            data.push(&buf, class);
        }
        shards.push(Shard {
            data,
            // Trainer accounts are assigned by the orchestrator; shard owners
            // use the conventional ids 1..=n.
            owner: AccountId(t as u32 + 1),
        });
    }

    let mut valset = Dataset::with_capacity(params.val_samples, d);
    for i in 0..params.val_samples {
        // Balanced validation classes for stable metrics.
        let class = (i % k) as u8;
        draw(class, &mut buf);
        valset.push(&buf, class);
    }

    Ok((shards, valset))
}

/// Standard normal via Box-Muller, driven by the task RNG.
fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_shards_are_equal_sized_and_disjoint() {
        let params = TaskParams {
            n_trainers: 5,
            ..TaskParams::default()
        };
        let (shards, valset) = make_task(&params).unwrap();
        assert_eq!(shards.len(), 5);
        assert!(shards
            .iter()
            .all(|s| s.data.len() == params.samples_per_trainer));
        assert_eq!(valset.len(), params.val_samples);
        // Distinct owners, and rows generated independently per shard.
        for i in 0..shards.len() {
            for j in i + 1..shards.len() {
                assert_ne!(shards[i].owner, shards[j].owner);
                assert_ne!(shards[i].data.features, shards[j].data.features);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let params = TaskParams::default();
        let (a_shards, a_val) = make_task(&params).unwrap();
        let (b_shards, b_val) = make_task(&params).unwrap();
        assert_eq!(a_shards, b_shards);
        assert_eq!(a_val, b_val);
    }

    #[test]
    fn full_skew_gives_single_class_shards() {
        let params = TaskParams {
            partition: Partition::LabelSkew { skew: 1.0 },
            ..TaskParams::default()
        };
        let (shards, _) = make_task(&params).unwrap();
        for (t, shard) in shards.iter().enumerate() {
            let home = (t % params.n_classes) as u8;
            assert!(shard.data.labels.iter().all(|&l| l == home));
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let zero = TaskParams {
            n_trainers: 0,
            ..TaskParams::default()
        };
        assert!(matches!(make_task(&zero), Err(FlError::InvalidPartition(_))));
        let bad_skew = TaskParams {
            partition: Partition::LabelSkew { skew: 1.5 },
            ..TaskParams::default()
        };
        assert!(matches!(
            make_task(&bad_skew),
            Err(FlError::InvalidPartition(_))
        ));
    }
}
