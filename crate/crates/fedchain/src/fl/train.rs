//! Local SGD on a trainer's shard, plus model evaluation.
//!
//! The update rule is plain minibatch SGD, `W <- W - lr * grad`, run for a
//! fixed number of local iterations. The returned delta follows the
//! `delta = W_t - W_local` convention, which makes the delta equal to the
//! local model "from the server's perspective": downstream code only ever
//! reconstructs the local model as `W_t - delta`, and that reconstruction is
//! bit-exact by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::model::{arch_dims, ModelParams, Update};
use super::task::{Dataset, Shard};
use super::FlError;

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Local learning rate.
    pub lr: f64,
    /// Number of local SGD iterations per round.
    pub local_iters: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.3,
            local_iters: 5,
            batch_size: 20,
            seed: 0,
        }
    }
}

/// A differentiable empirical loss over a sample subset.
pub trait Objective {
    /// Mean loss and its gradient over `data` restricted to `idx`.
    fn loss_grad(&self, w: &[f64], data: &Dataset, idx: &[usize]) -> (f64, Vec<f64>);
}

/// Multinomial logistic regression. Weight layout: `w[c * d + j]` for class
/// `c`, feature `j`, followed by `k` bias terms.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxRegression {
    pub n_features: usize,
    pub n_classes: usize,
}

impl SoftmaxRegression {
    pub fn from_arch(tag: u32) -> Self {
        let (n_features, n_classes) = arch_dims(tag);
        Self {
            n_features,
            n_classes,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_features * self.n_classes + self.n_classes
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let (d, k) = (self.n_features, self.n_classes);
        for c in 0..k {
            let mut z = w[d * k + c];
            let row = &w[c * d..(c + 1) * d];
            for j in 0..d {
                z += row[j] * x[j];
            }
            out[c] = z;
        }
    }
}

/// Numerically stable softmax of a logit vector.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Objective for SoftmaxRegression {
    fn loss_grad(&self, w: &[f64], data: &Dataset, idx: &[usize]) -> (f64, Vec<f64>) {
        let (d, k) = (self.n_features, self.n_classes);
        let mut grad = vec![0.0; self.dim()];
        let mut loss = 0.0;
        let mut logits = vec![0.0; k];
        let scale = 1.0 / idx.len() as f64;
        for &i in idx {
            let x = data.row(i);
            let y = data.labels[i] as usize;
            self.logits(w, x, &mut logits);
            let probs = softmax_probs(&logits);
            loss -= probs[y].max(f64::MIN_POSITIVE).ln() * scale;
            for c in 0..k {
                let err = (probs[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                let row = &mut grad[c * d..(c + 1) * d];
                for j in 0..d {
                    row[j] += err * x[j];
                }
                grad[d * k + c] += err;
            }
        }
        (loss, grad)
    }
}

/// Runs `local_iters` minibatch SGD steps of the logistic objective on the
/// shard and returns the delta `W_t - W_local`. Deterministic under
/// `cfg.seed`.
pub fn local_train(
    model: &ModelParams,
    shard: &Shard,
    cfg: &TrainConfig,
    round: u64,
) -> Result<Update, FlError> {
    let objective = SoftmaxRegression::from_arch(model.arch_tag);
    if objective.n_features != shard.data.n_features {
        return Err(FlError::DimensionMismatch {
            expected: objective.n_features,
            got: shard.data.n_features,
        });
    }
    local_train_with(&objective, model, shard, cfg, round)
}

/// Generic SGD loop over any [`Objective`]; the public entry point for
/// alternative local losses.
pub fn local_train_with<O: Objective>(
    objective: &O,
    model: &ModelParams,
    shard: &Shard,
    cfg: &TrainConfig,
    round: u64,
) -> Result<Update, FlError> {
    let n = shard.data.len();
    if n == 0 {
        return Err(FlError::EmptySet);
    }
    let mut w = model.values.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let full: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.local_iters {
        let batch: Vec<usize> = if cfg.batch_size >= n {
            full.clone()
        } else {
            rand::seq::index::sample(&mut rng, n, cfg.batch_size).into_vec()
        };
        let (_, grad) = objective.loss_grad(&w, &shard.data, &batch);
        if grad.len() != w.len() {
            return Err(FlError::DimensionMismatch {
                expected: w.len(),
                got: grad.len(),
            });
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= cfg.lr * gj;
        }
    }
    let delta: Vec<f64> = model.values.iter().zip(&w).map(|(b, t)| b - t).collect();
    Ok(Update {
        delta,
        n_samples: n as u64,
        trainer: shard.owner,
        round,
    })
}

/// Mean cross-entropy loss and argmax accuracy on a dataset. Pure.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<(f64, f64), FlError> {
    let objective = SoftmaxRegression::from_arch(model.arch_tag);
    if objective.dim() != model.dim() {
        return Err(FlError::DimensionMismatch {
            expected: objective.dim(),
            got: model.dim(),
        });
    }
    if objective.n_features != data.n_features {
        return Err(FlError::DimensionMismatch {
            expected: objective.n_features,
            got: data.n_features,
        });
    }
    if data.is_empty() {
        return Err(FlError::EmptySet);
    }
    let mut logits = vec![0.0; objective.n_classes];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let y = data.labels[i] as usize;
        objective.logits(&model.values, data.row(i), &mut logits);
        let probs = softmax_probs(&logits);
        loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap();
        if pred == y {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::model::arch_tag;
    use crate::fl::task::{make_task, Partition, TaskParams};
    use rand::{Rng, SeedableRng};

    fn small_task(seed: u64) -> (Vec<Shard>, Dataset) {
        make_task(&TaskParams {
            n_trainers: 3,
            samples_per_trainer: 30,
            n_features: 4,
            n_classes: 3,
            val_samples: 300,
            partition: Partition::Iid,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_iterations_give_zero_delta() {
        let (shards, _) = small_task(1);
        let model = ModelParams::zeros(4, 3);
        let cfg = TrainConfig {
            local_iters: 0,
            ..TrainConfig::default()
        };
        let update = local_train(&model, &shards[0], &cfg, 1).unwrap();
        assert!(update.delta.iter().all(|&d| d == 0.0));
        assert_eq!(update.n_samples, 30);
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let (shards, _) = small_task(2);
        let model = ModelParams::zeros(4, 3);
        let cfg = TrainConfig {
            seed: 99,
            ..TrainConfig::default()
        };
        let a = local_train(&model, &shards[0], &cfg, 1).unwrap();
        let b = local_train(&model, &shards[0], &cfg, 1).unwrap();
        assert_eq!(a, b);
    }

    /// One full-batch step on a quadratic surrogate `f(w) = 0.5 ||w - c||^2`
    /// must produce exactly `delta = lr * (w0 - c)`: the hand-computed
    /// gradient of the closed-form loss at the starting point.
    #[test]
    fn single_step_matches_hand_computed_gradient() {
        struct Quadratic {
            center: Vec<f64>,
        }
        impl Objective for Quadratic {
            fn loss_grad(&self, w: &[f64], _: &Dataset, _: &[usize]) -> (f64, Vec<f64>) {
                let grad: Vec<f64> = w.iter().zip(&self.center).map(|(w, c)| w - c).collect();
                let loss = 0.5 * grad.iter().map(|g| g * g).sum::<f64>();
                (loss, grad)
            }
        }
        let (shards, _) = small_task(3);
        let start = vec![1.0, -2.0, 0.5];
        let model = ModelParams {
            arch_tag: 0,
            values: start.clone(),
        };
        let center = vec![0.0, 1.0, 0.5];
        let cfg = TrainConfig {
            lr: 0.1,
            local_iters: 1,
            batch_size: usize::MAX,
            seed: 0,
        };
        let quadratic = Quadratic {
            center: center.clone(),
        };
        let update = local_train_with(&quadratic, &model, &shards[0], &cfg, 1).unwrap();
        for ((d, w0), c) in update.delta.iter().zip(&start).zip(&center) {
            assert_eq!(*d, 0.1 * (w0 - c));
        }
    }

    /// Analytic softmax gradient against central finite differences at 100
    /// random points.
    #[test]
    fn gradient_matches_finite_differences() {
        let (shards, _) = small_task(4);
        let objective = SoftmaxRegression {
            n_features: 4,
            n_classes: 3,
        };
        let idx: Vec<usize> = (0..shards[0].data.len()).collect();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let w: Vec<f64> = (0..objective.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, grad) = objective.loss_grad(&w, &shards[0].data, &idx);
            let j = rng.gen_range(0..w.len());
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let (lp, _) = objective.loss_grad(&wp, &shards[0].data, &idx);
            let (lm, _) = objective.loss_grad(&wm, &shards[0].data, &idx);
            let numeric = (lp - lm) / (2.0 * h);
            let denom = grad[j].abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((grad[j] - numeric) / denom).abs() <= 1e-5,
                "coordinate {j}: analytic {} vs numeric {numeric}",
                grad[j]
            );
        }
    }

    /// A uniformly random model scores chance accuracy on the balanced task:
    /// the Monte-Carlo estimate over 10 seeds stays within 1/k +- 0.05.
    #[test]
    fn random_model_scores_chance_accuracy() {
        let (_, valset) = make_task(&TaskParams {
            val_samples: 2000,
            ..TaskParams::default()
        })
        .unwrap();
        let k = 4;
        let mut acc_sum = 0.0;
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let model = ModelParams {
                arch_tag: arch_tag(16, k),
                values: (0..16 * k + k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            acc_sum += evaluate(&model, &valset).unwrap().1;
        }
        let mean = acc_sum / 10.0;
        assert!(
            (mean - 1.0 / k as f64).abs() < 0.05,
            "mean accuracy {mean} strays from chance"
        );
    }

    #[test]
    fn confident_correct_predictor_has_near_zero_loss() {
        // Two one-feature classes at x = -1 and x = +1; a steep weight makes
        // the predictor arbitrarily confident.
        let data = Dataset {
            features: vec![-1.0, 1.0],
            labels: vec![0, 1],
            n_features: 1,
        };
        let model = ModelParams {
            arch_tag: arch_tag(1, 2),
            values: vec![-50.0, 50.0, 0.0, 0.0],
        };
        let (loss, acc) = evaluate(&model, &data).unwrap();
        assert!(loss < 1e-6);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let (_, valset) = small_task(5);
        let model = ModelParams::zeros(7, 3);
        assert!(matches!(
            evaluate(&model, &valset),
            Err(FlError::DimensionMismatch { .. })
        ));
    }

    /// Reconstruction identity: `W_t - delta` recovers the local model, and
    /// re-deriving the delta from that reconstruction is bit-exact.
    #[test]
    fn reconstruction_is_bit_exact() {
        let (shards, _) = small_task(6);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(12);
        let model = ModelParams {
            arch_tag: arch_tag(4, 3),
            values: (0..4 * 3 + 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let update = local_train(&model, &shards[1], &TrainConfig::default(), 2).unwrap();
        let local = update.local_model(&model).unwrap();
        let rederived: Vec<f64> = model
            .values
            .iter()
            .zip(&local.values)
            .map(|(b, w)| b - w)
            .collect();
        assert_eq!(rederived, update.delta);
    }

    proptest::proptest! {
        /// The subtraction canonicalization behind the reconstruction
        /// identity: for any base and raw weights, `base - (base - (base -
        /// raw))` re-yields `base - raw` exactly.
        #[test]
        fn delta_round_trip_is_stable(base in -1e6f64..1e6, raw in -1e6f64..1e6) {
            let delta = base - raw;
            let local = base - delta;
            let delta2 = base - local;
            proptest::prop_assert_eq!(delta.to_bits(), delta2.to_bits());
        }
    }
}
