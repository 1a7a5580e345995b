//! Server-side aggregation: FedAvg by default, with server-momentum and
//! adaptive variants behind the same [`Aggregator`] plug point.
//!
//! All reductions run in the callers' index order, so results are bit
//! deterministic for a fixed input order.

use serde::{Deserialize, Serialize};

use super::model::{ModelParams, Update};
use super::FlError;

/// Weighted model averaging: `W = sum_i (s_i / sum_j s_j) * W_i`.
pub fn aggregate_fedavg(models: &[ModelParams], sizes: &[u64]) -> Result<ModelParams, FlError> {
    if models.is_empty() || models.len() != sizes.len() {
        return Err(FlError::EmptySet);
    }
    let dim = models[0].dim();
    for m in models {
        if m.dim() != dim {
            return Err(FlError::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
    }
    let total: u64 = sizes.iter().sum();
    if total == 0 {
        return Err(FlError::EmptySet);
    }
    let mut values = vec![0.0; dim];
    for (model, &size) in models.iter().zip(sizes) {
        let weight = size as f64 / total as f64;
        for (acc, v) in values.iter_mut().zip(&model.values) {
            *acc += weight * v;
        }
    }
    Ok(ModelParams {
        arch_tag: models[0].arch_tag,
        values,
    })
}

/// Size-weighted pseudo-gradient `g = sum_i w_i * delta_i`; the FedAvg result
/// over updates is then `W_t - g`.
fn pseudo_gradient(base: &ModelParams, updates: &[Update]) -> Result<Vec<f64>, FlError> {
    if updates.is_empty() {
        return Err(FlError::EmptySet);
    }
    let dim = base.dim();
    let total: u64 = updates.iter().map(|u| u.n_samples).sum();
    if total == 0 {
        return Err(FlError::EmptySet);
    }
    let mut grad = vec![0.0; dim];
    for update in updates {
        if update.delta.len() != dim {
            return Err(FlError::DimensionMismatch {
                expected: dim,
                got: update.delta.len(),
            });
        }
        let weight = update.n_samples as f64 / total as f64;
        for (acc, d) in grad.iter_mut().zip(&update.delta) {
            *acc += weight * d;
        }
    }
    Ok(grad)
}

/// FedAvg over round updates: `W_{t+1} = W_t - sum_i w_i * delta_i`.
pub fn fedavg_updates(base: &ModelParams, updates: &[Update]) -> Result<ModelParams, FlError> {
    let grad = pseudo_gradient(base, updates)?;
    Ok(apply_step(base, &grad))
}

fn apply_step(base: &ModelParams, step: &[f64]) -> ModelParams {
    ModelParams {
        arch_tag: base.arch_tag,
        values: base.values.iter().zip(step).map(|(w, s)| w - s).collect(),
    }
}

/// FedAvg with server momentum: `v <- coef * v + g`, `W <- W_t - v`.
/// With `momentum_coef = 0` this reduces to FedAvg exactly.
pub fn aggregate_fedavgm(
    base: &ModelParams,
    updates: &[Update],
    prev_velocity: Option<&[f64]>,
    momentum_coef: f64,
) -> Result<(ModelParams, Vec<f64>), FlError> {
    let grad = pseudo_gradient(base, updates)?;
    let mut velocity = grad;
    if let Some(prev) = prev_velocity {
        if prev.len() != velocity.len() {
            return Err(FlError::DimensionMismatch {
                expected: velocity.len(),
                got: prev.len(),
            });
        }
        for (v, p) in velocity.iter_mut().zip(prev) {
            *v += momentum_coef * p;
        }
    }
    Ok((apply_step(base, &velocity), velocity))
}

/// Running first/second-moment state for [`aggregate_fedadam`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Server-side adaptive update on the FedAvg pseudo-gradient, without bias
/// correction:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `W <- W_t - lr * m / (sqrt(v) + eps)`.
pub fn aggregate_fedadam(
    base: &ModelParams,
    updates: &[Update],
    state: AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<(ModelParams, AdamState), FlError> {
    let grad = pseudo_gradient(base, updates)?;
    let dim = grad.len();
    let (b1, b2) = betas;
    let mut m = if state.m.is_empty() {
        vec![0.0; dim]
    } else if state.m.len() == dim {
        state.m
    } else {
        return Err(FlError::DimensionMismatch {
            expected: dim,
            got: state.m.len(),
        });
    };
    let mut v = if state.v.is_empty() {
        vec![0.0; dim]
    } else if state.v.len() == dim {
        state.v
    } else {
        return Err(FlError::DimensionMismatch {
            expected: dim,
            got: state.v.len(),
        });
    };
    let mut step = vec![0.0; dim];
    for j in 0..dim {
        m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
        v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
        step[j] = lr * m[j] / (v[j].sqrt() + eps);
    }
    Ok((apply_step(base, &step), AdamState { m, v }))
}

/// Aggregation strategy selected per scenario; implementations may carry
/// server state across rounds.
pub trait Aggregator {
    fn name(&self) -> &'static str;
    fn aggregate(&mut self, base: &ModelParams, updates: &[Update])
        -> Result<ModelParams, FlError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FedAvg;

impl Aggregator for FedAvg {
    fn name(&self) -> &'static str {
        "fedavg"
    }

    fn aggregate(
        &mut self,
        base: &ModelParams,
        updates: &[Update],
    ) -> Result<ModelParams, FlError> {
        fedavg_updates(base, updates)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FedAvgM {
    pub momentum_coef: f64,
    velocity: Option<Vec<f64>>,
}

impl FedAvgM {
    pub fn new(momentum_coef: f64) -> Self {
        Self {
            momentum_coef,
            velocity: None,
        }
    }
}

impl Aggregator for FedAvgM {
    fn name(&self) -> &'static str {
        "fedavgm"
    }

    fn aggregate(
        &mut self,
        base: &ModelParams,
        updates: &[Update],
    ) -> Result<ModelParams, FlError> {
        let (model, velocity) =
            aggregate_fedavgm(base, updates, self.velocity.as_deref(), self.momentum_coef)?;
        self.velocity = Some(velocity);
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct FedAdam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    state: AdamState,
}

impl FedAdam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            betas,
            eps,
            state: AdamState::default(),
        }
    }
}

impl Default for FedAdam {
    fn default() -> Self {
        Self::new(0.1, (0.9, 0.99), 1e-3)
    }
}

impl Aggregator for FedAdam {
    fn name(&self) -> &'static str {
        "fedadam"
    }

    fn aggregate(
        &mut self,
        base: &ModelParams,
        updates: &[Update],
    ) -> Result<ModelParams, FlError> {
        let (model, state) = aggregate_fedadam(
            base,
            updates,
            std::mem::take(&mut self.state),
            self.lr,
            self.betas,
            self.eps,
        )?;
        self.state = state;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::account::AccountId;

    fn model(values: Vec<f64>) -> ModelParams {
        ModelParams {
            arch_tag: 0,
            values,
        }
    }

    fn update(trainer: u32, delta: Vec<f64>, n: u64) -> Update {
        Update {
            delta,
            n_samples: n,
            trainer: AccountId(trainer),
            round: 1,
        }
    }

    #[test]
    fn equal_sizes_give_the_elementwise_mean() {
        let avg = aggregate_fedavg(
            &[model(vec![1.0, 2.0]), model(vec![3.0, 6.0])],
            &[10, 10],
        )
        .unwrap();
        assert_eq!(avg.values, vec![2.0, 4.0]);
    }

    #[test]
    fn sizes_set_the_weights() {
        // sizes (1, 3) -> weights (0.25, 0.75)
        let avg = aggregate_fedavg(&[model(vec![0.0]), model(vec![4.0])], &[1, 3]).unwrap();
        assert_eq!(avg.values, vec![3.0]);
    }

    #[test]
    fn single_participant_is_identity() {
        let m = model(vec![0.123456789, -9.87]);
        let avg = aggregate_fedavg(std::slice::from_ref(&m), &[17]).unwrap();
        assert_eq!(avg, m);
    }

    #[test]
    fn empty_or_mismatched_inputs_fail() {
        assert!(matches!(aggregate_fedavg(&[], &[]), Err(FlError::EmptySet)));
        assert!(matches!(
            aggregate_fedavg(&[model(vec![1.0]), model(vec![1.0, 2.0])], &[1, 1]),
            Err(FlError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            aggregate_fedavg(&[model(vec![1.0])], &[0]),
            Err(FlError::EmptySet)
        ));
    }

    #[test]
    fn idempotent_on_copies_of_one_model() {
        let m = model(vec![0.25, -1.5, 3.75, 0.001]);
        let copies = vec![m.clone(); 7];
        let avg = aggregate_fedavg(&copies, &[3, 1, 4, 1, 5, 9, 2]).unwrap();
        for (a, b) in avg.values.iter().zip(&m.values) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn weights_normalize_to_one() {
        let sizes = [3u64, 1, 4, 1, 5];
        let total: u64 = sizes.iter().sum();
        let sum: f64 = sizes.iter().map(|&s| s as f64 / total as f64).sum();
        assert!((sum - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn zero_momentum_reduces_to_fedavg() {
        let base = model(vec![1.0, 2.0, 3.0]);
        let updates = vec![
            update(1, vec![0.1, -0.2, 0.3], 2),
            update(2, vec![0.5, 0.0, -0.1], 6),
        ];
        let plain = fedavg_updates(&base, &updates).unwrap();
        let (with_momentum, _) = aggregate_fedavgm(&base, &updates, None, 0.0).unwrap();
        assert_eq!(plain, with_momentum);
    }

    #[test]
    fn zero_pseudo_gradient_leaves_the_model_unchanged() {
        let base = model(vec![1.0, -2.0]);
        let updates = vec![update(1, vec![0.0, 0.0], 5)];
        let (m, _) = aggregate_fedavgm(&base, &updates, None, 0.9).unwrap();
        assert_eq!(m, base);
        let (a, _) =
            aggregate_fedadam(&base, &updates, AdamState::default(), 0.1, (0.9, 0.99), 1e-8)
                .unwrap();
        assert_eq!(a, base);
    }

    /// Three rounds of server momentum against the scalar recurrence
    /// `v_t = c*v_{t-1} + g_t`, `w_t = w_{t-1} - v_t`, computed by hand on a
    /// one-dimensional toy.
    #[test]
    fn momentum_trajectory_matches_scalar_recurrence() {
        let coef = 0.5;
        let gs = [0.2, -0.1, 0.4];
        let mut w_expected = 1.0;
        let mut v_expected = 0.0;

        let mut agg = FedAvgM::new(coef);
        let mut base = model(vec![1.0]);
        for g in gs {
            let updates = vec![update(1, vec![g], 3)];
            base = agg.aggregate(&base, &updates).unwrap();
            v_expected = coef * v_expected + g;
            w_expected -= v_expected;
            assert!((base.values[0] - w_expected).abs() < 1e-12);
        }
    }

    /// FedAdam against the same style of scalar recurrence.
    #[test]
    fn adam_trajectory_matches_scalar_recurrence() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.99, 1e-8);
        let gs = [0.3, 0.3, -0.2];
        let (mut m_e, mut v_e, mut w_e) = (0.0, 0.0, 2.0);

        let mut agg = FedAdam::new(lr, (b1, b2), eps);
        let mut base = model(vec![2.0]);
        for g in gs {
            base = agg.aggregate(&base, &[update(1, vec![g], 1)]).unwrap();
            m_e = b1 * m_e + (1.0 - b1) * g;
            v_e = b2 * v_e + (1.0 - b2) * g * g;
            w_e -= lr * m_e / (f64::sqrt(v_e) + eps);
            assert!((base.values[0] - w_e).abs() < 1e-12);
        }
    }
}
