//! Contribution valuation over a round's updates and conversion of scores
//! into the on-chain reward allocation.
//!
//! The coalition utility is grounded in the customer's private validation
//! set: `U(S) = metric(FedAvg over S) - metric(W_t)`, with `U(empty) = 0` by
//! that normalization. Both built-in evaluators (exact Shapley,
//! leave-one-out) and any future estimator share the
//! [`ContributionEvaluator`] interface.
//!
//! Negative scores are clipped rather than shifted at allocation time —
//! shifting would let a harmful update dilute everyone else's rewards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::account::AccountId;
use crate::contract::RewardAllocation;
use crate::crypto::Digest;
use crate::fl::{aggregate_fedavg, evaluate, Dataset, FlError, ModelParams, Update};

/// Scores travel on-chain as fixed-point integers: `score * 10^6`.
pub const SCORE_FIXED_SCALE: f64 = 1e6;

/// Validation metric backing the coalition utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Negative mean validation loss; smoother than accuracy at desk scale.
    #[default]
    NegLoss,
    Accuracy,
}

/// Everything needed to value one round.
#[derive(Debug)]
pub struct RoundContext<'a> {
    pub base_model: &'a ModelParams,
    /// Round updates keyed by trainer; iteration order fixes player order.
    pub updates: &'a BTreeMap<AccountId, Update>,
    pub valset: &'a Dataset,
    pub metric: Metric,
}

impl RoundContext<'_> {
    /// Players in ascending account order.
    pub fn participants(&self) -> Vec<AccountId> {
        self.updates.keys().copied().collect()
    }

    fn metric_of(&self, model: &ModelParams) -> Result<f64, FlError> {
        let (loss, accuracy) = evaluate(model, self.valset)?;
        Ok(match self.metric {
            Metric::NegLoss => -loss,
            Metric::Accuracy => accuracy,
        })
    }

    /// Aggregated model of a coalition: size-weighted FedAvg over the
    /// members' reconstructed local models.
    fn coalition_model(&self, members: &[AccountId]) -> Result<ModelParams, FlError> {
        let mut models = Vec::with_capacity(members.len());
        let mut sizes = Vec::with_capacity(members.len());
        for id in members {
            let update = &self.updates[id];
            models.push(update.local_model(self.base_model)?);
            sizes.push(update.n_samples);
        }
        aggregate_fedavg(&models, &sizes)
    }
}

/// One trainer's round score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContributionScore {
    pub trainer: AccountId,
    pub score: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Shapley,
    Loo,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ContributionError {
    #[error("exact enumeration supports at most 12 players, got {0}")]
    TooManyPlayers(usize),
    #[error(transparent)]
    Model(#[from] FlError),
}

/// Coalition utility `U(S)`. The empty coalition is 0 by normalization.
pub fn utility(ctx: &RoundContext<'_>, members: &[AccountId]) -> Result<f64, ContributionError> {
    if members.is_empty() {
        return Ok(0.0);
    }
    let model = ctx.coalition_model(members)?;
    let baseline = ctx.metric_of(ctx.base_model)?;
    Ok(ctx.metric_of(&model)? - baseline)
}

/// Precomputed utility over all 2^n coalitions, indexed by bitmask in player
/// order. Evaluations are independent; the table is filled in mask order so
/// results are deterministic.
fn utility_table(ctx: &RoundContext<'_>) -> Result<Vec<f64>, ContributionError> {
    let players = ctx.participants();
    let n = players.len();
    let baseline = ctx.metric_of(ctx.base_model)?;
    let mut table = vec![0.0; 1 << n];
    let mut members = Vec::with_capacity(n);
    for (mask, slot) in table.iter_mut().enumerate().skip(1) {
        members.clear();
        for (i, id) in players.iter().enumerate() {
            if mask & (1 << i) != 0 {
                members.push(*id);
            }
        }
        let model = ctx.coalition_model(&members)?;
        *slot = ctx.metric_of(&model)? - baseline;
    }
    Ok(table)
}

/// Exact Shapley values from a full utility table (`table[mask]` with
/// `table[0] = U(empty)`), by subset enumeration with the classic
/// `|S|! (n-|S|-1)! / n!` weights. Public so alternative utilities and test
/// oracles can reuse the enumeration.
pub fn shapley_from_table(n: usize, table: &[f64]) -> Vec<f64> {
    assert_eq!(table.len(), 1 << n, "table must cover all 2^n coalitions");
    let mut factorial = vec![1.0; n + 1];
    for i in 1..=n {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut values = vec![0.0; n];
    for (i, value) in values.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..table.len() {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[n - s - 1] / factorial[n];
            *value += weight * (table[mask | bit] - table[mask]);
        }
    }
    values
}

/// Exact Shapley scores for a round, by full subset enumeration.
pub fn shapley_exact(ctx: &RoundContext<'_>) -> Result<Vec<ContributionScore>, ContributionError> {
    let players = ctx.participants();
    let n = players.len();
    if n > 12 {
        return Err(ContributionError::TooManyPlayers(n));
    }
    let table = utility_table(ctx)?;
    let values = shapley_from_table(n, &table);
    Ok(players
        .into_iter()
        .zip(values)
        .map(|(trainer, score)| ContributionScore {
            trainer,
            score,
            method: Method::Shapley,
        })
        .collect())
}

/// Leave-one-out scores: `c_i = U(N) - U(N \ {i})`, all evaluated on the same
/// validation set.
pub fn loo(ctx: &RoundContext<'_>) -> Result<Vec<ContributionScore>, ContributionError> {
    let players = ctx.participants();
    let full = utility(ctx, &players)?;
    let mut scores = Vec::with_capacity(players.len());
    for leave in &players {
        let rest: Vec<AccountId> = players.iter().copied().filter(|p| p != leave).collect();
        scores.push(ContributionScore {
            trainer: *leave,
            score: full - utility(ctx, &rest)?,
            method: Method::Loo,
        });
    }
    Ok(scores)
}

/// Pluggable valuation strategy. Estimator-style evaluators (Monte-Carlo
/// Shapley, gradient-similarity scores) slot in behind this same interface.
pub trait ContributionEvaluator {
    fn name(&self) -> &'static str;
    fn scores(&self, ctx: &RoundContext<'_>) -> Result<Vec<ContributionScore>, ContributionError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ShapleyEvaluator;

impl ContributionEvaluator for ShapleyEvaluator {
    fn name(&self) -> &'static str {
        "shapley"
    }

    fn scores(&self, ctx: &RoundContext<'_>) -> Result<Vec<ContributionScore>, ContributionError> {
        shapley_exact(ctx)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LooEvaluator;

impl ContributionEvaluator for LooEvaluator {
    fn name(&self) -> &'static str {
        "loo"
    }

    fn scores(&self, ctx: &RoundContext<'_>) -> Result<Vec<ContributionScore>, ContributionError> {
        loo(ctx)
    }
}

/// Converts a real score to its on-chain fixed-point form.
pub fn score_to_fixed(score: f64) -> i64 {
    (score * SCORE_FIXED_SCALE).round() as i64
}

/// Fixed-point score records ready for the contract call.
pub fn to_fixed_scores(scores: &[ContributionScore]) -> Vec<(AccountId, i64)> {
    let mut fixed: Vec<(AccountId, i64)> = scores
        .iter()
        .map(|s| (s.trainer, score_to_fixed(s.score)))
        .collect();
    fixed.sort_by_key(|(id, _)| *id);
    fixed
}

/// Canonical byte serialization of a score list: `(round u32 || trainer u32
/// || score i64)` per record, ascending by trainer. Endorsements commit to
/// the digest of exactly these bytes.
pub fn encode_scores(round: u64, scores: &[(AccountId, i64)]) -> Vec<u8> {
    debug_assert!(scores.windows(2).all(|w| w[0].0 < w[1].0));
    let mut out = Vec::with_capacity(scores.len() * 16);
    for (trainer, score) in scores {
        out.extend_from_slice(&(round as u32).to_le_bytes());
        out.extend_from_slice(&trainer.0.to_le_bytes());
        out.extend_from_slice(&score.to_le_bytes());
    }
    out
}

pub fn scores_digest(round: u64, scores: &[(AccountId, i64)]) -> Digest {
    Digest::of(&encode_scores(round, scores))
}

/// Proportional allocation with clipping: non-positive scores earn nothing;
/// payouts floor to integer tokens and the remainder refunds to the
/// customer. If no score is positive the whole budget refunds.
pub fn allocate(round: u64, scores: &[(AccountId, i64)], budget: u64) -> RewardAllocation {
    let clipped: Vec<u128> = scores.iter().map(|(_, s)| (*s).max(0) as u128).collect();
    let total: u128 = clipped.iter().sum();
    let mut payouts = BTreeMap::new();
    let mut paid = 0u64;
    if total > 0 {
        for ((trainer, _), weight) in scores.iter().zip(&clipped) {
            let amount = (u128::from(budget) * weight / total) as u64;
            payouts.insert(*trainer, amount);
            paid += amount;
        }
    } else {
        for (trainer, _) in scores {
            payouts.insert(*trainer, 0);
        }
    }
    RewardAllocation {
        round,
        payouts,
        refund: budget - paid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::{local_train, make_task, ModelParams, TaskParams, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn trained_round(
        n: usize,
        seed: u64,
    ) -> (ModelParams, BTreeMap<AccountId, Update>, Dataset) {
        let (shards, valset) = make_task(&TaskParams {
            n_trainers: n,
            samples_per_trainer: 24,
            n_features: 4,
            n_classes: 3,
            val_samples: 120,
            seed,
            ..TaskParams::default()
        })
        .unwrap();
        let base = ModelParams::zeros(4, 3);
        let mut updates = BTreeMap::new();
        for shard in &shards {
            let cfg = TrainConfig {
                seed: seed ^ u64::from(shard.owner.0),
                ..TrainConfig::default()
            };
            let u = local_train(&base, shard, &cfg, 1).unwrap();
            updates.insert(shard.owner, u);
        }
        (base, updates, valset)
    }

    #[test]
    fn empty_coalition_has_zero_utility() {
        let (base, updates, valset) = trained_round(3, 1);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        assert_eq!(utility(&ctx, &[]).unwrap(), 0.0);
    }

    #[test]
    fn zero_update_singleton_has_zero_utility() {
        let (base, mut updates, valset) = trained_round(2, 2);
        let id = AccountId(1);
        updates.get_mut(&id).unwrap().delta.iter_mut().for_each(|d| *d = 0.0);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        // Aggregating only the zero update reproduces W_t.
        assert_eq!(utility(&ctx, &[id]).unwrap(), 0.0);
    }

    #[test]
    fn grand_coalition_matches_published_gain() {
        let (base, updates, valset) = trained_round(3, 3);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        let players = ctx.participants();
        let global = ctx.coalition_model(&players).unwrap();
        let expected = ctx.metric_of(&global).unwrap() - ctx.metric_of(&base).unwrap();
        assert_eq!(utility(&ctx, &players).unwrap(), expected);
    }

    #[test]
    fn loo_of_single_trainer_is_its_own_utility() {
        let (base, updates, valset) = trained_round(1, 4);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        let scores = loo(&ctx).unwrap();
        assert_eq!(scores.len(), 1);
        let direct = utility(&ctx, &[scores[0].trainer]).unwrap();
        assert_eq!(scores[0].score, direct);
    }

    #[test]
    fn duplicate_equal_updates_have_zero_loo() {
        let (base, mut updates, valset) = trained_round(2, 5);
        let clone_of = updates[&AccountId(1)].clone();
        let second = updates.get_mut(&AccountId(2)).unwrap();
        second.delta = clone_of.delta.clone();
        second.n_samples = clone_of.n_samples;
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        // Removing either duplicate leaves the same averaged model, so both
        // LOO scores vanish (up to aggregation fp noise).
        for s in loo(&ctx).unwrap() {
            assert!(s.score.abs() < 1e-12, "score {}", s.score);
        }
    }

    /// LOO against an independent re-implementation that evaluates every
    /// needed coalition from scratch.
    #[test]
    fn loo_matches_direct_oracle() {
        let (base, updates, valset) = trained_round(3, 6);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        let players = ctx.participants();
        let scores = loo(&ctx).unwrap();
        for (i, leave) in players.iter().enumerate() {
            let mut models = Vec::new();
            let mut sizes = Vec::new();
            for id in &players {
                let u = &updates[id];
                models.push(u.local_model(&base).unwrap());
                sizes.push(u.n_samples);
            }
            let full_model = aggregate_fedavg(&models, &sizes).unwrap();
            let rest: Vec<usize> = (0..players.len()).filter(|j| *j != i).collect();
            let rest_models: Vec<ModelParams> =
                rest.iter().map(|&j| models[j].clone()).collect();
            let rest_sizes: Vec<u64> = rest.iter().map(|&j| sizes[j]).collect();
            let rest_model = aggregate_fedavg(&rest_models, &rest_sizes).unwrap();
            let m = |model: &ModelParams| -evaluate(model, &valset).unwrap().0;
            let expected = m(&full_model) - m(&rest_model);
            assert!(
                (scores[i].score - expected).abs() < 1e-12,
                "trainer {leave}: {} vs {expected}",
                scores[i].score
            );
        }
    }

    #[test]
    fn additive_tables_recover_the_addends() {
        // U(S) = sum of per-player values: Shapley must return them exactly.
        let v = [0.3, -0.1, 0.7, 0.2];
        let n = v.len();
        let table: Vec<f64> = (0..1usize << n)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| v[i]).sum())
            .collect();
        let shapley = shapley_from_table(n, &table);
        for (got, want) in shapley.iter().zip(&v) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_player_scores_zero() {
        // Player 2 never changes any coalition's value.
        let n = 3;
        let table: Vec<f64> = (0..1usize << n)
            .map(|mask| {
                let without_dummy = mask & !(1 << 2);
                (without_dummy as f64).sqrt()
            })
            .collect();
        let shapley = shapley_from_table(n, &table);
        assert_eq!(shapley[2], 0.0);
    }

    #[test]
    fn symmetric_players_score_equally() {
        // U depends only on |S|: all players are interchangeable.
        let n = 4;
        let table: Vec<f64> = (0..1usize << n)
            .map(|mask| (mask.count_ones() as f64).powi(2))
            .collect();
        let shapley = shapley_from_table(n, &table);
        for pair in shapley.windows(2) {
            assert!((pair[0] - pair[1]).abs() < 1e-12);
        }
    }

    /// Exact Shapley against the permutation-average definition over all n!
    /// orderings, on random utility tables.
    #[test]
    fn shapley_matches_permutation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for n in 2..=5usize {
            for _ in 0..10 {
                let mut table: Vec<f64> =
                    (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                table[0] = 0.0;
                let fast = shapley_from_table(n, &table);
                let slow = permutation_shapley(n, &table);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
                }
            }
        }
    }

    /// Independent oracle: average marginal contribution over every
    /// permutation of the players.
    fn permutation_shapley(n: usize, table: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut sums = vec![0.0; n];
        let mut count = 0usize;
        permute(&mut order, 0, &mut |perm: &[usize]| {
            let mut mask = 0usize;
            for &p in perm {
                let before = table[mask];
                mask |= 1 << p;
                sums[p] += table[mask] - before;
            }
            count += 1;
        });
        sums.iter().map(|s| s / count as f64).collect()
    }

    fn permute(order: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == order.len() {
            visit(order);
            return;
        }
        for i in k..order.len() {
            order.swap(k, i);
            permute(order, k + 1, visit);
            order.swap(k, i);
        }
    }

    #[test]
    fn shapley_efficiency_holds_on_round_data() {
        let (base, updates, valset) = trained_round(4, 8);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        let scores = shapley_exact(&ctx).unwrap();
        let total: f64 = scores.iter().map(|s| s.score).sum();
        let grand = utility(&ctx, &ctx.participants()).unwrap();
        assert!((total - grand).abs() < 1e-9);
    }

    #[test]
    fn too_many_players_is_an_error() {
        let (base, updates, valset) = trained_round(13, 9);
        let ctx = RoundContext {
            base_model: &base,
            updates: &updates,
            valset: &valset,
            metric: Metric::NegLoss,
        };
        assert!(matches!(
            shapley_exact(&ctx),
            Err(ContributionError::TooManyPlayers(13))
        ));
    }

    #[test]
    fn proportional_allocation_with_clipping() {
        let scores = vec![
            (AccountId(1), 2_000_000i64),
            (AccountId(2), 1_000_000),
            (AccountId(3), 1_000_000),
        ];
        let alloc = allocate(1, &scores, 100);
        assert_eq!(alloc.payouts[&AccountId(1)], 50);
        assert_eq!(alloc.payouts[&AccountId(2)], 25);
        assert_eq!(alloc.payouts[&AccountId(3)], 25);
        assert_eq!(alloc.refund, 0);

        let clipped = allocate(1, &[(AccountId(1), 1_000_000), (AccountId(2), -1_000_000)], 100);
        assert_eq!(clipped.payouts[&AccountId(1)], 100);
        assert_eq!(clipped.payouts[&AccountId(2)], 0);

        let none = allocate(1, &[(AccountId(1), -5), (AccountId(2), 0)], 100);
        assert_eq!(none.refund, 100);
        assert!(none.payouts.values().all(|&p| p == 0));
    }

    proptest::proptest! {
        /// Payouts plus refund always reproduce the budget exactly.
        #[test]
        fn allocation_conserves_budget(
            raw in proptest::collection::vec(-100i64..100, 1..8),
            budget in 0u64..10_000,
        ) {
            let scores: Vec<(AccountId, i64)> = raw
                .iter()
                .enumerate()
                .map(|(i, s)| (AccountId(i as u32), *s * 1000))
                .collect();
            let alloc = allocate(1, &scores, budget);
            let paid: u64 = alloc.payouts.values().sum();
            proptest::prop_assert_eq!(paid + alloc.refund, budget);
        }

        /// Scaling all scores by a positive factor leaves payouts unchanged.
        #[test]
        fn allocation_is_scale_equivariant(
            raw in proptest::collection::vec(1i64..500, 2..6),
            lambda in 2i64..9,
            budget in 1u64..100_000,
        ) {
            let base: Vec<(AccountId, i64)> = raw
                .iter()
                .enumerate()
                .map(|(i, s)| (AccountId(i as u32), *s))
                .collect();
            let scaled: Vec<(AccountId, i64)> =
                base.iter().map(|(id, s)| (*id, s * lambda)).collect();
            proptest::prop_assert_eq!(
                allocate(1, &base, budget).payouts,
                allocate(1, &scaled, budget).payouts
            );
        }
    }

    #[test]
    fn score_encoding_is_fixed_width() {
        let scores = vec![(AccountId(1), 123i64), (AccountId(9), -456)];
        let bytes = encode_scores(3, &scores);
        assert_eq!(bytes.len(), 2 * 16);
        assert_eq!(scores_digest(3, &scores), Digest::of(&bytes));
        // Round and order are part of the commitment.
        assert_ne!(scores_digest(4, &scores), scores_digest(3, &scores));
    }
}
