//! Supervised initialization and group relative policy optimization for the
//! scorer policy.

mod micro;
mod pipeline;

pub use micro::{pinsker_holds, theorem1_check, total_variation, MicroMdp, Theorem1Report, MAX_MICRO_STATES};
pub use pipeline::{train, EvalSnapshot, TrainAbort, TrainLogEntry, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CostParams;
use crate::policy::{featurize, log_prob_gradient, log_probs, sample_index, CandidateFeatures, PolicyParams};
use crate::scalar::{lit, to_f64, Scalar};
use crate::serializer::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "")]
pub struct TrainConfig<T: Scalar> {
    /// GRPO step size. Transformer-scale rates (5e-6) do not transfer to a
    /// ten-weight scorer.
    pub learning_rate: T,
    pub group_size: usize,
    pub clip_eps: T,
    pub kl_coeff: T,
    pub discount: T,
    pub adv_eps: T,
    /// Number of GRPO updates.
    pub iterations: usize,
    /// Decision states collected per update.
    pub batch_states: usize,
    /// Updates between evaluation snapshots; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub sft_epochs: usize,
    pub sft_learning_rate: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: lit(1e-2),
            group_size: 8,
            clip_eps: lit(0.2),
            kl_coeff: lit(0.005),
            discount: lit(0.99),
            adv_eps: lit(1e-4),
            iterations: 300,
            batch_states: 32,
            eval_interval: 50,
            eval_episodes: 4,
            sft_epochs: 300,
            sft_learning_rate: lit(1.0),
            seed: 42,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size", "must be >= 2"));
        }
        if !(self.clip_eps > T::zero() && self.clip_eps < T::one()) {
            return Err(Error::config("clip_eps", "must lie in (0, 1)"));
        }
        if !(self.kl_coeff >= T::zero()) {
            return Err(Error::config("kl_coeff", "must be >= 0"));
        }
        if !(self.discount > T::zero() && self.discount < T::one()) {
            return Err(Error::config("discount", "must lie in (0, 1)"));
        }
        if !(self.adv_eps > T::zero()) {
            return Err(Error::config("adv_eps", "must be > 0"));
        }
        if !(self.learning_rate > T::zero() && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if !(self.sft_learning_rate > T::zero() && self.sft_learning_rate.is_finite()) {
            return Err(Error::config("sft_learning_rate", "must be > 0"));
        }
        if self.batch_states == 0 {
            return Err(Error::config("batch_states", "must be >= 1"));
        }
        Ok(())
    }
}

/// Features of one state plus its oracle label.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample<T> {
    pub features: Vec<CandidateFeatures<T>>,
    pub label: usize,
}

pub fn sft_examples<T: Scalar>(records: &[DatasetRecord], params: &CostParams<T>) -> Vec<SftExample<T>> {
    records
        .iter()
        .map(|r| SftExample {
            features: featurize(&r.state::<T>(), params),
            label: r.label_action,
        })
        .collect()
}

/// Mean negative log-likelihood of the labels.
pub fn sft_loss<T: Scalar>(params: &PolicyParams<T>, data: &[SftExample<T>]) -> T {
    let total = data
        .iter()
        .map(|ex| -log_probs(params, &ex.features)[ex.label])
        .sum::<T>();
    total / lit(data.len() as f64)
}

fn sft_gradient<T: Scalar>(params: &PolicyParams<T>, data: &[SftExample<T>]) -> Vec<T> {
    let mut grad = vec![T::zero(); params.dim()];
    for ex in data {
        for (g, d) in grad.iter_mut().zip(log_prob_gradient(params, &ex.features, ex.label)) {
            *g = *g - d;
        }
    }
    let n = lit::<T>(data.len() as f64);
    grad.iter_mut().for_each(|g| *g = *g / n);
    grad
}

/// Result of supervised fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SftReport<T> {
    pub params: PolicyParams<T>,
    /// Loss before the first epoch and after every accepted epoch.
    pub losses: Vec<T>,
    pub accuracy: T,
}

/// Full-batch gradient descent on the cross-entropy against oracle labels.
/// Each epoch backtracks until the Armijo condition holds, so the loss never
/// increases; fitting stops early once no decreasing step exists.
pub fn sft_fit<T: Scalar>(
    data: &[SftExample<T>],
    init: &PolicyParams<T>,
    config: &TrainConfig<T>,
) -> Result<SftReport<T>> {
    if data.is_empty() {
        return Err(Error::Dataset("supervised fitting needs at least one record".into()));
    }
    for ex in data {
        if ex.label >= ex.features.len() {
            return Err(Error::Dataset(format!(
                "label {} outside {} candidates",
                ex.label,
                ex.features.len()
            )));
        }
        if ex.features.iter().any(|phi| phi.len() != init.dim()) {
            return Err(Error::Dataset("feature dimension does not match the parameters".into()));
        }
    }
    let mut params = init.clone();
    let mut loss = sft_loss(&params, data);
    let mut losses = vec![loss];
    let half = lit::<T>(0.5);
    let armijo = lit::<T>(1e-4);
    for _ in 0..config.sft_epochs {
        let grad = sft_gradient(&params, data);
        let norm2 = grad.iter().map(|g| *g * *g).sum::<T>();
        if !(norm2 > lit(1e-24)) {
            break;
        }
        let mut step = config.sft_learning_rate;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = params.clone();
            for (w, g) in trial.weights.iter_mut().zip(&grad) {
                *w = *w - step * *g;
            }
            let trial_loss = sft_loss(&trial, data);
            if trial_loss.is_finite() && trial_loss <= loss - armijo * step * norm2 {
                accepted = Some((trial, trial_loss));
                break;
            }
            step = step * half;
        }
        match accepted {
            Some((p, l)) => {
                params = p;
                loss = l;
                losses.push(l);
            }
            None => break,
        }
    }
    let accuracy = sft_accuracy(&params, data);
    Ok(SftReport {
        params,
        losses,
        accuracy,
    })
}

/// Fraction of examples whose most probable action is the label.
pub fn sft_accuracy<T: Scalar>(params: &PolicyParams<T>, data: &[SftExample<T>]) -> T {
    let hits = data
        .iter()
        .filter(|ex| {
            let lp = log_probs(params, &ex.features);
            let best = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
            best == ex.label
        })
        .count();
    lit::<T>(hits as f64) / lit(data.len().max(1) as f64)
}

/// One draw of a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSample<T> {
    pub action: usize,
    pub log_prob_old: T,
}

/// `group_size` independent draws from `π_old` with their log-probabilities.
pub fn sample_group<T: Scalar, R: Rng + ?Sized>(
    params: &PolicyParams<T>,
    features: &[CandidateFeatures<T>],
    group_size: usize,
    rng: &mut R,
) -> Vec<GroupSample<T>> {
    let lp = log_probs(params, features);
    let probs: Vec<T> = lp.iter().map(|l| l.exp()).collect();
    (0..group_size)
        .map(|_| {
            let action = sample_index(&probs, rng);
            GroupSample {
                action,
                log_prob_old: lp[action],
            }
        })
        .collect()
}

/// `(r_i − μ) / (σ + ε)` with the population standard deviation.
pub fn group_advantages<T: Scalar>(rewards: &[T], adv_eps: T) -> Vec<T> {
    let n = lit::<T>(rewards.len() as f64);
    let mean = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|r| (*r - mean) * (*r - mean)).sum::<T>() / n;
    let denom = var.sqrt() + adv_eps;
    rewards.iter().map(|r| (*r - mean) / denom).collect()
}

/// One state's group, ready for an update.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<T> {
    pub features: Vec<CandidateFeatures<T>>,
    pub samples: Vec<GroupSample<T>>,
    pub rewards: Vec<T>,
}

impl<T: Scalar> Group<T> {
    /// Importance ratios `π_θ(a_i) / π_old(a_i)`.
    pub fn ratios(&self, params: &PolicyParams<T>) -> Vec<T> {
        let lp = log_probs(params, &self.features);
        self.samples
            .iter()
            .map(|s| (lp[s.action] - s.log_prob_old).exp())
            .collect()
    }
}

/// `KL(p ‖ q)` from log-probabilities; exactly zero when they coincide.
pub fn kl_from_log_probs<T: Scalar>(lp: &[T], lq: &[T]) -> T {
    lp.iter()
        .zip(lq)
        .map(|(a, b)| {
            let p = a.exp();
            if p > T::zero() {
                p * (*a - *b)
            } else {
                T::zero()
            }
        })
        .sum::<T>()
        .max(T::zero())
}

/// `KL(π_a ‖ π_b)` on one state.
pub fn policy_kl<T: Scalar>(a: &PolicyParams<T>, b: &PolicyParams<T>, features: &[CandidateFeatures<T>]) -> T {
    kl_from_log_probs(&log_probs(a, features), &log_probs(b, features))
}

/// `(clipped, unclipped)` surrogate terms for one sample.
pub fn surrogate_terms<T: Scalar>(ratio: T, advantage: T, clip_eps: T) -> (T, T) {
    let clipped_ratio = ratio.max(T::one() - clip_eps).min(T::one() + clip_eps);
    let unclipped = ratio * advantage;
    (unclipped.min(clipped_ratio * advantage), unclipped)
}

/// Objective value, gradient and clip statistics at `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval<T> {
    pub objective: T,
    pub surrogate: T,
    pub kl_to_ref: T,
    pub gradient: Vec<T>,
    pub clip_fraction: T,
    pub mean_advantage: T,
    pub mean_reward: T,
}

/// Evaluates the clipped-surrogate-minus-KL objective averaged over the
/// groups of `batch`, together with its gradient in the weights.
pub fn grpo_objective<T: Scalar>(
    params: &PolicyParams<T>,
    reference: &PolicyParams<T>,
    batch: &[Group<T>],
    config: &TrainConfig<T>,
) -> ObjectiveEval<T> {
    let dim = params.dim();
    let mut gradient = vec![T::zero(); dim];
    let (mut surrogate, mut kl_total, mut adv_total, mut reward_total) = (T::zero(), T::zero(), T::zero(), T::zero());
    let (mut clipped, mut samples) = (0usize, 0usize);
    let eps = config.clip_eps;
    for group in batch {
        let g = lit::<T>(group.samples.len() as f64);
        let adv = group_advantages(&group.rewards, config.adv_eps);
        let lp = log_probs(params, &group.features);
        let ratios = group.ratios(params);
        for ((sample, a), rho) in group.samples.iter().zip(&adv).zip(&ratios) {
            let (term, unclipped) = surrogate_terms(*rho, *a, eps);
            surrogate = surrogate + term / g;
            adv_total = adv_total + *a;
            samples += 1;
            let clip_active = term < unclipped;
            if clip_active {
                clipped += 1;
                continue;
            }
            let dlog = log_prob_gradient(params, &group.features, sample.action);
            for (gr, d) in gradient.iter_mut().zip(dlog) {
                *gr = *gr + *a * *rho * d / g;
            }
        }
        reward_total = reward_total + group.rewards.iter().copied().sum::<T>();

        let lq = log_probs(reference, &group.features);
        let kl = kl_from_log_probs(&lp, &lq);
        kl_total = kl_total + kl;
        if config.kl_coeff > T::zero() {
            // ∂KL/∂z_b = p_b (log p_b − log q_b − KL), z_b = θ·φ_b / temperature.
            for ((lpb, lqb), phi) in lp.iter().zip(&lq).zip(&group.features) {
                let dz = lpb.exp() * (*lpb - *lqb - kl) / params.temperature;
                for (gr, x) in gradient.iter_mut().zip(phi) {
                    *gr = *gr - config.kl_coeff * dz * *x;
                }
            }
        }
    }
    let n = lit::<T>(batch.len().max(1) as f64);
    gradient.iter_mut().for_each(|g| *g = *g / n);
    let surrogate = surrogate / n;
    let kl_to_ref = kl_total / n;
    ObjectiveEval {
        objective: surrogate - config.kl_coeff * kl_to_ref,
        surrogate,
        kl_to_ref,
        gradient,
        clip_fraction: lit::<T>(clipped as f64) / lit(samples.max(1) as f64),
        mean_advantage: adv_total / lit(samples.max(1) as f64),
        mean_reward: reward_total / lit(samples.max(1) as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UpdateDiagnostics<T: Scalar> {
    pub mean_group_reward: T,
    pub mean_advantage: T,
    pub mean_clip_fraction: T,
    /// Mean `KL(π_new ‖ π_old)` over the batch states.
    pub kl_to_old: T,
    /// Mean `KL(π_old ‖ π_ref)` at the start of the update.
    pub kl_to_ref: T,
    pub surrogate_value: T,
    pub theorem1_lower_bound: Option<T>,
}

/// One gradient-ascent step. A non-finite gradient rejects the update and
/// leaves `params` untouched.
pub fn grpo_update<T: Scalar>(
    params: &PolicyParams<T>,
    reference: &PolicyParams<T>,
    batch: &[Group<T>],
    config: &TrainConfig<T>,
) -> Result<(PolicyParams<T>, UpdateDiagnostics<T>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let eval = grpo_objective(params, reference, batch, config);
    if eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite policy gradient; update rejected".into()));
    }
    let mut next = params.clone();
    for (w, g) in next.weights.iter_mut().zip(&eval.gradient) {
        *w = *w + config.learning_rate * *g;
    }
    if !next.is_finite() {
        return Err(Error::Training("update produced non-finite parameters; rejected".into()));
    }
    let kl_to_old = batch
        .iter()
        .map(|g| policy_kl(&next, params, &g.features))
        .sum::<T>()
        / lit(batch.len() as f64);
    Ok((
        next,
        UpdateDiagnostics {
            mean_group_reward: eval.mean_reward,
            mean_advantage: eval.mean_advantage,
            mean_clip_fraction: eval.clip_fraction,
            kl_to_old,
            kl_to_ref: eval.kl_to_ref,
            surrogate_value: eval.surrogate,
            theorem1_lower_bound: None,
        },
    ))
}

impl<T: Scalar> UpdateDiagnostics<T> {
    pub fn to_f64(&self) -> UpdateDiagnostics<f64> {
        UpdateDiagnostics {
            mean_group_reward: to_f64(self.mean_group_reward),
            mean_advantage: to_f64(self.mean_advantage),
            mean_clip_fraction: to_f64(self.mean_clip_fraction),
            kl_to_old: to_f64(self.kl_to_old),
            kl_to_ref: to_f64(self.kl_to_ref),
            surrogate_value: to_f64(self.surrogate_value),
            theorem1_lower_bound: self.theorem1_lower_bound.map(to_f64),
        }
    }
}
