//! Look-ahead reward shaping.
//!
//! A candidate action is applied to a copy of the state (the virtual
//! transition); `K` hypothetical future tasks are then served optimally in
//! that virtual state, and their mean best cost is the congestion impact of
//! the action. The shaped reward is `-(J + λ · impact)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    candidate_latency, generalized_cost, local_drain_bits, service_drain_bits, CostParams,
    ModelError, SystemState, Task,
};
use crate::oracle::oracle_action;
use crate::scalar::{count, lit, to_f64, Scalar};
use crate::sim::{stream_rng, UplinkModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "")]
pub struct LacsConfig<T: Scalar> {
    /// Number of sampled future tasks `K`.
    pub lookahead_k: usize,
    /// Weight `λ` of the impact term.
    pub lambda_weight: T,
    /// Future task sizes are uniform in `[lo·D, hi·D]`.
    pub size_factor_range: [T; 2],
    /// RNG stream reserved for look-ahead sampling.
    pub seed_stream: u64,
}

impl<T: Scalar> Default for LacsConfig<T> {
    fn default() -> Self {
        Self {
            lookahead_k: 3,
            lambda_weight: lit(0.3),
            size_factor_range: [lit(0.5), lit(1.5)],
            seed_stream: 101,
        }
    }
}

impl<T: Scalar> LacsConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead_k == 0 {
            return Err(Error::config("lookahead_k", "must be >= 1"));
        }
        if !(self.lambda_weight >= T::zero()) {
            return Err(Error::config("lambda_weight", "must be >= 0"));
        }
        let [lo, hi] = self.size_factor_range;
        if !(lo > T::zero() && lo <= hi) {
            return Err(Error::config("size_factor_range", "need 0 < low <= high"));
        }
        Ok(())
    }

    /// Same configuration with the impact term switched off.
    pub fn disabled(&self) -> Self {
        Self {
            lambda_weight: T::zero(),
            ..self.clone()
        }
    }
}

/// Copy of `state` advanced by one service interval with the pending task
/// placed at `action`. The chosen server gets `L ← max(0, L − drain) + D`
/// and `N ← N + 1`; all other queues only drain.
pub fn virtual_transition<T: Scalar>(
    state: &SystemState<T>,
    action: usize,
    params: &CostParams<T>,
) -> Result<SystemState<T>, ModelError> {
    state.check_action(action)?;
    let density = state.task.density_cycles_per_bit;
    let dt = params.slot_seconds;
    let mut next = state.clone();
    for (i, server) in next.servers.iter_mut().enumerate() {
        let drain = service_drain_bits(server, dt, density);
        server.backlog_bits = (server.backlog_bits - drain).max(T::zero());
        if action == i + 1 {
            server.backlog_bits = server.backlog_bits + state.task.size_bits;
            server.active_tasks += 1;
        }
    }
    let local_drain = local_drain_bits(state.device.local_freq_hz, dt, density);
    for backlog in &mut next.device.local_backlog_bits {
        *backlog = (*backlog - local_drain).max(T::zero());
    }
    if action == 0 {
        let user = state.task.user;
        if user >= next.device.local_backlog_bits.len() {
            next.device.local_backlog_bits.resize(user + 1, T::zero());
        }
        next.device.local_backlog_bits[user] = next.device.local_backlog_bits[user] + state.task.size_bits;
    }
    next.slot += 1;
    Ok(next)
}

/// `K` hypothetical tasks sized around `base`, inheriting its density and
/// deadline, each from a uniformly drawn user.
pub fn sample_future_tasks<T: Scalar, R: Rng + ?Sized>(
    base: &Task<T>,
    config: &LacsConfig<T>,
    num_users: usize,
    rng: &mut R,
) -> Vec<Task<T>> {
    let (lo, hi) = (
        to_f64(config.size_factor_range[0]),
        to_f64(config.size_factor_range[1]),
    );
    (0..config.lookahead_k)
        .map(|k| {
            let factor = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let user = if num_users > 1 {
                rng.gen_range(0..num_users)
            } else {
                0
            };
            Task {
                id: base.id + 1 + k,
                user,
                size_bits: base.size_bits * lit(factor),
                density_cycles_per_bit: base.density_cycles_per_bit,
                deadline_slots: base.deadline_slots,
            }
        })
        .collect()
}

/// Mean best one-step cost of serving each future task (with its own uplink
/// rates) in `virtual_state`. Each task is evaluated independently.
pub fn impact_of_tasks<T: Scalar>(
    virtual_state: &SystemState<T>,
    futures: &[(Task<T>, Vec<T>)],
    params: &CostParams<T>,
) -> T {
    if futures.is_empty() {
        return T::zero();
    }
    let mut probe = virtual_state.clone();
    let total = futures.iter().fold(T::zero(), |acc, (task, rates)| {
        probe.task = task.clone();
        probe.uplink_rates_bps.clone_from(rates);
        acc + oracle_action(&probe, params).1
    });
    total / count::<T>(futures.len())
}

/// Congestion impact of placing the pending task at `action`.
pub fn impact<T: Scalar, R: Rng + ?Sized>(
    state: &SystemState<T>,
    action: usize,
    config: &LacsConfig<T>,
    params: &CostParams<T>,
    uplink: &UplinkModel<T>,
    rng: &mut R,
) -> Result<T, ModelError> {
    let next = virtual_transition(state, action, params)?;
    let users = state.device.local_backlog_bits.len().max(1);
    let tasks = sample_future_tasks(&state.task, config, users, rng);
    let futures: Vec<(Task<T>, Vec<T>)> = tasks
        .into_iter()
        .map(|t| {
            let rates = uplink.sample(state.num_servers(), rng);
            (t, rates)
        })
        .collect();
    Ok(impact_of_tasks(&next, &futures, params))
}

/// `-(J + λ · impact)`.
pub fn shaped_reward<T: Scalar>(cost_j: T, impact_c: T, config: &LacsConfig<T>) -> T {
    -(cost_j + config.lambda_weight * impact_c)
}

/// `Σ_ℓ η^ℓ r_ℓ`.
pub fn discounted_return<T: Scalar>(rewards: &[T], eta: T) -> T {
    rewards
        .iter()
        .rev()
        .fold(T::zero(), |acc, r| *r + eta * acc)
}

/// Result of scoring one candidate action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedOutcome<T> {
    pub cost: T,
    pub impact: T,
    pub reward: T,
}

/// Bundles everything needed to score candidate actions, with its own RNG
/// stream so enabling look-ahead never disturbs environment randomness.
#[derive(Debug, Clone)]
pub struct LacsEvaluator<T: Scalar> {
    pub config: LacsConfig<T>,
    pub params: CostParams<T>,
    pub uplink: UplinkModel<T>,
    seed: u64,
    group: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> LacsEvaluator<T> {
    pub fn new(config: LacsConfig<T>, params: CostParams<T>, uplink: UplinkModel<T>, seed: u64) -> Self {
        let rng = stream_rng(seed, config.seed_stream);
        Self {
            config,
            params,
            uplink,
            seed,
            group: 0,
            rng,
        }
    }

    /// Scores `action`. With `λ = 0` no look-ahead is simulated and the
    /// reward is the base reward `-J`.
    pub fn evaluate(&mut self, state: &SystemState<T>, action: usize) -> Result<ShapedOutcome<T>, ModelError> {
        let cost = generalized_cost(candidate_latency(state, action)?, &state.task, &self.params);
        let impact = if self.config.lambda_weight > T::zero() {
            impact(state, action, &self.config, &self.params, &self.uplink, &mut self.rng)?
        } else {
            T::zero()
        };
        Ok(ShapedOutcome {
            cost,
            impact,
            reward: shaped_reward(cost, impact, &self.config),
        })
    }

    /// Independent evaluator for member `index` of the current group. The
    /// stream depends only on `(seed, group, index)`, never on the order in
    /// which members are scored.
    pub fn fork(&self, index: u64) -> Self {
        let mut child = self.clone();
        child.rng = stream_rng(
            mix(mix(self.seed, self.group), index),
            self.config.seed_stream,
        );
        child
    }

    /// Moves on to the next group.
    pub fn advance(&mut self) {
        self.group += 1;
    }
}

/// splitmix64 finalizer over a pair.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
