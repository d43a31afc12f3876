//! Enumerable MDPs with exact policy evaluation, used to check the
//! policy-improvement lower bound of a GRPO update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{action_distribution, log_probs, PolicyParams};
use crate::sim::stream_rng;

use super::{grpo_update, kl_from_log_probs, sample_group, Group, TrainConfig, UpdateDiagnostics};

/// Largest MDP accepted for exact evaluation.
pub const MAX_MICRO_STATES: usize = 200;

/// Tabular MDP whose policies are scorer policies over per-(state, action)
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroMdp {
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    /// `features[s][a]`.
    pub features: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

impl MicroMdp {
    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0][0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        if n == 0 || n > MAX_MICRO_STATES {
            return Err(Error::Training(format!(
                "micro MDP has {n} states; exact evaluation supports 1..={MAX_MICRO_STATES}"
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount", "must lie in (0, 1)"));
        }
        let stochastic = |row: &[f64]| row.len() == n && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !stochastic(&self.start) || self.transitions.iter().flatten().any(|row| !stochastic(row)) {
            return Err(Error::Training("micro MDP rows must be probability vectors".into()));
        }
        Ok(())
    }

    /// Two edge servers with `levels` backlog levels each, plus local
    /// execution. Offloading adds one level to the chosen server; each
    /// server then clears a level with its own probability.
    pub fn queueing(levels: usize, discount: f64) -> Self {
        let n = levels * levels;
        let idx = |b1: usize, b2: usize| b1 * levels + b2;
        let drain = [0.6, 0.35];
        let upload = [1.0, 0.6];
        let per_level = [1.2, 2.0];
        let local_cost = 4.0;
        let mut transitions = vec![vec![vec![0.0; n]; 3]; n];
        let mut rewards = vec![vec![0.0; 3]; n];
        let mut features = vec![vec![Vec::new(); 3]; n];
        for b1 in 0..levels {
            for b2 in 0..levels {
                let s = idx(b1, b2);
                let b = [b1, b2];
                for a in 0..3 {
                    let mut next = b;
                    let cost = if a == 0 {
                        local_cost
                    } else {
                        next[a - 1] = (next[a - 1] + 1).min(levels - 1);
                        upload[a - 1] + per_level[a - 1] * b[a - 1] as f64 + 0.5
                    };
                    rewards[s][a] = -cost;
                    let after = if a == 0 { 0.0 } else { next[a - 1] as f64 / levels as f64 };
                    features[s][a] = vec![cost / local_cost, after, f64::from(a == 0), 1.0];
                    for d1 in [false, true] {
                        for d2 in [false, true] {
                            let p1 = if d1 { drain[0] } else { 1.0 - drain[0] };
                            let p2 = if d2 { drain[1] } else { 1.0 - drain[1] };
                            let n1 = if d1 { next[0].saturating_sub(1) } else { next[0] };
                            let n2 = if d2 { next[1].saturating_sub(1) } else { next[1] };
                            transitions[s][a][idx(n1, n2)] += p1 * p2;
                        }
                    }
                }
            }
        }
        let mut start = vec![0.0; n];
        start[0] = 1.0;
        Self {
            transitions,
            rewards,
            start,
            features,
            discount,
        }
    }

    /// Random dense MDP with `actions` actions and `dim` random features.
    pub fn random(states: usize, actions: usize, dim: usize, discount: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 3);
        let row = |rng: &mut rand_chacha::ChaCha8Rng| {
            let raw: Vec<f64> = (0..states).map(|_| rng.gen::<f64>().powi(3)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect::<Vec<f64>>()
        };
        let transitions = (0..states)
            .map(|_| (0..actions).map(|_| row(&mut rng)).collect())
            .collect();
        let start = row(&mut rng);
        let rewards = (0..states)
            .map(|_| (0..actions).map(|_| -rng.gen_range(0.0..10.0)).collect())
            .collect();
        let features = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        Self {
            transitions,
            rewards,
            start,
            features,
            discount,
        }
    }

    /// `π[s][a]`.
    pub fn policy(&self, params: &PolicyParams<f64>) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| action_distribution(params, f)).collect()
    }

    fn system(&self, pi: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_states();
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            for (a, p) in pi[s].iter().enumerate() {
                r[s] += p * self.rewards[s][a];
                for (t, q) in self.transitions[s][a].iter().enumerate() {
                    m[(s, t)] -= self.discount * p * q;
                }
            }
        }
        (m, r)
    }

    /// Exact state values `V^π`.
    pub fn state_values(&self, pi: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (m, r) = self.system(pi);
        m.lu()
            .solve(&r)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Training("singular policy-evaluation system".into()))
    }

    /// `Q^π(s, a)` from `V^π`.
    pub fn action_values(&self, values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.num_states())
            .map(|s| {
                self.rewards[s]
                    .iter()
                    .zip(&self.transitions[s])
                    .map(|(r, row)| r + self.discount * row.iter().zip(values).map(|(p, v)| p * v).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Normalized discounted state occupancy `(1 − η) Σ_t η^t P(s_t = s)`.
    pub fn occupancy(&self, pi: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (m, _) = self.system(pi);
        let mu = DVector::from_column_slice(&self.start);
        m.transpose()
            .lu()
            .solve(&mu)
            .map(|d| d.iter().map(|x| x * (1.0 - self.discount)).collect())
            .ok_or_else(|| Error::Training("singular occupancy system".into()))
    }

    /// Expected discounted return from the start distribution.
    pub fn value(&self, pi: &[Vec<f64>]) -> Result<f64> {
        Ok(self
            .state_values(pi)?
            .iter()
            .zip(&self.start)
            .map(|(v, m)| v * m)
            .sum())
    }

    /// One GRPO update in which every state contributes a group whose
    /// rewards are the exact action values under the current policy; the
    /// bound report is attached to the diagnostics.
    pub fn grpo_step(
        &self,
        params: &PolicyParams<f64>,
        reference: &PolicyParams<f64>,
        config: &TrainConfig<f64>,
        rng: &mut impl Rng,
    ) -> Result<(PolicyParams<f64>, UpdateDiagnostics<f64>, Theorem1Report)> {
        let pi = self.policy(params);
        let q = self.action_values(&self.state_values(&pi)?);
        let batch: Vec<Group<f64>> = self
            .features
            .iter()
            .zip(&q)
            .map(|(f, qs)| {
                let samples = sample_group(params, f, config.group_size, rng);
                let rewards = samples.iter().map(|s| qs[s.action]).collect();
                Group {
                    features: f.clone(),
                    samples,
                    rewards,
                }
            })
            .collect();
        let (next, mut diag) = grpo_update(params, reference, &batch, config)?;
        let report = theorem1_check(self, params, &next)?;
        diag.theorem1_lower_bound = Some(report.lower_bound);
        Ok((next, diag, report))
    }
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Pinsker's inequality `D_TV ≤ √(KL / 2)` on one pair, with `KL = KL(p ‖ q)`.
pub fn pinsker_holds(p: &[f64], q: &[f64]) -> bool {
    let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let lq: Vec<f64> = q.iter().map(|x| x.ln()).collect();
    total_variation(p, q) <= (kl_from_log_probs(&lp, &lq) / 2.0).sqrt() + 1e-12
}

/// Exact quantities of the policy-improvement bound for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub value_old: f64,
    pub value_new: f64,
    /// `E_{s∼d^{π_old}, a∼π_new}[A^{π_old}(s, a)]`.
    pub expected_advantage: f64,
    pub max_abs_advantage: f64,
    /// `max_s KL(π_new ‖ π_old)`.
    pub max_kl: f64,
    pub max_tv: f64,
    /// `2η · max|A| / (1 − η)² · √½`.
    pub bound_constant: f64,
    pub lower_bound: f64,
    pub bound_holds: bool,
    pub pinsker_holds: bool,
}

/// Exact check of
/// `V(π_new) ≥ V(π_old) + E[A] / (1 − η) − 𝓑 · max_s √KL`
/// and of Pinsker's inequality on every state.
pub fn theorem1_check(
    mdp: &MicroMdp,
    old: &PolicyParams<f64>,
    new: &PolicyParams<f64>,
) -> Result<Theorem1Report> {
    mdp.validate()?;
    let eta = mdp.discount;
    let pi_old = mdp.policy(old);
    let pi_new = mdp.policy(new);
    let v_old = mdp.state_values(&pi_old)?;
    let q_old = mdp.action_values(&v_old);
    let d_old = mdp.occupancy(&pi_old)?;

    let mut expected_advantage = 0.0;
    let mut max_abs_advantage: f64 = 0.0;
    let mut max_kl: f64 = 0.0;
    let mut max_tv: f64 = 0.0;
    let mut pinsker = true;
    for s in 0..mdp.num_states() {
        let f = &mdp.features[s];
        let (lp_new, lp_old) = (log_probs(new, f), log_probs(old, f));
        for a in 0..pi_new[s].len() {
            let adv = q_old[s][a] - v_old[s];
            expected_advantage += d_old[s] * pi_new[s][a] * adv;
            max_abs_advantage = max_abs_advantage.max(adv.abs());
        }
        let kl = kl_from_log_probs(&lp_new, &lp_old);
        let tv = total_variation(&pi_new[s], &pi_old[s]);
        max_kl = max_kl.max(kl);
        max_tv = max_tv.max(tv);
        pinsker &= tv <= (kl / 2.0).sqrt() + 1e-12;
    }

    let value_old: f64 = v_old.iter().zip(&mdp.start).map(|(v, m)| v * m).sum();
    let value_new = mdp.value(&pi_new)?;
    let bound_constant = 2.0 * eta * max_abs_advantage / (1.0 - eta).powi(2) * 0.5f64.sqrt();
    let lower_bound = value_old + expected_advantage / (1.0 - eta) - bound_constant * max_kl.sqrt();
    let tolerance = 1e-9 * value_old.abs().max(1.0);
    Ok(Theorem1Report {
        value_old,
        value_new,
        expected_advantage,
        max_abs_advantage,
        max_kl,
        max_tv,
        bound_constant,
        lower_bound,
        bound_holds: value_new >= lower_bound - tolerance,
        pinsker_holds: pinsker,
    })
}
