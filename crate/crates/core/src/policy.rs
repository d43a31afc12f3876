//! Policies: the decision trait, per-candidate features, the shared softmax
//! scorer and the heuristic baselines.
//!
//! The scorer applies one weight vector to every candidate's feature vector,
//! so the same parameters work for any number of edge servers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::model::{edge_latency_parts, local_latency, CostParams, SystemState};
use crate::oracle::oracle_action;
use crate::scalar::{count, lit, to_f64, Scalar};
use crate::sim::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("policy failed: {0}")]
    Failed(String),
    #[error("policy chose action {action} but only {num_actions} actions exist")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("policy backend error: {0}")]
    Backend(String),
}

/// Anything that maps an observed state to an action index.
pub trait Policy<T: Scalar> {
    fn name(&self) -> String;
    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError>;
}

impl<T: Scalar, P: Policy<T> + ?Sized> Policy<T> for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError> {
        (**self).decide(state)
    }
}

/// Adapts a closure into a [`Policy`].
pub struct FnPolicy<F> {
    name: String,
    f: F,
}

impl<F> FnPolicy<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<T, F> Policy<T> for FnPolicy<F>
where
    T: Scalar,
    F: FnMut(&SystemState<T>) -> Result<usize, PolicyError>,
{
    fn name(&self) -> String {
        self.name.clone()
    }
    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError> {
        (self.f)(state)
    }
}

pub const FEATURE_DIM: usize = 10;

/// Names of the feature slots, in order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "upload_slots",
    "wait_slots",
    "exec_slots",
    "capacity_norm",
    "active_tasks_norm",
    "backlog_norm",
    "backlog_trend",
    "is_local",
    "predicted_violation",
    "bias",
];

const CAPACITY_REF_HZ: f64 = 48e9;
const BACKLOG_REF_BITS: f64 = 50e6;
const ACTIVE_REF: f64 = 10.0;

/// Fixed-length description of one candidate action.
pub type CandidateFeatures<T> = Vec<T>;

/// Least-squares slope of a sample sequence (per sample); zero for fewer
/// than two samples.
fn slope<T: Scalar>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::zero();
    }
    let mean_i = lit::<T>((n - 1) as f64 / 2.0);
    let mean_x = xs.iter().copied().sum::<T>() / count::<T>(n);
    let (mut num, mut den) = (T::zero(), T::zero());
    for (i, x) in xs.iter().enumerate() {
        let di = count::<T>(i) - mean_i;
        num = num + di * (*x - mean_x);
        den = den + di * di;
    }
    num / den
}

/// One feature vector per action `0..=E`.
pub fn featurize<T: Scalar>(state: &SystemState<T>, params: &CostParams<T>) -> Vec<CandidateFeatures<T>> {
    let dt = params.slot_seconds;
    let cap_ref = lit::<T>(CAPACITY_REF_HZ);
    let backlog_ref = lit::<T>(BACKLOG_REF_BITS);
    let violation = |total_slots: T| {
        if total_slots > state.task.deadline_slots {
            T::one()
        } else {
            T::zero()
        }
    };

    let task = &state.task;
    let local_exec = task.workload_cycles() / state.device.local_freq_hz;
    let local_total = local_latency(task, &state.device);
    let local_backlog = state.device.backlog_of(task.user);
    let mut out = Vec::with_capacity(state.num_actions());
    out.push(vec![
        T::zero(),
        (local_total - local_exec) / dt,
        local_exec / dt,
        state.device.local_freq_hz / cap_ref,
        T::zero(),
        local_backlog / backlog_ref,
        T::zero(),
        T::one(),
        violation(local_total / dt),
        T::one(),
    ]);
    for (server, rate) in state.servers.iter().zip(&state.uplink_rates_bps) {
        let parts = edge_latency_parts(task, server, *rate);
        out.push(vec![
            parts.upload / dt,
            parts.wait / dt,
            parts.exec / dt,
            server.capacity_hz / cap_ref,
            count::<T>(server.active_tasks) / lit(ACTIVE_REF),
            server.backlog_bits / backlog_ref,
            slope(&server.history) / backlog_ref,
            T::zero(),
            violation(parts.total() / dt),
            T::one(),
        ]);
    }
    out
}

/// Weights of the shared scorer plus its softmax temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams<T> {
    pub weights: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            temperature: T::one(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.temperature.is_finite()
            && self.temperature > T::zero()
            && self.weights.iter().all(|w| w.is_finite())
    }

    fn logits(&self, features: &[CandidateFeatures<T>]) -> Vec<T> {
        features
            .iter()
            .map(|phi| {
                debug_assert_eq!(phi.len(), self.weights.len());
                dot(&self.weights, phi) / self.temperature
            })
            .collect()
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|z| (*z - max).exp()).collect();
    let total = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / total).collect()
}

/// `p(a) ∝ exp(θ·φ_a / temperature)`.
pub fn action_distribution<T: Scalar>(params: &PolicyParams<T>, features: &[CandidateFeatures<T>]) -> Vec<T> {
    softmax(&params.logits(features))
}

/// Log-probabilities via log-sum-exp, stable for very peaked policies.
pub fn log_probs<T: Scalar>(params: &PolicyParams<T>, features: &[CandidateFeatures<T>]) -> Vec<T> {
    let logits = params.logits(features);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|z| (*z - max).exp()).sum::<T>().ln();
    logits.into_iter().map(|z| z - lse).collect()
}

/// `∇_θ log π(action) = (φ_action − E_p[φ]) / temperature`.
pub fn log_prob_gradient<T: Scalar>(
    params: &PolicyParams<T>,
    features: &[CandidateFeatures<T>],
    action: usize,
) -> Vec<T> {
    let p = action_distribution(params, features);
    let mut grad = features[action].clone();
    for (pb, phi) in p.iter().zip(features) {
        for (g, x) in grad.iter_mut().zip(phi) {
            *g = *g - *pb * *x;
        }
    }
    grad.iter_mut().for_each(|g| *g = *g / params.temperature);
    grad
}

/// Draws an index from a probability vector.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += to_f64(*p);
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// How a scorer turns its distribution into a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    /// Highest-probability action (ties to the lowest index).
    Greedy,
    /// A draw from the distribution.
    Sample,
}

/// The learned policy.
#[derive(Debug, Clone)]
pub struct ScorerPolicy<T: Scalar> {
    pub params: PolicyParams<T>,
    pub cost_params: CostParams<T>,
    pub decode: Decode,
    label: String,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ScorerPolicy<T> {
    pub fn new(params: PolicyParams<T>, cost_params: CostParams<T>, decode: Decode, seed: u64) -> Self {
        Self {
            params,
            cost_params,
            decode,
            label: "scorer".into(),
            rng: stream_rng(seed, 11),
        }
    }

    pub fn named(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn distribution(&self, state: &SystemState<T>) -> Vec<T> {
        action_distribution(&self.params, &featurize(state, &self.cost_params))
    }
}

impl<T: Scalar> Policy<T> for ScorerPolicy<T> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError> {
        let p = self.distribution(state);
        if p.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::Failed("non-finite action distribution".into()));
        }
        Ok(match self.decode {
            Decode::Greedy => argmax(&p),
            Decode::Sample => sample_index(&p, &mut self.rng),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    LocalOnly,
    RoundRobin,
    LeastLoaded,
    GreedyOracle,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Random,
        BaselineKind::LocalOnly,
        BaselineKind::RoundRobin,
        BaselineKind::LeastLoaded,
        BaselineKind::GreedyOracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::LocalOnly => "local_only",
            BaselineKind::RoundRobin => "round_robin",
            BaselineKind::LeastLoaded => "least_loaded",
            BaselineKind::GreedyOracle => "greedy_oracle",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "local_only" | "local" => Ok(BaselineKind::LocalOnly),
            "round_robin" => Ok(BaselineKind::RoundRobin),
            "least_loaded" => Ok(BaselineKind::LeastLoaded),
            "greedy_oracle" | "oracle" => Ok(BaselineKind::GreedyOracle),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

/// Heuristic reference policy.
#[derive(Debug, Clone)]
pub struct Baseline<T: Scalar> {
    kind: BaselineKind,
    cost_params: CostParams<T>,
    rng: ChaCha8Rng,
    next_server: usize,
}

impl<T: Scalar> Policy<T> for Baseline<T> {
    fn name(&self) -> String {
        self.kind.as_str().to_string()
    }

    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError> {
        let e = state.num_servers();
        Ok(match self.kind {
            BaselineKind::Random => self.rng.gen_range(0..=e),
            BaselineKind::LocalOnly => 0,
            BaselineKind::RoundRobin => {
                if e == 0 {
                    0
                } else {
                    let a = self.next_server % e + 1;
                    self.next_server = self.next_server.wrapping_add(1);
                    a
                }
            }
            BaselineKind::LeastLoaded => {
                let load = |s: &crate::model::ServerState<T>| s.backlog_bits / s.capacity_hz;
                state
                    .servers
                    .iter()
                    .enumerate()
                    .fold(None::<(usize, T)>, |best, (i, s)| match best {
                        Some((_, l)) if l <= load(s) => best,
                        _ => Some((i + 1, load(s))),
                    })
                    .map_or(0, |(a, _)| a)
            }
            BaselineKind::GreedyOracle => oracle_action(state, &self.cost_params).0,
        })
    }
}

pub fn baseline_policy<T: Scalar>(kind: BaselineKind, cost_params: CostParams<T>, seed: u64) -> Baseline<T> {
    Baseline {
        kind,
        cost_params,
        rng: stream_rng(seed, 13),
        next_server: 0,
    }
}

/// On-disk form of [`PolicyParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub temperature: f64,
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &PolicyParams<T>) -> Self {
        Self {
            dimension: params.dim(),
            weights: params.weights.iter().map(|w| to_f64(*w)).collect(),
            temperature: to_f64(params.temperature),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn params<T: Scalar>(&self) -> Result<PolicyParams<T>> {
        if self.dimension != FEATURE_DIM {
            return Err(crate::Error::config(
                "checkpoint.dimension",
                format!("expected {FEATURE_DIM} weights, found {}", self.dimension),
            ));
        }
        if self.weights.len() != self.dimension {
            return Err(crate::Error::config(
                "checkpoint.weights",
                format!("{} weights for dimension {}", self.weights.len(), self.dimension),
            ));
        }
        let params = PolicyParams {
            weights: self.weights.iter().map(|w| lit(*w)).collect(),
            temperature: lit(self.temperature),
        };
        if !params.is_finite() {
            return Err(crate::Error::config("checkpoint", "non-finite weights or temperature"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{candidate_latency, ServerState};
    use crate::sim::{Environment, SimConfig};
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;

    fn states(n: usize, servers: usize, seed: u64) -> Vec<SystemState<f64>> {
        let mut env = Environment::new(SimConfig::<f64> {
            num_servers: servers,
            arrival_prob: 1.0,
            seed,
            ..Default::default()
        })
        .unwrap();
        let mut out = Vec::new();
        for i in 0..n {
            let task = env.sample_arrivals().remove(0);
            let s = env.observe(&task);
            env.step(&s, (i * 7) % s.num_actions()).unwrap();
            out.push(s);
        }
        out
    }

    fn random_params(rng: &mut ChaCha8Rng) -> PolicyParams<f64> {
        PolicyParams {
            weights: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            temperature: rng.gen_range(0.5..2.0),
        }
    }

    #[test]
    fn one_vector_per_action_with_fixed_dimension() {
        for e in [1, 3, 11] {
            let s = &states(1, e, 1)[0];
            let f = featurize(s, &CostParams::default());
            assert_eq!(f.len(), e + 1);
            assert!(f.iter().all(|v| v.len() == FEATURE_DIM && v.iter().all(|x| x.is_finite())));
        }
    }

    #[test]
    fn identical_servers_identical_features() {
        let mut s = states(1, 3, 2).remove(0);
        s.servers[1] = ServerState { id: 2, ..s.servers[0].clone() };
        s.uplink_rates_bps[1] = s.uplink_rates_bps[0];
        let f = featurize(&s, &CostParams::default());
        assert_eq!(f[1], f[2]);
    }

    #[test]
    fn latency_features_match_cost_model() {
        let p = CostParams::default();
        for s in states(50, 6, 3) {
            let f = featurize(&s, &p);
            for (a, phi) in f.iter().enumerate() {
                let expected = candidate_latency(&s, a).unwrap() / p.slot_seconds;
                assert!((phi[0] + phi[1] + phi[2] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let s = &states(1, 6, 4)[0];
        let f = featurize(s, &CostParams::default());
        let p = action_distribution(&PolicyParams::zeros(FEATURE_DIM), &f);
        assert!(p.iter().all(|x| (x - 1.0 / 7.0).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = vec![f[1].clone(); 5];
        let p = action_distribution(&random_params(&mut rng), &same);
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = &states(1, 6, 5)[0];
        let f = featurize(s, &CostParams::default());
        let params = random_params(&mut rng);
        let shift: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let shifted: Vec<Vec<f64>> = f
            .iter()
            .map(|phi| phi.iter().zip(&shift).map(|(a, b)| a + b).collect())
            .collect();
        let p = action_distribution(&params, &f);
        let q = action_distribution(&params, &shifted);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_edge_cases() {
        let s = &states(1, 2, 6)[0];
        let f = featurize(s, &CostParams::default());
        let twins = vec![f[1].clone(), f[1].clone()];
        let g = log_prob_gradient(&PolicyParams::zeros(FEATURE_DIM), &twins, 0);
        assert!(g.iter().all(|x| x.abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in states(20, 6, 7) {
            let f = featurize(&s, &CostParams::default());
            let params = random_params(&mut rng);
            let p = action_distribution(&params, &f);
            let mut total = [0.0; FEATURE_DIM];
            for (a, pa) in p.iter().enumerate() {
                let g = log_prob_gradient(&params, &f, a);
                for (t, x) in total.iter_mut().zip(&g) {
                    *t += pa * x;
                }
            }
            assert!(total.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn baselines_behave() {
        let s = &states(1, 6, 8)[0];
        let p = CostParams::default();
        let mut local = baseline_policy(BaselineKind::LocalOnly, p, 0);
        assert_eq!(local.decide(s).unwrap(), 0);

        let mut rr = baseline_policy(BaselineKind::RoundRobin, p, 0);
        let seq: Vec<usize> = (0..8).map(|_| rr.decide(s).unwrap()).collect();
        assert_eq!(seq, vec![1, 2, 3, 4, 5, 6, 1, 2]);

        let mut ll = baseline_policy(BaselineKind::LeastLoaded, p, 0);
        let mut loaded = s.clone();
        for (i, sv) in loaded.servers.iter_mut().enumerate() {
            sv.backlog_bits = 1e6 * (6 - i) as f64;
            sv.capacity_hz = 20e9;
        }
        assert_eq!(ll.decide(&loaded).unwrap(), 6);

        let mut oracle = baseline_policy(BaselineKind::GreedyOracle, p, 0);
        assert_eq!(oracle.decide(s).unwrap(), oracle_action(s, &p).0);
    }

    #[test]
    fn random_baseline_is_uniform() {
        let s = &states(1, 6, 9)[0];
        let mut r = baseline_policy(BaselineKind::Random, CostParams::default(), 17);
        let n = 100_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            counts[r.decide(s).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 7.0).abs() < 0.005, "frequency {f}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = random_params(&mut rng);
        let s = states(3, 5, 10).remove(2);
        let mut permuted = s.clone();
        let order = [3usize, 0, 4, 1, 2];
        permuted.servers = order.iter().map(|&i| s.servers[i].clone()).collect();
        permuted.uplink_rates_bps = order.iter().map(|&i| s.uplink_rates_bps[i]).collect();
        let cp = CostParams::default();
        let p = action_distribution(&params, &featurize(&s, &cp));
        let q = action_distribution(&params, &featurize(&permuted, &cp));
        assert!((p[0] - q[0]).abs() < 1e-15);
        for (j, &i) in order.iter().enumerate() {
            assert!((q[j + 1] - p[i + 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let params = PolicyParams {
            weights: (0..FEATURE_DIM).map(|i| i as f64 * 0.25 - 1.0).collect(),
            temperature: 0.7,
        };
        Checkpoint::from_params(&params).save(&path).unwrap();
        let back: PolicyParams<f64> = Checkpoint::load(&path).unwrap().params().unwrap();
        assert_eq!(back, params);
    }

    proptest! {
        #[test]
        fn distributions_normalized_for_any_topology(
            e in 0usize..12,
            w in proptest::collection::vec(-5.0f64..5.0, FEATURE_DIM),
            seed in 0u64..1000,
        ) {
            let params = PolicyParams { weights: w, temperature: 1.0 };
            let mut st = states(1, e.max(1), seed).remove(0);
            if e == 0 {
                st.servers.clear();
                st.uplink_rates_bps.clear();
            }
            let p = action_distribution(&params, &featurize(&st, &CostParams::default()));
            prop_assert_eq!(p.len(), e + 1);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x > 0.0));
        }
    }
}
