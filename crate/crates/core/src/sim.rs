//! Slotted stochastic environment: arrivals, observation, queue evolution
//! and episode rollout.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    candidate_latency, generalized_cost, local_drain_bits, service_drain_bits, uplink_rate,
    ChannelModel, CostParams, DeviceState, ServerState, SystemState, Task,
};
use crate::oracle;
use crate::policy::Policy;
use crate::scalar::{lit, to_f64, Scalar};

const ARRIVAL_STREAM: u64 = 0;
const CHANNEL_STREAM: u64 = 1;

/// Deterministic RNG for a `(seed, stream)` pair. Streams never overlap, so
/// consumers on different streams cannot perturb each other.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How uplink rates are drawn for each decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum UplinkModel<T> {
    /// Rates uniform in `[min_bps, max_bps]`, independently per server.
    UniformRate { min_bps: T, max_bps: T },
    /// Shannon rate over a unit-mean exponential (Rayleigh power) gain.
    Rayleigh { channel: ChannelModel<T> },
    /// Constant per-server rates; server `i` uses `rates_bps[i % len]`.
    Fixed { rates_bps: Vec<T> },
}

impl<T: Scalar> UplinkModel<T> {
    pub fn sample<R: Rng + ?Sized>(&self, num_servers: usize, rng: &mut R) -> Vec<T> {
        match self {
            UplinkModel::UniformRate { min_bps, max_bps } => {
                let (lo, hi) = (to_f64(*min_bps), to_f64(*max_bps));
                (0..num_servers)
                    .map(|_| lit(if hi > lo { rng.gen_range(lo..hi) } else { lo }))
                    .collect()
            }
            UplinkModel::Rayleigh { channel } => (0..num_servers)
                .map(|_| {
                    let gain = exp_unit(rng).max(1e-12) * to_f64(channel.gain_scale);
                    uplink_rate(channel, lit::<T>(gain)).max(T::one())
                })
                .collect(),
            UplinkModel::Fixed { rates_bps } => (0..num_servers)
                .map(|i| rates_bps[i % rates_bps.len()])
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            UplinkModel::UniformRate { min_bps, max_bps } => {
                if !(*min_bps > T::zero() && min_bps <= max_bps) {
                    return Err(Error::config("uplink", "need 0 < min_bps <= max_bps"));
                }
            }
            UplinkModel::Rayleigh { channel } => channel
                .validate()
                .map_err(|e| Error::config("uplink.channel", e.to_string()))?,
            UplinkModel::Fixed { rates_bps } => {
                if rates_bps.is_empty() || rates_bps.iter().any(|r| !(*r > T::zero())) {
                    return Err(Error::config("uplink.rates_bps", "need positive rates"));
                }
            }
        }
        Ok(())
    }
}

fn exp_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}

/// Finds `P/σ²` such that the mean Shannon rate over unit-mean exponential
/// gains equals `target_mean_bps`, using a fixed-seed Monte Carlo sample.
pub fn calibrate_channel<T: Scalar>(
    bandwidth_hz: T,
    target_mean_bps: T,
    samples: usize,
    seed: u64,
) -> ChannelModel<T> {
    let mut rng = stream_rng(seed, 7);
    let gains: Vec<f64> = (0..samples.max(1)).map(|_| exp_unit(&mut rng)).collect();
    let b = to_f64(bandwidth_hz);
    let target = to_f64(target_mean_bps);
    let mean_rate = |snr: f64| {
        gains.iter().map(|g| b * (1.0 + snr * g).log2()).sum::<f64>() / gains.len() as f64
    };
    let (mut lo, mut hi) = (1e-6_f64.ln(), 1e9_f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_rate(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ChannelModel {
        bandwidth_hz,
        tx_power_w: lit((0.5 * (lo + hi)).exp()),
        noise_power_w: T::one(),
        gain_scale: T::one(),
    }
}

/// Environment configuration. Defaults follow the reference parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "")]
pub struct SimConfig<T: Scalar> {
    pub num_servers: usize,
    pub num_users: usize,
    pub slot_seconds: T,
    pub arrival_prob: T,
    pub capacity_range_hz: [T; 2],
    pub size_range_bits: [T; 2],
    pub density: T,
    pub deadline_slots: T,
    pub episode_slots: usize,
    pub seed: u64,
    pub history_len: usize,
    pub local_freq_hz: T,
    pub deadline_penalty: T,
    pub uplink: UplinkModel<T>,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            num_servers: 6,
            num_users: 1,
            slot_seconds: lit(0.1),
            arrival_prob: lit(0.3),
            capacity_range_hz: [lit(20e9), lit(48e9)],
            size_range_bits: [lit(2e6), lit(5e6)],
            density: lit(297.0),
            deadline_slots: lit(10.0),
            episode_slots: 200,
            seed: 42,
            history_len: 5,
            local_freq_hz: lit(2e9),
            deadline_penalty: lit(10.0),
            uplink: UplinkModel::UniformRate {
                min_bps: lit(7e6),
                max_bps: lit(21e6),
            },
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::config(field, "must be > 0"))
            }
        };
        if self.num_servers == 0 {
            return Err(Error::config("num_servers", "at least one edge server is required"));
        }
        if self.num_users == 0 {
            return Err(Error::config("num_users", "at least one user is required"));
        }
        positive("slot_seconds", self.slot_seconds)?;
        if !(self.arrival_prob >= T::zero() && self.arrival_prob <= T::one()) {
            return Err(Error::config("arrival_prob", "must lie in [0, 1]"));
        }
        positive("capacity_range_hz", self.capacity_range_hz[0])?;
        if self.capacity_range_hz[0] > self.capacity_range_hz[1] {
            return Err(Error::config("capacity_range_hz", "min exceeds max"));
        }
        positive("size_range_bits", self.size_range_bits[0])?;
        if self.size_range_bits[0] > self.size_range_bits[1] {
            return Err(Error::config("size_range_bits", "min exceeds max"));
        }
        positive("density", self.density)?;
        positive("deadline_slots", self.deadline_slots)?;
        if self.episode_slots == 0 {
            return Err(Error::config("episode_slots", "must be > 0"));
        }
        positive("local_freq_hz", self.local_freq_hz)?;
        if !(self.deadline_penalty >= T::zero()) {
            return Err(Error::config("deadline_penalty", "must be >= 0"));
        }
        self.uplink.validate()
    }

    pub fn cost_params(&self) -> CostParams<T> {
        CostParams {
            deadline_penalty: self.deadline_penalty,
            slot_seconds: self.slot_seconds,
        }
    }

    /// Same configuration with every task exactly `size_bits` large.
    pub fn with_fixed_task_size(mut self, size_bits: T) -> Self {
        self.size_range_bits = [size_bits, size_bits];
        self
    }
}

/// Compact numeric snapshot of a decision state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDigest<T> {
    pub backlogs_bits: Vec<T>,
    pub active_tasks: Vec<usize>,
    pub uplink_rates_bps: Vec<T>,
    pub local_backlog_bits: T,
}

impl<T: Scalar> StateDigest<T> {
    pub fn of(state: &SystemState<T>) -> Self {
        Self {
            backlogs_bits: state.servers.iter().map(|s| s.backlog_bits).collect(),
            active_tasks: state.servers.iter().map(|s| s.active_tasks).collect(),
            uplink_rates_bps: state.uplink_rates_bps.clone(),
            local_backlog_bits: state.device.backlog_of(state.task.user),
        }
    }
}

/// One decision and its consequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub slot: u64,
    pub user: usize,
    pub task_id: usize,
    pub size_bits: T,
    pub deadline_slots: T,
    pub state_digest: StateDigest<T>,
    pub action: usize,
    pub latency_slots: T,
    pub cost: T,
    /// Minimum one-step cost over all actions in the same state.
    pub oracle_cost: T,
    pub shaped_reward: Option<T>,
    pub deadline_violated: bool,
}

impl<T: Scalar> StepRecord<T> {
    /// Base reward: negative generalized cost.
    pub fn base_reward(&self) -> T {
        -self.cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpisodeTrace<T: Scalar> {
    pub config: SimConfig<T>,
    pub records: Vec<StepRecord<T>>,
    pub final_backlogs_bits: Vec<T>,
    pub local_count: usize,
    /// Tasks offloaded to each edge server, indexed by server.
    pub server_counts: Vec<usize>,
}

impl<T: Scalar> EpisodeTrace<T> {
    fn empty(config: SimConfig<T>) -> Self {
        let e = config.num_servers;
        Self {
            config,
            records: Vec::new(),
            final_backlogs_bits: vec![T::zero(); e],
            local_count: 0,
            server_counts: vec![0; e],
        }
    }

    fn push(&mut self, record: StepRecord<T>) {
        if record.action == 0 {
            self.local_count += 1;
        } else {
            self.server_counts[record.action - 1] += 1;
        }
        self.records.push(record);
    }

    pub fn costs(&self) -> Vec<T> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn oracle_costs(&self) -> Vec<T> {
        self.records.iter().map(|r| r.oracle_cost).collect()
    }

    /// Writes one JSON object per record with the fields
    /// `slot, user, size_bits, action, latency_slots, cost, violated`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::json!({
                "slot": r.slot,
                "user": r.user,
                "size_bits": to_f64(r.size_bits),
                "action": r.action,
                "latency_slots": to_f64(r.latency_slots),
                "cost": to_f64(r.cost),
                "violated": r.deadline_violated,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Running totals used to audit bit conservation at one server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BitLedger<T> {
    pub admitted_bits: T,
    pub drained_bits: T,
}

#[derive(Debug, Clone)]
struct ServerQueue<T> {
    state: ServerState<T>,
    /// Remaining bits of each admitted task, in admission order.
    jobs: VecDeque<T>,
    ledger: BitLedger<T>,
}

impl<T: Scalar> ServerQueue<T> {
    fn drain(&mut self, slot_seconds: T, density: T) {
        let capacity = service_drain_bits(&self.state, slot_seconds, density);
        let drained = capacity.min(self.state.backlog_bits);
        self.ledger.drained_bits = self.ledger.drained_bits + drained;
        if drained >= self.state.backlog_bits {
            self.state.backlog_bits = T::zero();
            self.jobs.clear();
        } else {
            self.state.backlog_bits = self.state.backlog_bits - drained;
            let mut left = drained;
            while let Some(front) = self.jobs.front_mut() {
                if *front <= left {
                    left = left - *front;
                    self.jobs.pop_front();
                } else {
                    *front = *front - left;
                    break;
                }
            }
        }
        self.state.active_tasks = self.jobs.len();
    }

    fn admit(&mut self, bits: T) {
        self.state.backlog_bits = self.state.backlog_bits + bits;
        self.jobs.push_back(bits);
        self.state.active_tasks = self.jobs.len();
        self.ledger.admitted_bits = self.ledger.admitted_bits + bits;
    }

    fn record_history(&mut self, len: usize) {
        self.state.history.push(self.state.backlog_bits);
        if self.state.history.len() > len {
            let excess = self.state.history.len() - len;
            self.state.history.drain(..excess);
        }
    }
}

/// The offloading MDP.
#[derive(Debug, Clone)]
pub struct Environment<T: Scalar> {
    config: SimConfig<T>,
    servers: Vec<ServerQueue<T>>,
    local_backlog: Vec<T>,
    slot: u64,
    next_task_id: usize,
    arrival_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
}

impl<T: Scalar> Environment<T> {
    pub fn new(config: SimConfig<T>) -> Result<Self> {
        config.validate()?;
        let mut arrival_rng = stream_rng(config.seed, ARRIVAL_STREAM);
        let channel_rng = stream_rng(config.seed, CHANNEL_STREAM);
        let (lo, hi) = (
            to_f64(config.capacity_range_hz[0]),
            to_f64(config.capacity_range_hz[1]),
        );
        let servers = (0..config.num_servers)
            .map(|i| {
                let f = if hi > lo { arrival_rng.gen_range(lo..=hi) } else { lo };
                ServerQueue {
                    state: ServerState::idle(i + 1, lit(f)),
                    jobs: VecDeque::new(),
                    ledger: BitLedger::default(),
                }
            })
            .collect();
        Ok(Self {
            local_backlog: vec![T::zero(); config.num_users],
            config,
            servers,
            slot: 0,
            next_task_id: 0,
            arrival_rng,
            channel_rng,
        })
    }

    /// Builds an environment around explicitly given servers (capacities,
    /// backlogs). Queued work is modeled as one job per reported active task.
    pub fn with_servers(config: SimConfig<T>, servers: Vec<ServerState<T>>) -> Result<Self> {
        let mut env = Self::new(SimConfig {
            num_servers: servers.len(),
            ..config
        })?;
        for (queue, state) in env.servers.iter_mut().zip(servers) {
            let n = state.active_tasks.max(usize::from(state.backlog_bits > T::zero()));
            queue.jobs = (0..n)
                .map(|_| state.backlog_bits / crate::scalar::count::<T>(n))
                .collect();
            queue.state = state;
        }
        Ok(env)
    }

    pub fn config(&self) -> &SimConfig<T> {
        &self.config
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn server_states(&self) -> Vec<ServerState<T>> {
        self.servers.iter().map(|q| q.state.clone()).collect()
    }

    pub fn local_backlogs(&self) -> &[T] {
        &self.local_backlog
    }

    pub fn ledgers(&self) -> Vec<BitLedger<T>> {
        self.servers.iter().map(|q| q.ledger).collect()
    }

    /// Bernoulli arrival per user this slot, ordered by user index.
    pub fn sample_arrivals(&mut self) -> Vec<Task<T>> {
        let p = to_f64(self.config.arrival_prob);
        let (lo, hi) = (
            to_f64(self.config.size_range_bits[0]),
            to_f64(self.config.size_range_bits[1]),
        );
        let mut tasks = Vec::new();
        for user in 0..self.config.num_users {
            if self.arrival_rng.gen::<f64>() < p {
                let size = if hi > lo {
                    self.arrival_rng.gen_range(lo..=hi)
                } else {
                    lo
                };
                tasks.push(Task {
                    id: self.next_task_id,
                    user,
                    size_bits: lit(size),
                    density_cycles_per_bit: self.config.density,
                    deadline_slots: self.config.deadline_slots,
                });
                self.next_task_id += 1;
            }
        }
        tasks
    }

    /// Observable state for `task`, with fresh uplink rates. Queues are not touched.
    pub fn observe(&mut self, task: &Task<T>) -> SystemState<T> {
        let rates = self
            .config
            .uplink
            .sample(self.servers.len(), &mut self.channel_rng);
        SystemState {
            task: task.clone(),
            uplink_rates_bps: rates,
            device: DeviceState {
                local_freq_hz: self.config.local_freq_hz,
                local_backlog_bits: self.local_backlog.clone(),
            },
            servers: self.server_states(),
            slot: self.slot,
        }
    }

    /// Applies `action` to the task of the observed `state` and advances all
    /// queues by one service interval.
    pub fn step(&mut self, state: &SystemState<T>, action: usize) -> Result<StepRecord<T>> {
        if state.servers.len() != self.servers.len() {
            return Err(Error::config(
                "state",
                format!(
                    "observed {} servers, environment has {}",
                    state.servers.len(),
                    self.servers.len()
                ),
            ));
        }
        let latency_s = candidate_latency(state, action)?;
        let params = self.config.cost_params();
        let cost = generalized_cost(latency_s, &state.task, &params);
        let latency_slots = latency_s / params.slot_seconds;
        let (_, oracle_cost) = oracle::oracle_action(state, &params);

        self.service_interval(Some((state.task.user, action, state.task.size_bits)));

        Ok(StepRecord {
            slot: self.slot,
            user: state.task.user,
            task_id: state.task.id,
            size_bits: state.task.size_bits,
            deadline_slots: state.task.deadline_slots,
            state_digest: StateDigest::of(state),
            action,
            latency_slots,
            cost,
            oracle_cost,
            shaped_reward: None,
            deadline_violated: latency_slots > state.task.deadline_slots,
        })
    }

    /// One service interval with no admission (a slot without arrivals).
    pub fn advance_idle(&mut self) {
        self.service_interval(None);
    }

    pub fn advance_slot(&mut self) {
        self.slot += 1;
    }

    fn service_interval(&mut self, admission: Option<(usize, usize, T)>) {
        let dt = self.config.slot_seconds;
        let density = self.config.density;
        let local_drain = local_drain_bits(self.config.local_freq_hz, dt, density);
        for backlog in &mut self.local_backlog {
            *backlog = (*backlog - local_drain).max(T::zero());
        }
        for queue in &mut self.servers {
            queue.drain(dt, density);
        }
        match admission {
            Some((user, 0, bits)) => {
                if let Some(b) = self.local_backlog.get_mut(user) {
                    *b = *b + bits;
                }
            }
            Some((_, action, bits)) => self.servers[action - 1].admit(bits),
            None => {}
        }
        let h = self.config.history_len;
        for queue in &mut self.servers {
            queue.record_history(h);
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("episode aborted after {} records: {source}", partial.records.len())]
pub struct EpisodeError<T: Scalar> {
    pub partial: EpisodeTrace<T>,
    #[source]
    pub source: Error,
}

/// Rolls out one full episode with `policy` deciding every arrival.
pub fn run_episode<T: Scalar, P: Policy<T> + ?Sized>(
    env: &mut Environment<T>,
    policy: &mut P,
) -> std::result::Result<EpisodeTrace<T>, EpisodeError<T>> {
    let mut trace = EpisodeTrace::empty(env.config().clone());
    for _ in 0..env.config().episode_slots {
        let tasks = env.sample_arrivals();
        if tasks.is_empty() {
            env.advance_idle();
        }
        for task in tasks {
            let state = env.observe(&task);
            let outcome = policy
                .decide(&state)
                .map_err(Error::from)
                .and_then(|a| env.step(&state, a));
            match outcome {
                Ok(record) => trace.push(record),
                Err(source) => {
                    trace.final_backlogs_bits = backlogs(env);
                    return Err(EpisodeError {
                        partial: trace,
                        source,
                    });
                }
            }
        }
        env.advance_slot();
    }
    trace.final_backlogs_bits = backlogs(env);
    Ok(trace)
}

fn backlogs<T: Scalar>(env: &Environment<T>) -> Vec<T> {
    env.servers.iter().map(|q| q.state.backlog_bits).collect()
}

/// Convenience: a fresh environment for `config` with its seed replaced.
pub fn seeded_environment<T: Scalar>(config: &SimConfig<T>, seed: u64) -> Result<Environment<T>> {
    Environment::new(SimConfig {
        seed,
        ..config.clone()
    })
}
