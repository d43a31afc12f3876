use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{eval_seeds, evaluate_policy};
use crate::lacs::{LacsConfig, LacsEvaluator};
use crate::model::{SystemState, Task};
use crate::policy::{action_distribution, featurize, sample_index, Decode, PolicyParams, ScorerPolicy, FEATURE_DIM};
use crate::scalar::{to_f64, Scalar};
use crate::serializer::DatasetRecord;
use crate::sim::{seeded_environment, stream_rng, Environment, SimConfig};

use super::{grpo_update, sample_group, sft_examples, sft_fit, Group, SftReport, TrainConfig, UpdateDiagnostics};

const EPISODE_SEED_STREAM: u64 = 21;
const ACTION_STREAM: u64 = 23;
/// Offset separating snapshot-evaluation seeds from training episodes.
const SNAPSHOT_SEED_OFFSET: u64 = 500_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub avg_latency_slots: f64,
    pub drop_rate: f64,
    pub perf_ratio: f64,
    pub load_balance: Option<f64>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub mean_reward: f64,
    pub kl_to_ref: f64,
    pub clip_fraction: f64,
    pub diagnostics: UpdateDiagnostics<f64>,
    pub eval: Option<EvalSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T: Scalar> {
    pub params: PolicyParams<T>,
    /// Frozen reference policy (the supervised fit, or zeros without data).
    pub reference: PolicyParams<T>,
    pub sft: Option<SftReport<T>>,
    pub log: Vec<TrainLogEntry>,
}

impl<T: Scalar> TrainOutcome<T> {
    /// The training log as JSON lines.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Training stopped early; `partial` holds the last accepted parameters.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} updates: {source}", partial.log.len())]
pub struct TrainAbort<T: Scalar> {
    pub partial: TrainOutcome<T>,
    #[source]
    pub source: Error,
}

/// Walks live episodes one decision state at a time. The caller steps the
/// environment with its chosen action before asking for the next state.
struct LiveStates<T: Scalar> {
    sim: SimConfig<T>,
    env: Environment<T>,
    pending: VecDeque<Task<T>>,
    in_slot: bool,
    slots_done: usize,
    seeds: ChaCha8Rng,
}

impl<T: Scalar> LiveStates<T> {
    fn new(sim: &SimConfig<T>, seed: u64) -> Result<Self> {
        let mut seeds = stream_rng(seed, EPISODE_SEED_STREAM);
        Ok(Self {
            env: seeded_environment(sim, seeds.gen())?,
            sim: sim.clone(),
            pending: VecDeque::new(),
            in_slot: false,
            slots_done: 0,
            seeds,
        })
    }

    fn next_state(&mut self) -> Result<SystemState<T>> {
        let limit = 1_000 * self.sim.episode_slots.max(1);
        for _ in 0..limit {
            if let Some(task) = self.pending.pop_front() {
                return Ok(self.env.observe(&task));
            }
            if self.in_slot {
                self.env.advance_slot();
                self.in_slot = false;
                self.slots_done += 1;
            }
            if self.slots_done == self.sim.episode_slots {
                self.env = seeded_environment(&self.sim, self.seeds.gen())?;
                self.slots_done = 0;
            }
            let tasks = self.env.sample_arrivals();
            if tasks.is_empty() {
                self.env.advance_idle();
            }
            self.pending = tasks.into();
            self.in_slot = true;
        }
        Err(Error::Training("no task arrived in 1000 episodes".into()))
    }
}

fn snapshot<T: Scalar>(sim: &SimConfig<T>, config: &TrainConfig<T>, params: &PolicyParams<T>) -> Result<EvalSnapshot> {
    let mut policy = ScorerPolicy::new(params.clone(), sim.cost_params(), Decode::Greedy, config.seed);
    let seeds = eval_seeds(sim.seed.wrapping_add(SNAPSHOT_SEED_OFFSET), config.eval_episodes.max(1));
    let r = evaluate_policy(&mut policy, sim, &seeds)?;
    Ok(EvalSnapshot {
        avg_latency_slots: r.avg_latency_slots,
        drop_rate: r.drop_rate,
        perf_ratio: r.perf_ratio,
        load_balance: r.load_balance,
    })
}

/// Supervised initialization (when `sft_data` is given) followed by
/// `config.iterations` GRPO updates on live episodes.
///
/// Each batch state yields a group of `G` actions drawn from the current
/// policy; every candidate is scored against the same state by its own
/// forked look-ahead evaluator (plain `-J` when `λ = 0`), and the real
/// environment then moves on with a separate draw. Look-ahead randomness
/// lives on its own stream, so runs with and without shaping see the same
/// arrivals and channel draws.
pub fn train<T: Scalar>(
    sim: &SimConfig<T>,
    config: &TrainConfig<T>,
    lacs: &LacsConfig<T>,
    sft_data: Option<&[DatasetRecord]>,
) -> std::result::Result<TrainOutcome<T>, TrainAbort<T>> {
    let mut outcome = TrainOutcome {
        params: PolicyParams::zeros(FEATURE_DIM),
        reference: PolicyParams::zeros(FEATURE_DIM),
        sft: None,
        log: Vec::new(),
    };
    macro_rules! try_or_abort {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    return Err(TrainAbort {
                        partial: outcome,
                        source: source.into(),
                    })
                }
            }
        };
    }

    try_or_abort!(sim.validate());
    try_or_abort!(config.validate());
    try_or_abort!(lacs.validate());
    let cost_params = sim.cost_params();

    if let Some(records) = sft_data {
        let examples = sft_examples(records, &cost_params);
        let report = try_or_abort!(sft_fit(&examples, &outcome.params, config));
        log::info!(
            "supervised fit: loss {:.4} -> {:.4}, accuracy {:.3}",
            to_f64(report.losses[0]),
            to_f64(*report.losses.last().expect("initial loss recorded")),
            to_f64(report.accuracy)
        );
        outcome.params = report.params.clone();
        outcome.reference = report.params.clone();
        outcome.sft = Some(report);
    }

    let mut live = try_or_abort!(LiveStates::new(sim, config.seed));
    let mut rng = stream_rng(config.seed, ACTION_STREAM);
    let mut evaluator = LacsEvaluator::new(lacs.clone(), cost_params, sim.uplink.clone(), config.seed);

    for iteration in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_states);
        for _ in 0..config.batch_states {
            let state = try_or_abort!(live.next_state());
            let features = featurize(&state, &cost_params);
            let samples = sample_group(&outcome.params, &features, config.group_size, &mut rng);
            let mut rewards = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let scored = evaluator.fork(i as u64).evaluate(&state, s.action);
                rewards.push(try_or_abort!(scored).reward);
            }
            evaluator.advance();
            let action = sample_index(&action_distribution(&outcome.params, &features), &mut rng);
            try_or_abort!(live.env.step(&state, action));
            batch.push(Group {
                features,
                samples,
                rewards,
            });
        }
        let (next, diag) = try_or_abort!(grpo_update(&outcome.params, &outcome.reference, &batch, config));
        outcome.params = next;
        let last = iteration + 1 == config.iterations;
        let due = config.eval_interval > 0 && ((iteration + 1) % config.eval_interval == 0 || last);
        let eval = if due {
            Some(try_or_abort!(snapshot(sim, config, &outcome.params)))
        } else {
            None
        };
        let diag = diag.to_f64();
        log::debug!(
            "update {iteration}: reward {:.3}, kl_ref {:.4}, clip {:.3}",
            diag.mean_group_reward,
            diag.kl_to_ref,
            diag.mean_clip_fraction
        );
        outcome.log.push(TrainLogEntry {
            iteration,
            mean_reward: diag.mean_group_reward,
            kl_to_ref: diag.kl_to_ref,
            clip_fraction: diag.mean_clip_fraction,
            diagnostics: diag,
            eval,
        });
    }
    Ok(outcome)
}
