//! Policy metrics and experiment sweeps.
//!
//! Internally every ratio stays in `[0, 1]`; percentages only appear when a
//! report is formatted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::{lit, to_f64, Scalar};
use crate::serializer::{PromptMode, PromptStyle, PromptView};
use crate::sim::{run_episode, seeded_environment, EpisodeTrace, SimConfig};

/// Mean generalized cost (slots).
pub fn avg_latency<T: Scalar>(costs: &[T]) -> Result<T> {
    if costs.is_empty() {
        return Err(Error::Metric("average latency of an empty sample".into()));
    }
    Ok(costs.iter().copied().sum::<T>() / lit(costs.len() as f64))
}

/// Fraction of costs strictly above their deadline.
pub fn drop_rate<T: Scalar>(costs: &[T], deadlines: &[T]) -> Result<T> {
    if costs.is_empty() {
        return Err(Error::Metric("drop rate of an empty sample".into()));
    }
    if costs.len() != deadlines.len() {
        return Err(Error::Metric(format!(
            "{} costs but {} deadlines",
            costs.len(),
            deadlines.len()
        )));
    }
    let dropped = costs.iter().zip(deadlines).filter(|(c, d)| c > d).count();
    Ok(lit::<T>(dropped as f64) / lit(costs.len() as f64))
}

/// Mean oracle cost over mean policy cost on the same states.
pub fn perf_ratio<T: Scalar>(policy_costs: &[T], oracle_costs: &[T]) -> Result<T> {
    if policy_costs.len() != oracle_costs.len() {
        return Err(Error::Metric("policy and oracle costs are not paired".into()));
    }
    let al = avg_latency(policy_costs)?;
    if al <= T::zero() {
        return Err(Error::Metric("performance ratio undefined for zero average latency".into()));
    }
    Ok(avg_latency(oracle_costs)? / al)
}

/// Jain's fairness index over per-server assignment counts; `W` is the
/// number of entries.
pub fn load_balance(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Metric("load balance needs at least one server".into()));
    }
    let sum: f64 = counts.iter().map(|&c| c as f64).sum();
    let sq: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
    if sum == 0.0 {
        return Err(Error::Metric("load balance undefined when no task was offloaded".into()));
    }
    Ok(sum * sum / (counts.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub avg_latency_slots: f64,
    pub drop_rate: f64,
    pub perf_ratio: f64,
    /// `None` when the policy never offloaded.
    pub load_balance: Option<f64>,
    /// Index 0 counts local executions, index `e` counts server `e`.
    pub per_action_counts: Vec<usize>,
    pub n_samples: usize,
    pub episodes: usize,
}

impl MetricsReport {
    /// Aggregates paired traces.
    pub fn from_traces<T: Scalar>(policy: &str, traces: &[EpisodeTrace<T>]) -> Result<Self> {
        let mut costs = Vec::new();
        let mut oracle = Vec::new();
        let mut deadlines = Vec::new();
        let num_actions = traces
            .iter()
            .map(|t| t.config.num_servers + 1)
            .max()
            .unwrap_or(1);
        let mut counts = vec![0usize; num_actions];
        for trace in traces {
            for r in &trace.records {
                costs.push(to_f64(r.cost));
                oracle.push(to_f64(r.oracle_cost));
                deadlines.push(to_f64(r.deadline_slots));
                counts[r.action] += 1;
            }
        }
        Ok(Self {
            policy: policy.to_string(),
            avg_latency_slots: avg_latency(&costs)?,
            drop_rate: drop_rate(&costs, &deadlines)?,
            perf_ratio: perf_ratio(&costs, &oracle)?,
            load_balance: load_balance(&counts[1..]).ok(),
            per_action_counts: counts,
            n_samples: costs.len(),
            episodes: traces.len(),
        })
    }

    /// Share of tasks executed locally.
    pub fn local_share(&self) -> f64 {
        self.per_action_counts[0] as f64 / self.n_samples.max(1) as f64
    }
}

/// Evaluation seeds `base, base + 1, ...`.
pub fn eval_seeds(base: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Runs one episode per seed and aggregates the metrics. The same seed list
/// gives every policy the same arrivals and channel draws.
pub fn evaluate_policy<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &mut P,
    config: &SimConfig<T>,
    seeds: &[u64],
) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::config("episodes", "must be >= 1"));
    }
    let mut traces = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut env = seeded_environment(config, seed)?;
        traces.push(run_episode(&mut env, policy).map_err(|e| e.source)?);
    }
    MetricsReport::from_traces(&policy.name(), &traces)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TaskSize,
    Servers,
    Perturbation,
}

/// One point on a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisValue {
    TaskSizeMbits(f64),
    Servers(usize),
    Prompt(PromptMode),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::TaskSizeMbits(s) => format!("{s} Mbits"),
            AxisValue::Servers(e) => format!("{e} servers"),
            AxisValue::Prompt(m) => m.as_str().to_string(),
        }
    }

    /// `base` adjusted to this point.
    pub fn apply<T: Scalar>(&self, base: &SimConfig<T>) -> SimConfig<T> {
        match self {
            AxisValue::TaskSizeMbits(s) => base.clone().with_fixed_task_size(lit(s * 1e6)),
            AxisValue::Servers(e) => SimConfig {
                num_servers: *e,
                ..base.clone()
            },
            AxisValue::Prompt(_) => base.clone(),
        }
    }
}

impl SweepAxis {
    pub fn values(&self) -> Vec<AxisValue> {
        match self {
            SweepAxis::TaskSize => [2.0, 4.0, 6.0, 8.0, 10.0]
                .into_iter()
                .map(AxisValue::TaskSizeMbits)
                .collect(),
            SweepAxis::Servers => [3, 5, 7, 9, 11].into_iter().map(AxisValue::Servers).collect(),
            SweepAxis::Perturbation => PromptMode::ALL.into_iter().map(AxisValue::Prompt).collect(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::TaskSize => "task_size",
            SweepAxis::Servers => "servers",
            SweepAxis::Perturbation => "perturbation",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "task_size" => Ok(SweepAxis::TaskSize),
            "servers" => Ok(SweepAxis::Servers),
            "perturbation" => Ok(SweepAxis::Perturbation),
            other => Err(format!(
                "unknown axis `{other}` (expected task_size, servers or perturbation)"
            )),
        }
    }
}

/// Builds a fresh policy for a given environment configuration.
pub type PolicyFactory<'a, T> = Box<dyn FnMut(&SimConfig<T>) -> Result<Box<dyn Policy<T>>> + 'a>;

pub struct SweepEntry<'a, T: Scalar> {
    pub name: String,
    pub make: PolicyFactory<'a, T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub axis: String,
    pub report: MetricsReport,
}

pub const CSV_HEADER: &str = "policy,axis,AL,TDR,PR,LBI";

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl SweepRow {
    pub fn csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{:.4},{},{},{}",
            self.policy,
            self.axis,
            r.avg_latency_slots,
            pct(r.drop_rate),
            pct(r.perf_ratio),
            r.load_balance.map(pct).unwrap_or_else(|| "NA".into())
        )
    }
}

/// Evaluates every policy at every point of `axis` and streams one CSV row
/// per (policy, axis value) to `out`. On failure a row tagged `ERROR` is
/// written and flushed before the error is returned, so the table gathered
/// so far survives.
pub fn sweep<T: Scalar>(
    entries: &mut [SweepEntry<'_, T>],
    axis: SweepAxis,
    base: &SimConfig<T>,
    seeds: &[u64],
    noise_seed: u64,
    out: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut rows = Vec::new();
    for value in axis.values() {
        let config = value.apply(base);
        for entry in entries.iter_mut() {
            let result = (entry.make)(&config).and_then(|policy| match value {
                AxisValue::Prompt(mode) => {
                    let mut view = PromptView {
                        inner: policy,
                        style: PromptStyle::new(mode, noise_seed),
                    };
                    evaluate_policy(&mut view, &config, seeds)
                }
                _ => {
                    let mut policy = policy;
                    evaluate_policy(&mut policy, &config, seeds)
                }
            });
            match result {
                Ok(mut report) => {
                    report.policy = entry.name.clone();
                    let row = SweepRow {
                        policy: entry.name.clone(),
                        axis: value.label(),
                        report,
                    };
                    writeln!(out, "{}", row.csv())?;
                    out.flush()?;
                    rows.push(row);
                }
                Err(e) => {
                    writeln!(out, "{},{},ERROR,ERROR,ERROR,ERROR", entry.name, value.label())?;
                    out.flush()?;
                    return Err(e);
                }
            }
        }
    }
    Ok(rows)
}
