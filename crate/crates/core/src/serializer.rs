//! Structured-text rendering of decision states, prompt perturbations, and
//! oracle-labeled dataset export.
//!
//! Every numeric field carries a unit token, servers are rendered as a
//! variable-length list of identical key/value blocks, and each server's
//! recent backlog is rendered as a bracketed sequence. [`parse_prompt`]
//! inverts the rendering for all four styles.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostParams, DeviceState, ServerState, SystemState, Task};
use crate::oracle::oracle_action;
use crate::policy::{baseline_policy, BaselineKind, Policy};
use crate::scalar::{lit, to_f64, Scalar};
use crate::sim::{seeded_environment, stream_rng, SimConfig};

/// Significant digits printed for every value.
pub const PRECISION: usize = 6;

/// Prefix of injected filler lines.
pub const FILLER_MARKER: &str = "(aside) ";

const INSTRUCTION: &str = "Decide where the task above should run. Reply with exactly one of \
\"Execute Locally\" or \"Offload to Server <k>\".";

const FILLERS: [&str; 6] = [
    "The weather report for the campus predicts light rain in the afternoon.",
    "Maintenance staff rotated the parking permits last week.",
    "A cafeteria survey found that most people prefer green tea.",
    "The lobby display now cycles through a gallery of landscapes.",
    "Several interns joined the facilities team this quarter.",
    "The building elevators were repainted in a darker shade.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Standard,
    ShuffledParams,
    NoisyText,
    UnitVariation,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::Standard,
        PromptMode::ShuffledParams,
        PromptMode::NoisyText,
        PromptMode::UnitVariation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Standard => "standard",
            PromptMode::ShuffledParams => "shuffled_params",
            PromptMode::NoisyText => "noisy_text",
            PromptMode::UnitVariation => "unit_variation",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PromptMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown prompt mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub mode: PromptMode,
    pub noise_seed: u64,
}

impl PromptStyle {
    pub fn standard() -> Self {
        Self {
            mode: PromptMode::Standard,
            noise_seed: 0,
        }
    }

    pub fn new(mode: PromptMode, noise_seed: u64) -> Self {
        Self { mode, noise_seed }
    }
}

/// Physical quantity of a field; decides its unit tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Bits,
    Frequency,
    Rate,
    Seconds,
    Density,
    Count,
}

impl Quantity {
    /// (unit token, factor from SI) for the standard and the varied rendering.
    fn units(self) -> [(&'static str, f64); 2] {
        match self {
            Quantity::Bits => [("Mbits", 1e-6), ("kbits", 1e-3)],
            Quantity::Frequency => [("GHz", 1e-9), ("MHz", 1e-6)],
            Quantity::Rate => [("Mbps", 1e-6), ("kbps", 1e-3)],
            Quantity::Seconds => [("s", 1.0), ("ms", 1e3)],
            Quantity::Density => [("cycles/bit", 1.0), ("gigacycles/Mbit", 1e-3)],
            Quantity::Count => [("tasks", 1.0), ("tasks", 1.0)],
        }
    }

    fn si_factor(unit: &str) -> Option<f64> {
        let all = [
            Quantity::Bits,
            Quantity::Frequency,
            Quantity::Rate,
            Quantity::Seconds,
            Quantity::Density,
            Quantity::Count,
        ];
        all.iter()
            .flat_map(|q| q.units())
            .find(|(u, _)| *u == unit)
            .map(|(_, f)| 1.0 / f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FieldValue {
    Scalar(f64),
    Sequence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
struct Field {
    key: &'static str,
    quantity: Quantity,
    /// SI value(s).
    value: FieldValue,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    header: String,
    fields: Vec<Field>,
}

/// Intermediate prompt structure shared by all renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDoc {
    blocks: Vec<Block>,
}

fn scalar(key: &'static str, quantity: Quantity, v: f64) -> Field {
    Field {
        key,
        quantity,
        value: FieldValue::Scalar(v),
    }
}

/// Structured description of `state`.
pub fn build_doc<T: Scalar>(state: &SystemState<T>, params: &CostParams<T>) -> PromptDoc {
    let task = &state.task;
    let mut blocks = vec![Block {
        header: "[Task]".into(),
        fields: vec![
            scalar("size", Quantity::Bits, to_f64(task.size_bits)),
            scalar("density", Quantity::Density, to_f64(task.density_cycles_per_bit)),
            scalar(
                "deadline",
                Quantity::Seconds,
                to_f64(task.deadline_slots * params.slot_seconds),
            ),
            scalar("local_cpu", Quantity::Frequency, to_f64(state.device.local_freq_hz)),
            scalar(
                "local_backlog",
                Quantity::Bits,
                to_f64(state.device.backlog_of(task.user)),
            ),
        ],
    }];
    for (server, rate) in state.servers.iter().zip(&state.uplink_rates_bps) {
        blocks.push(Block {
            header: format!("[Server {}]", server.id),
            fields: vec![
                scalar("capacity", Quantity::Frequency, to_f64(server.capacity_hz)),
                scalar("active_tasks", Quantity::Count, server.active_tasks as f64),
                scalar("backlog", Quantity::Bits, to_f64(server.backlog_bits)),
                scalar("uplink", Quantity::Rate, to_f64(*rate)),
                Field {
                    key: "history",
                    quantity: Quantity::Bits,
                    value: FieldValue::Sequence(server.history.iter().map(|h| to_f64(*h)).collect()),
                },
            ],
        });
    }
    PromptDoc { blocks }
}

/// `x` with `digits` significant digits and at least one decimal place.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.1}");
    }
    let exponent = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exponent).max(1) as usize;
    format!("{x:.decimals$}")
}

fn render_value(field: &Field, varied: bool) -> String {
    let (unit, factor) = field.quantity.units()[usize::from(varied)];
    let one = |v: f64| {
        if field.quantity == Quantity::Count {
            format!("{} {unit}", v.round() as i64)
        } else {
            format!("{} {unit}", format_sig(v * factor, PRECISION))
        }
    };
    match &field.value {
        FieldValue::Scalar(v) => one(*v),
        FieldValue::Sequence(vs) => {
            format!("[{}]", vs.iter().map(|v| one(*v)).collect::<Vec<_>>().join(", "))
        }
    }
}

/// Renders `doc` in the requested style.
pub fn perturb(doc: &PromptDoc, style: &PromptStyle) -> String {
    let mut rng = stream_rng(style.noise_seed, 17);
    let varied = style.mode == PromptMode::UnitVariation;
    let mut out = String::new();
    for (i, block) in doc.blocks.iter().enumerate() {
        if style.mode == PromptMode::NoisyText && i > 0 && rng.gen_bool(0.5) {
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            out.push_str(&format!("{FILLER_MARKER}{filler}\n"));
        }
        out.push_str(&block.header);
        out.push('\n');
        let mut order: Vec<usize> = (0..block.fields.len()).collect();
        if style.mode == PromptMode::ShuffledParams {
            order.shuffle(&mut rng);
        }
        for idx in order {
            let field = &block.fields[idx];
            out.push_str(&format!("{}: {}\n", field.key, render_value(field, varied)));
        }
    }
    if style.mode == PromptMode::NoisyText && rng.gen_bool(0.5) {
        out.push_str(&format!("{FILLER_MARKER}{}\n", FILLERS[rng.gen_range(0..FILLERS.len())]));
    }
    out.push_str("[Instruction]\n");
    out.push_str(INSTRUCTION);
    out.push('\n');
    out
}

/// Prompt text for `state`. The style's noise seed is mixed with the task id
/// so different states get different perturbations.
pub fn serialize<T: Scalar>(state: &SystemState<T>, style: &PromptStyle, params: &CostParams<T>) -> String {
    let doc = build_doc(state, params);
    let per_state = PromptStyle {
        noise_seed: style
            .noise_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(state.task.id as u64),
        ..*style
    };
    perturb(&doc, &per_state)
}

/// Values recovered from a prompt, in SI units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPrompt {
    pub task: BTreeMap<String, f64>,
    pub servers: Vec<ParsedServer>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedServer {
    pub id: usize,
    pub fields: BTreeMap<String, f64>,
    pub history: Vec<f64>,
}

fn parse_quantity(text: &str) -> Result<f64> {
    let text = text.trim();
    let (num, unit) = text
        .split_once(' ')
        .ok_or_else(|| Error::Dataset(format!("value without unit: `{text}`")))?;
    let v: f64 = num
        .parse()
        .map_err(|_| Error::Dataset(format!("bad number `{num}`")))?;
    let f = Quantity::si_factor(unit.trim())
        .ok_or_else(|| Error::Dataset(format!("unknown unit `{unit}`")))?;
    Ok(v * f)
}

/// Inverts [`perturb`] for every style: filler lines are skipped, keys may
/// come in any order and units are converted back to SI.
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt> {
    let mut parsed = ParsedPrompt::default();
    #[derive(PartialEq)]
    enum Section {
        None,
        Task,
        Server,
        Instruction,
    }
    let mut section = Section::None;
    for line in text.lines() {
        if line.starts_with(FILLER_MARKER) || line.trim().is_empty() {
            continue;
        }
        if line == "[Task]" {
            section = Section::Task;
            continue;
        }
        if line == "[Instruction]" {
            section = Section::Instruction;
            continue;
        }
        if let Some(rest) = line.strip_prefix("[Server ").and_then(|r| r.strip_suffix(']')) {
            let id = rest
                .parse()
                .map_err(|_| Error::Dataset(format!("bad server header `{line}`")))?;
            parsed.servers.push(ParsedServer {
                id,
                ..Default::default()
            });
            section = Section::Server;
            continue;
        }
        if section == Section::Instruction || section == Section::None {
            continue;
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| Error::Dataset(format!("malformed line `{line}`")))?;
        match section {
            Section::Task => {
                parsed.task.insert(key.to_string(), parse_quantity(value)?);
            }
            Section::Server => {
                let server = parsed.servers.last_mut().expect("inside a server block");
                if key == "history" {
                    let inner = value
                        .trim()
                        .strip_prefix('[')
                        .and_then(|v| v.strip_suffix(']'))
                        .ok_or_else(|| Error::Dataset(format!("bad history `{value}`")))?;
                    server.history = inner
                        .split(", ")
                        .filter(|s| !s.is_empty())
                        .map(parse_quantity)
                        .collect::<Result<_>>()?;
                } else {
                    server.fields.insert(key.to_string(), parse_quantity(value)?);
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(parsed)
}

impl ParsedPrompt {
    fn get(map: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
        map.get(key)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("missing field `{key}`")))
    }

    /// Rebuilds a decision state from the parsed values.
    pub fn to_state<T: Scalar>(&self, params: &CostParams<T>) -> Result<SystemState<T>> {
        let deadline_s = Self::get(&self.task, "deadline")?;
        let task = Task::new(
            0,
            0,
            lit(Self::get(&self.task, "size")?),
            lit(Self::get(&self.task, "density")?),
            lit::<T>(deadline_s) / params.slot_seconds,
        )?;
        let mut servers = Vec::with_capacity(self.servers.len());
        let mut rates = Vec::with_capacity(self.servers.len());
        for s in &self.servers {
            servers.push(ServerState {
                id: s.id,
                capacity_hz: lit(Self::get(&s.fields, "capacity")?),
                active_tasks: Self::get(&s.fields, "active_tasks")?.round() as usize,
                backlog_bits: lit(Self::get(&s.fields, "backlog")?),
                history: s.history.iter().map(|h| lit(*h)).collect(),
            });
            rates.push(lit(Self::get(&s.fields, "uplink")?));
        }
        let state = SystemState {
            task,
            uplink_rates_bps: rates,
            device: DeviceState {
                local_freq_hz: lit(Self::get(&self.task, "local_cpu")?),
                local_backlog_bits: vec![lit(Self::get(&self.task, "local_backlog")?)],
            },
            servers,
            slot: 0,
        };
        state.validate()?;
        Ok(state)
    }
}

/// Natural-language form of an action.
pub fn label_text(action: usize) -> String {
    if action == 0 {
        "Execute Locally".to_string()
    } else {
        format!("Offload to Server {action}")
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub prompt: String,
    pub label_action: usize,
    pub label_text: String,
    pub state_digest: SystemState<f64>,
}

/// Collects `count` decision states from seeded episodes driven by a random
/// behavior policy (which spreads load and visits congested states) and
/// labels each with the oracle action.
pub fn generate_records<T: Scalar>(
    config: &SimConfig<T>,
    count: usize,
    style: &PromptStyle,
) -> Result<Vec<DatasetRecord>> {
    if count == 0 {
        return Err(Error::config("count", "must be >= 1"));
    }
    config.validate()?;
    let params = config.cost_params();
    let mut records = Vec::with_capacity(count);
    let mut episode = 0u64;
    while records.len() < count {
        let mut env = seeded_environment(config, config.seed.wrapping_add(episode))?;
        let mut behavior = baseline_policy(BaselineKind::Random, params, config.seed ^ episode);
        'slots: for _ in 0..config.episode_slots {
            let tasks = env.sample_arrivals();
            if tasks.is_empty() {
                env.advance_idle();
            }
            for task in tasks {
                let state = env.observe(&task);
                let (label, _) = oracle_action(&state, &params);
                records.push(DatasetRecord {
                    prompt: serialize(&state, style, &params),
                    label_action: label,
                    label_text: label_text(label),
                    state_digest: to_f64_state(&state),
                });
                if records.len() == count {
                    break 'slots;
                }
                let action = behavior.decide(&state)?;
                env.step(&state, action)?;
            }
            env.advance_slot();
        }
        episode += 1;
    }
    Ok(records)
}

/// Writes `count` labeled records as JSON lines. The file is assembled next
/// to `out` and renamed into place, so a failure leaves no partial file.
pub fn export_dataset<T: Scalar>(
    config: &SimConfig<T>,
    count: usize,
    style: &PromptStyle,
    out: &Path,
) -> Result<usize> {
    let records = generate_records(config, count, style)?;
    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let tmp = out.with_extension("partial");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        fs::rename(&tmp, out)
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(records.len())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub(crate) fn to_f64_state<T: Scalar>(s: &SystemState<T>) -> SystemState<f64> {
    let v = |x: &T| to_f64(*x);
    SystemState {
        task: Task {
            id: s.task.id,
            user: s.task.user,
            size_bits: v(&s.task.size_bits),
            density_cycles_per_bit: v(&s.task.density_cycles_per_bit),
            deadline_slots: v(&s.task.deadline_slots),
        },
        uplink_rates_bps: s.uplink_rates_bps.iter().map(v).collect(),
        device: DeviceState {
            local_freq_hz: v(&s.device.local_freq_hz),
            local_backlog_bits: s.device.local_backlog_bits.iter().map(v).collect(),
        },
        servers: s
            .servers
            .iter()
            .map(|sv| ServerState {
                id: sv.id,
                capacity_hz: v(&sv.capacity_hz),
                active_tasks: sv.active_tasks,
                backlog_bits: v(&sv.backlog_bits),
                history: sv.history.iter().map(v).collect(),
            })
            .collect(),
        slot: s.slot,
    }
}

pub(crate) fn from_f64_state<T: Scalar>(s: &SystemState<f64>) -> SystemState<T> {
    let v = |x: &f64| lit::<T>(*x);
    SystemState {
        task: Task {
            id: s.task.id,
            user: s.task.user,
            size_bits: v(&s.task.size_bits),
            density_cycles_per_bit: v(&s.task.density_cycles_per_bit),
            deadline_slots: v(&s.task.deadline_slots),
        },
        uplink_rates_bps: s.uplink_rates_bps.iter().map(v).collect(),
        device: DeviceState {
            local_freq_hz: v(&s.device.local_freq_hz),
            local_backlog_bits: s.device.local_backlog_bits.iter().map(v).collect(),
        },
        servers: s
            .servers
            .iter()
            .map(|sv| ServerState {
                id: sv.id,
                capacity_hz: v(&sv.capacity_hz),
                active_tasks: sv.active_tasks,
                backlog_bits: v(&sv.backlog_bits),
                history: sv.history.iter().map(v).collect(),
            })
            .collect(),
        slot: s.slot,
    }
}

impl DatasetRecord {
    pub fn state<T: Scalar>(&self) -> SystemState<T> {
        from_f64_state(&self.state_digest)
    }
}

/// Policy wrapper that only sees what survives the prompt: the state is
/// rendered in `style`, parsed back, and handed to `inner`.
pub struct PromptView<P> {
    pub inner: P,
    pub style: PromptStyle,
}

impl<T: Scalar, P: Policy<T>> Policy<T> for PromptView<P> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn decide(&mut self, state: &SystemState<T>) -> std::result::Result<usize, crate::policy::PolicyError> {
        // Δt only scales the deadline field and cancels on the round trip.
        let params = CostParams {
            deadline_penalty: T::zero(),
            slot_seconds: T::one(),
        };
        let text = serialize(state, &self.style, &params);
        let seen = parse_prompt(&text)
            .and_then(|p| p.to_state::<T>(&params))
            .map_err(|e| crate::policy::PolicyError::Failed(e.to_string()))?;
        self.inner.decide(&seen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Environment;

    fn sample_states(n: usize, e: usize, seed: u64) -> Vec<SystemState<f64>> {
        let mut env = Environment::new(SimConfig::<f64> {
            num_servers: e,
            arrival_prob: 1.0,
            seed,
            ..Default::default()
        })
        .unwrap();
        (0..n)
            .map(|i| {
                let task = env.sample_arrivals().remove(0);
                let s = env.observe(&task);
                env.step(&s, (i * 3) % s.num_actions()).unwrap();
                s
            })
            .collect()
    }

    fn blocks_of(prompt: &str) -> usize {
        prompt.lines().filter(|l| l.starts_with("[Server ")).count()
    }

    #[test]
    fn one_block_per_server() {
        let p = CostParams::default();
        let small = serialize(&sample_states(1, 3, 1)[0], &PromptStyle::standard(), &p);
        let large = serialize(&sample_states(1, 11, 1)[0], &PromptStyle::standard(), &p);
        assert_eq!(blocks_of(&small), 3);
        assert_eq!(blocks_of(&large), 11);
        assert!(large.len() > small.len());
        let template = |s: &str| -> Vec<String> {
            s.lines()
                .filter(|l| !l.starts_with('['))
                .map(|l| l.split(':').next().unwrap().to_string())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        assert_eq!(template(&small), template(&large));
    }

    #[test]
    fn standard_is_deterministic_and_unit_tagged() {
        let s = &sample_states(5, 6, 2)[4];
        let p = CostParams::default();
        let a = serialize(s, &PromptStyle::standard(), &p);
        assert_eq!(a, serialize(s, &PromptStyle::standard(), &p));
        for line in a.lines().filter(|l| l.contains(": ")) {
            let (_, value) = line.split_once(": ").unwrap();
            let value = value.trim_start_matches('[').trim_end_matches(']');
            for item in value.split(", ").filter(|v| !v.is_empty()) {
                let unit = item.split(' ').nth(1).expect("unit token present");
                assert!(
                    ["GHz", "Mbits", "Mbps", "s", "cycles/bit", "tasks"].contains(&unit),
                    "unexpected unit in `{line}`"
                );
            }
        }
    }

    #[test]
    fn unit_variation_rescales() {
        let field = scalar("capacity", Quantity::Frequency, 24e9);
        assert_eq!(render_value(&field, false), "24.0000 GHz");
        assert_eq!(render_value(&field, true), "24000.0 MHz");
        assert_eq!(format_sig(24.0, 4), "24.00");
        assert_eq!(format_sig(24000.0, 4), "24000.0");
    }

    #[test]
    fn shuffled_keys_keep_their_values() {
        let s = &sample_states(6, 6, 3)[5];
        let p = CostParams::default();
        let standard = parse_prompt(&serialize(s, &PromptStyle::standard(), &p)).unwrap();
        let shuffled_text = serialize(s, &PromptStyle::new(PromptMode::ShuffledParams, 9), &p);
        assert_ne!(shuffled_text, serialize(s, &PromptStyle::standard(), &p));
        assert_eq!(parse_prompt(&shuffled_text).unwrap(), standard);
    }

    #[test]
    fn stripping_filler_recovers_standard_prompt() {
        let p = CostParams::default();
        let mut saw_filler = false;
        for s in sample_states(20, 6, 4) {
            let noisy = serialize(&s, &PromptStyle::new(PromptMode::NoisyText, 5), &p);
            saw_filler |= noisy.contains(FILLER_MARKER);
            let stripped: String = noisy
                .lines()
                .filter(|l| !l.starts_with(FILLER_MARKER))
                .map(|l| format!("{l}\n"))
                .collect();
            assert_eq!(stripped, serialize(&s, &PromptStyle::standard(), &p));
        }
        assert!(saw_filler);
    }

    #[test]
    fn parsed_prompt_reproduces_printed_values() {
        let p = CostParams::default();
        for s in sample_states(30, 5, 6) {
            let back: SystemState<f64> = parse_prompt(&serialize(&s, &PromptStyle::standard(), &p))
                .unwrap()
                .to_state(&p)
                .unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 5e-6 * b.abs().max(1e-9) + 1e-9;
            assert!(close(back.task.size_bits, s.task.size_bits));
            for (x, y) in back.servers.iter().zip(&s.servers) {
                assert!(close(x.capacity_hz, y.capacity_hz));
                assert!(close(x.backlog_bits, y.backlog_bits));
                assert_eq!(x.active_tasks, y.active_tasks);
                assert_eq!(x.history.len(), y.history.len());
            }
        }
    }

    #[test]
    fn export_count_one_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig::<f64>::default();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        assert_eq!(export_dataset(&cfg, 1, &PromptStyle::standard(), &a).unwrap(), 1);
        assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 1);
        export_dataset(&cfg, 40, &PromptStyle::standard(), &a).unwrap();
        export_dataset(&cfg, 40, &PromptStyle::standard(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let recs = load_dataset(&a).unwrap();
        assert_eq!(recs.len(), 40);
        let line: serde_json::Value =
            serde_json::from_str(fs::read_to_string(&a).unwrap().lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = line.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["prompt", "label_action", "label_text", "state_digest"] {
            assert!(keys.contains(&k));
        }
    }

    #[test]
    fn export_to_unwritable_path_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("missing").join("data.jsonl");
        let err = export_dataset(&SimConfig::<f64>::default(), 3, &PromptStyle::standard(), &out);
        assert!(matches!(err, Err(Error::Io(_))));
        assert!(!out.exists());
        assert!(generate_records(&SimConfig::<f64>::default(), 0, &PromptStyle::standard()).is_err());
    }

    #[test]
    fn label_text_forms() {
        assert_eq!(label_text(0), "Execute Locally");
        assert_eq!(label_text(3), "Offload to Server 3");
    }
}
