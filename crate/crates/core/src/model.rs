//! Domain types and closed-form delay/cost equations of the offloading system.
//!
//! Physics is carried in SI units (bits, cycles/s, seconds). Costs are
//! reported in time-slot units: a latency of `x` seconds costs `x / Δt`
//! slots, plus a fixed penalty when the task deadline is exceeded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{count, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid action {action}: valid actions are 0..={max}")]
    InvalidAction { action: usize, max: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// One offloadable job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task<T> {
    pub id: usize,
    pub user: usize,
    pub size_bits: T,
    pub density_cycles_per_bit: T,
    pub deadline_slots: T,
}

impl<T: Scalar> Task<T> {
    pub fn new(
        id: usize,
        user: usize,
        size_bits: T,
        density_cycles_per_bit: T,
        deadline_slots: T,
    ) -> Result<Self, ModelError> {
        let task = Self {
            id,
            user,
            size_bits,
            density_cycles_per_bit,
            deadline_slots,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |x: T| x.is_finite() && x > T::zero();
        if !positive(self.size_bits) {
            return Err(ModelError::InvalidTask("size_bits must be > 0".into()));
        }
        if !positive(self.density_cycles_per_bit) {
            return Err(ModelError::InvalidTask(
                "density_cycles_per_bit must be > 0".into(),
            ));
        }
        if !positive(self.deadline_slots) {
            return Err(ModelError::InvalidTask("deadline_slots must be > 0".into()));
        }
        Ok(())
    }

    /// Total CPU cycles the task requires.
    pub fn workload_cycles(&self) -> T {
        self.size_bits * self.density_cycles_per_bit
    }
}

/// Physical uplink parameters: `R = B log2(1 + P |h|² / σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel<T> {
    pub bandwidth_hz: T,
    pub tx_power_w: T,
    pub noise_power_w: T,
    /// Mean of the exponential channel power gain `|h|²`.
    pub gain_scale: T,
}

impl<T: Scalar> ChannelModel<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_w", self.tx_power_w),
            ("noise_power_w", self.noise_power_w),
            ("gain_scale", self.gain_scale),
        ] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(ModelError::InvalidState(format!("channel {name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn snr_per_unit_gain(&self) -> T {
        self.tx_power_w / self.noise_power_w
    }
}

/// Uplink rate in bits/s for a given channel power gain.
pub fn uplink_rate<T: Scalar>(channel: &ChannelModel<T>, gain: T) -> T {
    let gain = gain.max(T::zero());
    channel.bandwidth_hz * (T::one() + channel.snr_per_unit_gain() * gain).log2()
}

/// Per-edge-server observable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState<T> {
    pub id: usize,
    pub capacity_hz: T,
    pub active_tasks: usize,
    pub backlog_bits: T,
    /// Recent backlog samples in bits, oldest first.
    pub history: Vec<T>,
}

impl<T: Scalar> ServerState<T> {
    pub fn idle(id: usize, capacity_hz: T) -> Self {
        Self {
            id,
            capacity_hz,
            active_tasks: 0,
            backlog_bits: T::zero(),
            history: Vec::new(),
        }
    }
}

/// Mobile-device side of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState<T> {
    pub local_freq_hz: T,
    /// Residual local workload, one entry per user.
    pub local_backlog_bits: Vec<T>,
}

impl<T: Scalar> DeviceState<T> {
    pub fn backlog_of(&self, user: usize) -> T {
        self.local_backlog_bits
            .get(user)
            .copied()
            .unwrap_or_else(T::zero)
    }
}

/// Everything a policy observes when deciding where a task runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState<T> {
    pub task: Task<T>,
    pub uplink_rates_bps: Vec<T>,
    pub device: DeviceState<T>,
    pub servers: Vec<ServerState<T>>,
    pub slot: u64,
}

impl<T: Scalar> SystemState<T> {
    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_actions(&self) -> usize {
        self.servers.len() + 1
    }

    pub fn check_action(&self, action: usize) -> Result<(), ModelError> {
        if action > self.servers.len() {
            Err(ModelError::InvalidAction {
                action,
                max: self.servers.len(),
            })
        } else {
            Ok(())
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.task.validate()?;
        if self.uplink_rates_bps.len() != self.servers.len() {
            return Err(ModelError::InvalidState(format!(
                "{} uplink rates for {} servers",
                self.uplink_rates_bps.len(),
                self.servers.len()
            )));
        }
        if self
            .uplink_rates_bps
            .iter()
            .any(|r| !(r.is_finite() && *r > T::zero()))
        {
            return Err(ModelError::InvalidState("uplink rates must be > 0".into()));
        }
        if !(self.device.local_freq_hz > T::zero()) {
            return Err(ModelError::InvalidState("local_freq_hz must be > 0".into()));
        }
        if self.device.local_backlog_bits.iter().any(|b| *b < T::zero()) {
            return Err(ModelError::InvalidState("negative local backlog".into()));
        }
        for s in &self.servers {
            if !(s.capacity_hz.is_finite() && s.capacity_hz > T::zero()) {
                return Err(ModelError::InvalidState(format!(
                    "server {} capacity must be > 0",
                    s.id
                )));
            }
            if !(s.backlog_bits >= T::zero()) {
                return Err(ModelError::InvalidState(format!(
                    "server {} backlog must be >= 0",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of the generalized cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams<T> {
    /// Penalty added when the latency exceeds the deadline, in slots.
    pub deadline_penalty: T,
    pub slot_seconds: T,
}

impl<T: Scalar> CostParams<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.deadline_penalty >= T::zero()) {
            return Err(ModelError::InvalidState("deadline_penalty must be >= 0".into()));
        }
        if !(self.slot_seconds > T::zero()) {
            return Err(ModelError::InvalidState("slot_seconds must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for CostParams<f64> {
    fn default() -> Self {
        Self {
            deadline_penalty: 10.0,
            slot_seconds: 0.1,
        }
    }
}

impl Default for CostParams<f32> {
    fn default() -> Self {
        Self {
            deadline_penalty: 10.0,
            slot_seconds: 0.1,
        }
    }
}

/// Local execution latency in seconds: buffered work plus the task itself.
pub fn local_latency<T: Scalar>(task: &Task<T>, device: &DeviceState<T>) -> T {
    let wait = device.backlog_of(task.user) * task.density_cycles_per_bit / device.local_freq_hz;
    wait + task.workload_cycles() / device.local_freq_hz
}

/// Processor-sharing rate seen by a newly admitted task.
pub fn effective_rate<T: Scalar>(server: &ServerState<T>) -> T {
    server.capacity_hz / count::<T>(server.active_tasks + 1)
}

/// The three components of an edge latency, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLatency<T> {
    pub upload: T,
    pub wait: T,
    pub exec: T,
}

impl<T: Scalar> EdgeLatency<T> {
    pub fn total(&self) -> T {
        self.upload + self.wait + self.exec
    }
}

pub fn edge_latency_parts<T: Scalar>(
    task: &Task<T>,
    server: &ServerState<T>,
    uplink_bps: T,
) -> EdgeLatency<T> {
    let f_eff = effective_rate(server);
    EdgeLatency {
        upload: task.size_bits / uplink_bps,
        wait: server.backlog_bits * task.density_cycles_per_bit / f_eff,
        exec: task.workload_cycles() * count::<T>(server.active_tasks + 1) / server.capacity_hz,
    }
}

/// Upload, queueing and execution delay of offloading `task` to `server`.
pub fn edge_latency<T: Scalar>(task: &Task<T>, server: &ServerState<T>, uplink_bps: T) -> T {
    edge_latency_parts(task, server, uplink_bps).total()
}

/// Latency in seconds of executing the pending task at `action` (0 = local).
pub fn candidate_latency<T: Scalar>(state: &SystemState<T>, action: usize) -> Result<T, ModelError> {
    state.check_action(action)?;
    Ok(if action == 0 {
        local_latency(&state.task, &state.device)
    } else {
        edge_latency(
            &state.task,
            &state.servers[action - 1],
            state.uplink_rates_bps[action - 1],
        )
    })
}

/// Latency in slots plus the deadline penalty when the latency strictly
/// exceeds the deadline.
pub fn generalized_cost<T: Scalar>(latency_s: T, task: &Task<T>, params: &CostParams<T>) -> T {
    let slots = latency_s / params.slot_seconds;
    if slots > task.deadline_slots {
        slots + params.deadline_penalty
    } else {
        slots
    }
}

/// Bits a server can clear during one slot at its current sharing rate.
pub fn service_drain_bits<T: Scalar>(server: &ServerState<T>, slot_seconds: T, density: T) -> T {
    effective_rate(server) * slot_seconds / density
}

/// Bits the device clears during one slot.
pub fn local_drain_bits<T: Scalar>(local_freq_hz: T, slot_seconds: T, density: T) -> T {
    local_freq_hz * slot_seconds / density
}

#[cfg(test)]
pub(crate) fn mbits<T: Scalar>(x: f64) -> T {
    crate::scalar::lit(x * 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task(size_mbits: f64) -> Task<f64> {
        Task::new(0, 0, size_mbits * 1e6, 297.0, 10.0).unwrap()
    }

    fn device(backlog_mbits: f64) -> DeviceState<f64> {
        DeviceState {
            local_freq_hz: 2e9,
            local_backlog_bits: vec![backlog_mbits * 1e6],
        }
    }

    fn server(capacity_ghz: f64, n: usize, backlog_mbits: f64) -> ServerState<f64> {
        ServerState {
            id: 1,
            capacity_hz: capacity_ghz * 1e9,
            active_tasks: n,
            backlog_bits: backlog_mbits * 1e6,
            history: vec![],
        }
    }

    #[test]
    fn uplink_rate_examples() {
        let ch = ChannelModel {
            bandwidth_hz: 1e7,
            tx_power_w: 1.6390,
            noise_power_w: 1.0,
            gain_scale: 1.0,
        };
        // log2(2.6390) * 1e7 = 13.9999... Mbps
        assert!((uplink_rate(&ch, 1.0_f64) - 14.0e6).abs() < 0.01e6);
        assert_eq!(uplink_rate(&ch, 0.0), 0.0);

        let unit = ChannelModel {
            tx_power_w: 1.0,
            ..ch.clone()
        };
        let ratio = uplink_rate(&unit, 2.0) / uplink_rate(&unit, 1.0);
        assert_relative_eq!(ratio, 3f64.log2(), epsilon = 1e-12);
        assert!((ratio - 1.585).abs() < 1e-3);
    }

    #[test]
    fn local_latency_examples() {
        assert_relative_eq!(local_latency(&task(2.0), &device(0.0)), 0.297, epsilon = 1e-12);
        assert_relative_eq!(local_latency(&task(2.0), &device(2.0)), 0.594, epsilon = 1e-12);
        let tiny = Task::new(0, 0, 1e-9, 297.0, 10.0).unwrap();
        assert!(local_latency(&tiny, &device(0.0)) < 1e-15);
    }

    #[test]
    fn effective_rate_examples() {
        assert_eq!(effective_rate(&server(24.0, 0, 0.0)), 24e9);
        assert_relative_eq!(effective_rate(&server(24.0, 2, 0.0)), 8e9);
        assert_relative_eq!(effective_rate(&server(20.0, 1, 0.0)), 10e9);
    }

    #[test]
    fn edge_latency_examples() {
        let s = server(20.0, 1, 5.0);
        let parts = edge_latency_parts(&task(4.0), &s, 14e6);
        assert_relative_eq!(parts.upload, 4.0 / 14.0, epsilon = 1e-12);
        assert_relative_eq!(parts.wait, 0.1485, epsilon = 1e-12);
        assert_relative_eq!(parts.exec, 0.1188, epsilon = 1e-12);
        assert!((edge_latency(&task(4.0), &s, 14e6) - 0.5530).abs() < 1e-4);

        let empty = server(20.0, 0, 0.0);
        let t = task(4.0);
        assert_relative_eq!(
            edge_latency(&t, &empty, 14e6),
            t.size_bits / 14e6 + t.workload_cycles() / 20e9
        );

        let doubled = edge_latency_parts(&task(8.0), &s, 14e6);
        assert_relative_eq!(doubled.upload, 2.0 * parts.upload);
        assert_relative_eq!(doubled.exec, 2.0 * parts.exec);
        assert_eq!(doubled.wait, parts.wait);
    }

    #[test]
    fn candidate_latency_dispatches_and_bounds_checks() {
        let state = SystemState {
            task: task(2.0),
            uplink_rates_bps: vec![14e6],
            device: device(0.0),
            servers: vec![server(20.0, 1, 5.0)],
            slot: 0,
        };
        assert_relative_eq!(candidate_latency(&state, 0).unwrap(), 0.297, epsilon = 1e-12);
        let mut edge_state = state.clone();
        edge_state.task = task(4.0);
        assert!((candidate_latency(&edge_state, 1).unwrap() - 0.5530).abs() < 1e-4);
        assert_eq!(
            candidate_latency(&state, 2),
            Err(ModelError::InvalidAction { action: 2, max: 1 })
        );
    }

    #[test]
    fn generalized_cost_examples() {
        let p = CostParams {
            deadline_penalty: 10.0,
            slot_seconds: 0.1,
        };
        let t = task(4.0);
        assert_relative_eq!(generalized_cost(0.553, &t, &p), 5.53, epsilon = 1e-12);
        assert_relative_eq!(generalized_cost(1.2, &t, &p), 22.0, epsilon = 1e-12);
        // 1.0 / 0.1 is exactly 10.0 in binary floating point
        assert_eq!(generalized_cost(1.0, &t, &p), 10.0);
    }

    #[test]
    fn task_invariants_rejected() {
        assert!(Task::new(0, 0, 0.0, 297.0, 10.0).is_err());
        assert!(Task::new(0, 0, 1.0, -1.0, 10.0).is_err());
        assert!(Task::new(0, 0, 1.0, 297.0, 0.0).is_err());
        assert!(Task::<f32>::new(0, 0, 1.0, 297.0, 10.0).is_ok());
    }
}
