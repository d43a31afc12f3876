//! Exhaustive one-step evaluator.
//!
//! The oracle sees only the observable state and returns the action with the
//! smallest generalized cost. Ties go to the lowest action index, so local
//! execution wins a tie.

use crate::model::{candidate_latency, generalized_cost, CostParams, SystemState};
use crate::scalar::Scalar;

/// Generalized cost of every action `0..=E`, in action order.
pub fn evaluate_all<T: Scalar>(state: &SystemState<T>, params: &CostParams<T>) -> Vec<(usize, T)> {
    (0..state.num_actions())
        .map(|a| {
            let latency = candidate_latency(state, a).expect("action enumerated in range");
            (a, generalized_cost(latency, &state.task, params))
        })
        .collect()
}

/// One-step optimal action and its cost.
pub fn oracle_action<T: Scalar>(state: &SystemState<T>, params: &CostParams<T>) -> (usize, T) {
    argmin(&evaluate_all(state, params))
}

/// First minimum of `(action, cost)` pairs.
pub(crate) fn argmin<T: Scalar>(costs: &[(usize, T)]) -> (usize, T) {
    let mut best = costs[0];
    for &(a, c) in &costs[1..] {
        if c < best.1 {
            best = (a, c);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceState, ServerState, Task};
    use crate::policy::FnPolicy;
    use crate::sim::{run_episode, Environment, SimConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Local 2.97 slots, server 1 5.53 slots, server 2 7.10 slots.
    fn two_server_state() -> SystemState<f64> {
        // server 2: 4 Mbits over 7 Mbps = 0.5714 s, plus execution on an
        // idle 20 GHz server (0.0594 s) and a 0.0792 s queue.
        SystemState {
            task: Task::new(0, 0, 4e6, 297.0, 10.0).unwrap(),
            uplink_rates_bps: vec![14e6, 7e6],
            device: DeviceState {
                local_freq_hz: 4e9,
                local_backlog_bits: vec![0.0],
            },
            servers: vec![
                ServerState {
                    id: 1,
                    capacity_hz: 20e9,
                    active_tasks: 1,
                    backlog_bits: 5e6,
                    history: vec![],
                },
                ServerState {
                    id: 2,
                    capacity_hz: 20e9,
                    active_tasks: 0,
                    backlog_bits: (0.0792 * 20e9) / 297.0,
                    history: vec![],
                },
            ],
            slot: 0,
        }
    }

    fn params() -> CostParams<f64> {
        CostParams {
            deadline_penalty: 10.0,
            slot_seconds: 0.1,
        }
    }

    #[test]
    fn evaluate_all_composes_the_cost_model() {
        let costs = evaluate_all(&two_server_state(), &params());
        assert_eq!(costs.len(), 3);
        let expected = [2.97, 5.53, 7.10];
        for ((a, c), (i, e)) in costs.iter().zip(expected.iter().enumerate()) {
            assert_eq!(*a, i);
            assert!((c - e).abs() < 0.005, "action {a}: {c} vs {e}");
        }
        let (a, c) = oracle_action(&two_server_state(), &params());
        assert_eq!(a, 0);
        assert_relative_eq!(c, 2.97, epsilon = 1e-9);
    }

    #[test]
    fn no_servers_means_local_only() {
        let mut s = two_server_state();
        s.servers.clear();
        s.uplink_rates_bps.clear();
        assert_eq!(evaluate_all(&s, &params()).len(), 1);
        assert_eq!(oracle_action(&s, &params()).0, 0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut s = two_server_state();
        s.servers[1] = s.servers[0].clone();
        s.uplink_rates_bps[1] = s.uplink_rates_bps[0];
        s.device.local_freq_hz = 1e6;
        assert_eq!(oracle_action(&s, &params()).0, 1);
    }

    #[test]
    fn fuzzed_states_have_finite_nonnegative_costs_and_true_minimum() {
        let cfg = SimConfig::<f64> {
            arrival_prob: 1.0,
            ..Default::default()
        };
        let mut env = Environment::new(cfg).unwrap();
        let mut rng_action = 0usize;
        for _ in 0..1000 {
            let task = env.sample_arrivals().remove(0);
            let s = env.observe(&task);
            let costs = evaluate_all(&s, &params());
            assert!(costs.iter().all(|(_, c)| c.is_finite() && *c >= 0.0));
            let (_, best) = oracle_action(&s, &params());
            assert!(costs.iter().all(|(_, c)| best <= *c));
            rng_action = (rng_action + 5) % s.num_actions();
            env.step(&s, rng_action).unwrap();
        }
    }

    #[test]
    fn greedy_episode_matches_oracle_costs() {
        let mut env = Environment::new(SimConfig::<f64>::default()).unwrap();
        let mut p = FnPolicy::new("oracle", |s: &SystemState<f64>| Ok(oracle_action(s, &params()).0));
        let trace = run_episode(&mut env, &mut p).unwrap();
        assert!(trace.records.iter().all(|r| r.cost == r.oracle_cost));
    }

    proptest! {
        #[test]
        fn time_rescaling_preserves_argmin_without_penalty(
            factor in 0.25f64..4.0,
            backlog in 0.0f64..2e7,
            rate in 5e6f64..3e7,
            cap in 1e10f64..5e10,
        ) {
            let mut s = two_server_state();
            s.servers[0].backlog_bits = backlog;
            s.uplink_rates_bps[1] = rate;
            s.servers[1].capacity_hz = cap;
            let p = CostParams { deadline_penalty: 0.0, slot_seconds: 0.1 };
            let base = oracle_action(&s, &p);
            let mut scaled = s.clone();
            scaled.device.local_freq_hz *= factor;
            for r in &mut scaled.uplink_rates_bps { *r *= factor; }
            for sv in &mut scaled.servers { sv.capacity_hz *= factor; }
            let after = oracle_action(&scaled, &p);
            prop_assert_eq!(base.0, after.0);
            prop_assert!((after.1 * factor - base.1).abs() <= 1e-9 * base.1.max(1.0));
        }
    }
}
