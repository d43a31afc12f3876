use offload_core::eval::{eval_seeds, evaluate_policy};
use offload_core::lacs::LacsConfig;
use offload_core::policy::{baseline_policy, BaselineKind, Checkpoint, Decode, ScorerPolicy};
use offload_core::serializer::{export_dataset, load_dataset, PromptMode, PromptStyle};
use offload_core::sim::{run_episode, seeded_environment, SimConfig};
use offload_core::train::{train, TrainConfig};

#[test]
fn dataset_to_checkpoint_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig::<f64> {
        episode_slots: 80,
        ..SimConfig::default()
    };
    let data_path = dir.path().join("data.jsonl");
    assert_eq!(
        export_dataset(&sim, 300, &PromptStyle::new(PromptMode::ShuffledParams, 1), &data_path).unwrap(),
        300
    );
    let records = load_dataset(&data_path).unwrap();
    assert_eq!(records.len(), 300);

    let config = TrainConfig {
        iterations: 40,
        eval_interval: 20,
        eval_episodes: 2,
        ..TrainConfig::default()
    };
    let outcome = train(&sim, &config, &LacsConfig::default(), Some(&records)).unwrap();
    assert_eq!(outcome.log.len(), 40);
    assert_eq!(outcome.log.iter().filter(|e| e.eval.is_some()).count(), 2);
    assert!(outcome.sft.as_ref().unwrap().accuracy > 0.8);

    let ckpt_path = dir.path().join("policy.json");
    Checkpoint::from_params(&outcome.params).save(&ckpt_path).unwrap();
    let params = Checkpoint::load(&ckpt_path).unwrap().params::<f64>().unwrap();
    assert_eq!(params, outcome.params);

    let seeds = eval_seeds(300, 4);
    let mut learned = ScorerPolicy::new(params, sim.cost_params(), Decode::Greedy, 0);
    let mut random = baseline_policy(BaselineKind::Random, sim.cost_params(), 0);
    let l = evaluate_policy(&mut learned, &sim, &seeds).unwrap();
    let r = evaluate_policy(&mut random, &sim, &seeds).unwrap();
    assert_eq!(l.n_samples, r.n_samples);
    assert!(l.avg_latency_slots < r.avg_latency_slots);
    assert!(l.perf_ratio > r.perf_ratio);
}

#[test]
fn single_precision_pipeline_runs() {
    let sim = SimConfig::<f32> {
        episode_slots: 50,
        ..SimConfig::default()
    };
    let config = TrainConfig::<f32> {
        iterations: 20,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let outcome = train(&sim, &config, &LacsConfig::default(), None).unwrap();
    assert!(outcome.params.is_finite());

    let ckpt = Checkpoint::from_params(&outcome.params);
    let widened = ckpt.params::<f64>().unwrap();
    assert_eq!(widened.dim(), outcome.params.dim());

    let mut env = seeded_environment(&sim, 3).unwrap();
    let mut policy = ScorerPolicy::new(outcome.params, sim.cost_params(), Decode::Sample, 1);
    let trace = run_episode(&mut env, &mut policy).unwrap();
    assert!(trace.records.iter().all(|r| r.cost.is_finite() && r.cost > 0.0));
}

#[test]
fn paired_seeds_give_every_policy_the_same_tasks() {
    let sim = SimConfig::<f64> {
        episode_slots: 60,
        ..SimConfig::default()
    };
    let mut sizes = Vec::new();
    for kind in [BaselineKind::Random, BaselineKind::LeastLoaded, BaselineKind::LocalOnly] {
        let mut env = seeded_environment(&sim, 11).unwrap();
        let mut policy = baseline_policy(kind, sim.cost_params(), 4);
        let trace = run_episode(&mut env, &mut policy).unwrap();
        sizes.push(
            trace
                .records
                .iter()
                .map(|r| r.size_bits)
                .collect::<Vec<_>>(),
        );
    }
    assert!(!sizes[0].is_empty());
    assert!(sizes.windows(2).all(|w| w[0] == w[1]));
}
