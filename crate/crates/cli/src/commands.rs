use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use offload_core::eval::{eval_seeds, evaluate_policy, sweep as run_sweep, SweepAxis, SweepEntry, SweepRow, CSV_HEADER};
use offload_core::policy::{baseline_policy, BaselineKind, Checkpoint, Decode, Policy, PolicyParams, ScorerPolicy};
use offload_core::serializer::{export_dataset, load_dataset, PromptMode, PromptStyle};
use offload_core::sim::SimConfig;
use offload_core::train::{train as run_train, TrainOutcome};
use offload_remote::{EndpointConfig, RemotePolicy};
use serde_json::json;

use crate::config::LabConfig;
use crate::failure::Failure;
use crate::{Common, PolicySource};

fn ensure_writable(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::usage(format!(
            "{} already exists; pass --force to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<LabConfig, Failure> {
    let cfg = LabConfig::load(common.config.as_deref())?.with_seed(common.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn seeds(cfg: &LabConfig, episodes: Option<usize>) -> Result<Vec<u64>, Failure> {
    let n = episodes.unwrap_or(cfg.eval.episodes);
    if n == 0 {
        return Err(Failure::usage("--episodes must be >= 1"));
    }
    Ok(eval_seeds(cfg.eval.seed_base, n))
}

fn load_checkpoint(path: &Path) -> Result<PolicyParams<f64>, Failure> {
    let ckpt = Checkpoint::load(path)
        .map_err(|e| Failure::config(format!("cannot load checkpoint {}: {e}", path.display())))?;
    Ok(ckpt.params()?)
}

fn scorer(params: PolicyParams<f64>, sim: &SimConfig<f64>) -> ScorerPolicy<f64> {
    ScorerPolicy::new(params, sim.cost_params(), Decode::Greedy, sim.seed).named("checkpoint")
}

fn print_rows(rows: &[SweepRow]) {
    println!("{CSV_HEADER}");
    for row in rows {
        println!("{}", row.csv());
    }
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<(), Failure> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv())?;
    }
    out.flush()?;
    Ok(())
}

pub fn gen_data(common: &Common, count: usize, out: &Path, mode: PromptMode) -> Result<(), Failure> {
    if count == 0 {
        return Err(Failure::usage("--count must be >= 1"));
    }
    let cfg = load_config(common)?;
    ensure_writable(out, common.force)?;
    let style = PromptStyle::new(mode, cfg.sim.seed);
    let n = export_dataset(&cfg.sim, count, &style, out)?;
    println!("wrote {n} records to {}", out.display());
    Ok(())
}

fn checkpoint_of(outcome: &TrainOutcome<f64>, cfg: &LabConfig, sft_records: usize) -> Checkpoint {
    let mut ckpt = Checkpoint::from_params(&outcome.params);
    ckpt.metadata.insert("seed".into(), json!(cfg.train.seed));
    ckpt.metadata.insert("num_servers".into(), json!(cfg.sim.num_servers));
    ckpt.metadata.insert("lambda_weight".into(), json!(cfg.lacs.lambda_weight));
    ckpt.metadata.insert("updates".into(), json!(outcome.log.len()));
    ckpt.metadata.insert("sft_records".into(), json!(sft_records));
    if let Some(sft) = &outcome.sft {
        ckpt.metadata.insert("sft_accuracy".into(), json!(sft.accuracy));
    }
    ckpt
}

fn save_training(outcome: &TrainOutcome<f64>, cfg: &LabConfig, sft_records: usize, out: &Path, log: &Path) -> Result<(), Failure> {
    checkpoint_of(outcome, cfg, sft_records).save(out)?;
    std::fs::write(log, outcome.log_jsonl()?)?;
    Ok(())
}

pub fn train(
    common: &Common,
    lacs_on: bool,
    sft_data: Option<&Path>,
    out: &Path,
    log: Option<PathBuf>,
    iterations: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if !lacs_on {
        cfg.lacs.lambda_weight = 0.0;
    }
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    let log = log.unwrap_or_else(|| out.with_extension("log.jsonl"));
    ensure_writable(out, common.force)?;
    ensure_writable(&log, common.force)?;
    let records = match sft_data {
        Some(path) => Some(
            load_dataset(path)
                .map_err(|e| Failure::config(format!("cannot load dataset {}: {e}", path.display())))?,
        ),
        None => {
            log::warn!("no --sft-data given: training starts from zero weights with a uniform reference");
            None
        }
    };
    let n_records = records.as_ref().map_or(0, Vec::len);
    let outcome = match run_train(&cfg.sim, &cfg.train, &cfg.lacs, records.as_deref()) {
        Ok(outcome) => outcome,
        Err(abort) => {
            save_training(&abort.partial, &cfg, n_records, out, &log)?;
            eprintln!("last good parameters saved to {}", out.display());
            return Err(abort.source.into());
        }
    };
    save_training(&outcome, &cfg, n_records, out, &log)?;
    if let Some(sft) = &outcome.sft {
        println!("supervised fit: accuracy {:.4}", sft.accuracy);
    }
    let mut policy = scorer(outcome.params.clone(), &cfg.sim).named("trained");
    let report = evaluate_policy(&mut policy, &cfg.sim, &seeds(&cfg, None)?)?;
    print_rows(&[SweepRow {
        policy: "trained".into(),
        axis: "base".into(),
        report,
    }]);
    println!("checkpoint: {}  log: {}", out.display(), log.display());
    Ok(())
}

fn remote_policy(cfg: &LabConfig, endpoint: EndpointConfig, audit: Option<&Path>) -> Result<RemotePolicy<f64>, Failure> {
    let policy = RemotePolicy::http(endpoint, PromptStyle::standard(), cfg.sim.cost_params())?;
    Ok(match audit {
        Some(path) => policy.with_audit_log(path)?,
        None => policy,
    })
}

pub fn eval(
    common: &Common,
    source: &PolicySource,
    episodes: Option<usize>,
    out: Option<&Path>,
    audit: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let seeds = seeds(&cfg, episodes)?;
    if let Some(out) = out {
        ensure_writable(out, common.force)?;
    }
    let mut policy: Box<dyn Policy<f64>> = if let Some(path) = &source.checkpoint {
        Box::new(scorer(load_checkpoint(path)?, &cfg.sim))
    } else if let Some(kind) = source.baseline {
        Box::new(baseline_policy(kind, cfg.sim.cost_params(), cfg.sim.seed))
    } else {
        Box::new(remote_policy(&cfg, EndpointConfig::from_env()?, audit)?)
    };
    let report = evaluate_policy(policy.as_mut(), &cfg.sim, &seeds)?;
    let rows = [SweepRow {
        policy: report.policy.clone(),
        axis: "base".into(),
        report,
    }];
    print_rows(&rows);
    if let Some(out) = out {
        write_rows(out, &rows)?;
    }
    Ok(())
}

enum Entry {
    Baseline(BaselineKind),
    Checkpoint(PolicyParams<f64>),
    Remote(EndpointConfig),
}

pub fn sweep(
    common: &Common,
    axis: SweepAxis,
    names: &[String],
    checkpoint: Option<&Path>,
    episodes: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let seeds = seeds(&cfg, episodes)?;
    let mut resolved = Vec::new();
    for name in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        let entry = match name {
            "checkpoint" => {
                let path = checkpoint.ok_or_else(|| Failure::usage("policy `checkpoint` needs --checkpoint <path>"))?;
                Entry::Checkpoint(load_checkpoint(path)?)
            }
            "remote" => Entry::Remote(EndpointConfig::from_env()?),
            other => Entry::Baseline(other.parse().map_err(Failure::Usage)?),
        };
        resolved.push((name.to_string(), entry));
    }
    if resolved.is_empty() {
        return Err(Failure::usage("--policies lists no policy"));
    }
    let mut entries: Vec<SweepEntry<'_, f64>> = resolved
        .iter()
        .map(|(name, entry)| {
            let make: offload_core::eval::PolicyFactory<'_, f64> = match entry {
                Entry::Baseline(kind) => {
                    let kind = *kind;
                    Box::new(move |sim: &SimConfig<f64>| {
                        Ok(Box::new(baseline_policy(kind, sim.cost_params(), sim.seed)) as Box<dyn Policy<f64>>)
                    })
                }
                Entry::Checkpoint(params) => Box::new(move |sim: &SimConfig<f64>| {
                    Ok(Box::new(scorer(params.clone(), sim)) as Box<dyn Policy<f64>>)
                }),
                Entry::Remote(endpoint) => Box::new(move |sim: &SimConfig<f64>| {
                    RemotePolicy::http(endpoint.clone(), PromptStyle::standard(), sim.cost_params())
                        .map(|p| Box::new(p) as Box<dyn Policy<f64>>)
                        .map_err(|e| offload_core::Error::Policy(offload_core::policy::PolicyError::Backend(e.to_string())))
                }),
            };
            SweepEntry {
                name: name.clone(),
                make,
            }
        })
        .collect();
    let result = match out {
        Some(path) => {
            ensure_writable(path, common.force)?;
            let mut file = BufWriter::new(File::create(path)?);
            run_sweep(&mut entries, axis, &cfg.sim, &seeds, cfg.eval.noise_seed, &mut file)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            run_sweep(&mut entries, axis, &cfg.sim, &seeds, cfg.eval.noise_seed, &mut lock)
        }
    };
    let rows = result?;
    if let Some(path) = out {
        print_rows(&rows);
        println!("wrote {} rows to {}", rows.len(), path.display());
    }
    Ok(())
}
