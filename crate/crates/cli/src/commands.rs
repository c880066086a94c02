use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use slap_core::pipeline::{
    self, ablate_pruning as sweep, evaluate, run_flat_ppo_baseline, shortcut_policies, write_ablation, write_dynamics, write_results,
    DynamicsRow, EvalRecord, ExperimentConfig, Protocol, Training,
};
use slap_core::policy::{save_checkpoint, write_training_log, CheckpointSignature, PolicyParams};
use slap_core::shortcut::{read_ledger, write_ledger, LedgerEntry};
use slap_core::{Error, Result};

use crate::files::{ensure_dir, list, load_checkpoints, read_text, write_with};
use crate::report;

/// Outcome of a command that did not error out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some policies diverged; everything else completed.
    Diverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Diverged => 3,
        }
    }

    fn and(self, other: Status) -> Status {
        if self == Status::Diverged || other == Status::Diverged {
            Status::Diverged
        } else {
            Status::Ok
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    All,
    Standard,
    Distractors,
    Goals,
}

impl ProtocolArg {
    fn protocols(self, cfg: &ExperimentConfig) -> Vec<Protocol> {
        match self {
            ProtocolArg::Standard => vec![Protocol::Standard],
            ProtocolArg::Distractors => vec![Protocol::Distractors],
            ProtocolArg::Goals => vec![Protocol::RandomGoals],
            ProtocolArg::All => {
                let mut v = vec![Protocol::Standard];
                if cfg.generalization.n_distractors > 0 {
                    v.push(Protocol::Distractors);
                }
                if cfg.generalization.random_goals {
                    v.push(Protocol::RandomGoals);
                }
                v
            }
        }
    }
}

const LEDGER: &str = "ledger.jsonl";
const SNAPSHOTS: &str = "snapshots";

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_with(&out.join("config.toml"), |w| Ok(std::io::Write::write_all(w, cfg.to_toml().as_bytes())?))
}

fn stem(id: Option<usize>) -> String {
    match id {
        Some(id) => format!("shortcut-{id:03}"),
        None => "shared".into(),
    }
}

fn collect_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<LedgerEntry>> {
    let ledger = pipeline::collect(cfg, seed)?;
    write_with(&out.join(LEDGER), |w| write_ledger(w, &ledger))?;
    let kept = pipeline::surviving(&ledger, cfg.rollout.k).len();
    eprintln!("seed {seed}: {} candidates, {kept} kept at K={}", ledger.len(), cfg.rollout.k);
    Ok(ledger)
}

pub fn collect(cfg: &ExperimentConfig, out: &Path) -> Result<Status> {
    ensure_dir(out)?;
    write_config(cfg, out)?;
    collect_seed(cfg, cfg.seed, out)?;
    Ok(Status::Ok)
}

fn save(path: &Path, params: &PolicyParams, sig: &CheckpointSignature) -> Result<()> {
    write_with(path, |w| save_checkpoint(w, params, sig))
}

/// Writes checkpoints, snapshots and training logs. The ledger is copied
/// alongside so the directory is self-contained for `slap eval`.
fn write_training(training: &Training, ledger: &[LedgerEntry], out: &Path) -> Result<Status> {
    ensure_dir(out)?;
    write_with(&out.join(LEDGER), |w| write_ledger(w, ledger))?;
    for t in &training.shortcuts {
        let name = stem(t.id);
        save(&out.join(format!("{name}.ckpt")), &t.outcome.params, &t.signature)?;
        for (i, s) in t.outcome.snapshots.iter().enumerate() {
            save(&out.join(SNAPSHOTS).join(format!("{name}-s{i:02}.ckpt")), &s.params, &t.signature)?;
        }
        write_with(&out.join("logs").join(format!("{name}.csv")), |w| {
            write_training_log(w, t.outcome.steps_per_update, &t.outcome.log)
        })?;
    }
    if let Some(first) = training.shortcuts.first() {
        write_with(&out.join(SNAPSHOTS).join("index.csv"), |w| {
            std::io::Write::write_all(w, b"snapshot,episodes\n")?;
            for (i, s) in first.outcome.snapshots.iter().enumerate() {
                std::io::Write::write_all(w, format!("{i},{}\n", s.episodes).as_bytes())?;
            }
            Ok(())
        })?;
    }
    for (id, reason) in &training.diverged {
        eprintln!("{} diverged: {reason}", stem(Some(*id)));
    }
    write_with(&out.join("diverged.txt"), |w| {
        for (id, reason) in &training.diverged {
            std::io::Write::write_all(w, format!("{}\t{reason}\n", stem(Some(*id))).as_bytes())?;
        }
        Ok(())
    })?;
    eprintln!("{} policies trained, {} diverged", training.shortcuts.len(), training.diverged.len());
    Ok(if training.diverged.is_empty() { Status::Ok } else { Status::Diverged })
}

pub fn train(cfg: &ExperimentConfig, ledger_path: &Path, out: &Path) -> Result<Status> {
    let ledger = read_ledger(&read_text(ledger_path)?)?;
    let training = pipeline::train(cfg, cfg.seed, &ledger)?;
    write_config(cfg, out)?;
    write_training(&training, &ledger, out)
}

fn read_ledger_in(dir: &Path) -> Result<Vec<LedgerEntry>> {
    let path = dir.join(LEDGER);
    if path.is_file() {
        read_ledger(&read_text(&path)?)
    } else {
        Ok(vec![])
    }
}

fn eval_records(cfg: &ExperimentConfig, policies: &[std::sync::Arc<slap_core::planner::ShortcutPolicy>], protocol: ProtocolArg) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::new();
    for p in protocol.protocols(cfg) {
        let ev = evaluate(cfg, cfg.seed, policies, p)?;
        let solved = ev.outcomes.iter().filter(|o| o.slap.success).count();
        eprintln!("seed {} {p:?}: {solved}/{} solved, {} shortcut edges", cfg.seed, ev.outcomes.len(), ev.shortcut_edges());
        records.extend(ev.records);
    }
    Ok(records)
}

/// Snapshot checkpoints grouped by snapshot index.
fn snapshot_groups(dir: &Path) -> Result<BTreeMap<usize, Vec<PathBuf>>> {
    let mut groups: BTreeMap<usize, Vec<PathBuf>> = BTreeMap::new();
    for p in list(&dir.join(SNAPSHOTS), "ckpt")? {
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let idx = name
            .rsplit_once("-s")
            .and_then(|(_, i)| i.parse().ok())
            .ok_or_else(|| Error::Format(format!("unexpected snapshot name {}", p.display())))?;
        groups.entry(idx).or_default().push(p);
    }
    Ok(groups)
}

fn snapshot_episodes(dir: &Path) -> Result<BTreeMap<usize, usize>> {
    let path = dir.join(SNAPSHOTS).join("index.csv");
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    let text = read_text(&path)?;
    text.lines()
        .skip(1)
        .map(|l| {
            let (i, e) = l.split_once(',').ok_or_else(|| Error::Format(format!("bad snapshot index line {l}")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("{s}: {e}")));
            Ok((parse(i)?, parse(e)?))
        })
        .collect()
}

fn dynamics(cfg: &ExperimentConfig, ledger: &[LedgerEntry], dir: &Path) -> Result<Vec<DynamicsRow>> {
    let episodes = snapshot_episodes(dir)?;
    snapshot_groups(dir)?
        .into_iter()
        .map(|(i, paths)| {
            let policies = shortcut_policies(&load_checkpoints(&paths)?, ledger, cfg.rollout.k)?;
            let ev = evaluate(cfg, cfg.seed, &policies, Protocol::Standard)?;
            Ok(DynamicsRow {
                snapshot: i,
                episodes: episodes.get(&i).copied().unwrap_or(0),
                shortcut_edges: ev.shortcut_edges(),
                mean_plan_length: ev.mean_plan_length(true),
            })
        })
        .collect()
}

pub fn eval(cfg: &ExperimentConfig, checkpoints: &Path, protocol: ProtocolArg, with_dynamics: bool, out: &Path) -> Result<Status> {
    let ledger = read_ledger_in(checkpoints)?;
    let policies = shortcut_policies(&load_checkpoints(&list(checkpoints, "ckpt")?)?, &ledger, cfg.rollout.k)?;
    let records = eval_records(cfg, &policies, protocol)?;
    ensure_dir(out)?;
    write_with(&out.join("results.csv"), |w| write_results(w, &records))?;
    if with_dynamics {
        let rows = dynamics(cfg, &ledger, checkpoints)?;
        write_with(&out.join("dynamics.csv"), |w| write_dynamics(w, &rows))?;
    }
    Ok(Status::Ok)
}

/// The whole pipeline for every configured seed, each in `seed-<n>/`,
/// followed by a report over all of them.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Status> {
    ensure_dir(out)?;
    write_config(cfg, out)?;
    let mut status = Status::Ok;
    for seed in cfg.seeds() {
        let seed_cfg = ExperimentConfig { seed, n_seeds: 1, ..cfg.clone() };
        let dir = out.join(format!("seed-{seed}"));
        let ledger = collect_seed(&seed_cfg, seed, &dir)?;
        let training = pipeline::train(&seed_cfg, seed, &ledger)?;
        let ckpt_dir = dir.join("checkpoints");
        status = status.and(write_training(&training, &ledger, &ckpt_dir)?);
        status = status.and(eval(&seed_cfg, &ckpt_dir, ProtocolArg::All, true, &dir)?);
    }
    report::report(out, &out.join("report"))?;
    Ok(status)
}

pub fn baseline_ppo(cfg: &ExperimentConfig, out: &Path) -> Result<Status> {
    ensure_dir(out)?;
    write_config(cfg, out)?;
    let mut records = Vec::new();
    for seed in cfg.seeds() {
        let (recs, outcome) = run_flat_ppo_baseline(cfg, seed)?;
        let solved = recs.iter().filter(|r| r.method == "ppo" && r.success).count();
        eprintln!("seed {seed}: flat PPO solved {solved}/{}", cfg.n_eval_tasks);
        write_with(&out.join("logs").join(format!("ppo-seed-{seed}.csv")), |w| {
            write_training_log(w, outcome.steps_per_update, &outcome.log)
        })?;
        records.extend(recs);
    }
    write_with(&out.join("results.csv"), |w| write_results(w, &records))?;
    Ok(Status::Ok)
}

pub fn ablate_pruning(cfg: &ExperimentConfig, ratios: &[f64], out: &Path) -> Result<Status> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r <= 100.0)) {
        return Err(Error::InvalidConfig("ratios must be percentages in (0, 100]".into()));
    }
    ensure_dir(out)?;
    write_config(cfg, out)?;
    for seed in cfg.seeds() {
        let rows = sweep(cfg, seed, ratios)?;
        for r in &rows {
            eprintln!("seed {seed} K/N={}%: {} kept, mean length {:.2}", r.ratio, r.surviving, r.mean_plan_length);
        }
        write_with(&out.join(format!("ablation-seed-{seed}.csv")), |w| write_ablation(w, &rows))?;
    }
    Ok(Status::Ok)
}
