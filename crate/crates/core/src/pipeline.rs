//! Experiment orchestration: data collection, shortcut training,
//! evaluation against pure planning, baselines and ablations.
//!
//! Every stage is a function of the experiment config and a single seed,
//! so results for one seed never depend on which other seeds run.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Obstacle2d};
use crate::error::{Error, Result};
use crate::graph::consolidate_bottom_level;
use crate::model::{atom_vocabulary, goal_satisfied, AbstractState, Atom, Goal, ObjectId, State, Task};
use crate::planner::{attach_shortcuts, options_graph, plan_and_verify, top_level, with_goal, Executor, ShortcutPolicy};
use crate::policy::{
    goal_encoding, learn_policy, learn_shared_policy, CheckpointSignature, Episodic, ObjectRef, PolicyParams, PpoHyper,
    TrainOutcome,
};
use crate::shortcut::{create_mdp, get_shortcut_data, prune_random_rollouts, LedgerEntry, ShortcutCandidate, ShortcutMdp, ACT_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Random-rollout episodes per candidate.
    #[serde(rename = "N")]
    pub n: usize,
    /// Steps per random-rollout episode.
    #[serde(rename = "T")]
    pub t: usize,
    /// Successes required to keep a candidate.
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { n: 1000, t: 100, k: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Independent,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationConfig {
    pub n_distractors: usize,
    pub random_goals: bool,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self { n_distractors: 1, random_goals: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub episodes: usize,
    pub entropy_coeff: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { episodes: 1000, entropy_coeff: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// First seed; seeds `seed .. seed + n_seeds` are run.
    pub seed: u64,
    pub n_seeds: usize,
    pub n_train_tasks: usize,
    pub n_eval_tasks: usize,
    /// Graph builds per training task.
    pub n_collect: usize,
    pub env: EnvConfig,
    pub rollout: RolloutConfig,
    #[serde(rename = "T_eval")]
    pub t_eval: usize,
    pub ppo: PpoHyper,
    pub mode: Mode,
    pub generalization: GeneralizationConfig,
    pub baseline: BaselineConfig,
    /// When false, `planning_time_ms` is written as 0 so result files are
    /// byte-for-byte reproducible.
    pub record_planning_time: bool,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_seeds: 5,
            n_train_tasks: 10,
            n_eval_tasks: 10,
            n_collect: 1,
            env: EnvConfig::default(),
            rollout: RolloutConfig::default(),
            t_eval: 50,
            ppo: PpoHyper::default(),
            mode: Mode::Independent,
            generalization: GeneralizationConfig::default(),
            baseline: BaselineConfig::default(),
            record_planning_time: true,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        let positive = [
            (self.n_seeds, "n_seeds"),
            (self.n_train_tasks, "n_train_tasks"),
            (self.n_eval_tasks, "n_eval_tasks"),
            (self.n_collect, "n_collect"),
            (self.t_eval, "T_eval"),
            (self.rollout.n, "rollout.N"),
            (self.rollout.t, "rollout.T"),
            (self.baseline.episodes, "baseline.episodes"),
        ];
        if let Some((_, name)) = positive.iter().find(|(v, _)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.rollout.k > self.rollout.n {
            return Err(Error::InvalidConfig("rollout.K must not exceed rollout.N".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn env(&self) -> Result<Obstacle2d> {
        Obstacle2d::new(self.env.clone())
    }

    /// Runs `f` on a pool with the configured number of workers.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
}

/// Stable seed for a named stream of `base`.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn train_tasks(env: &Obstacle2d, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Task>> {
    (0..cfg.n_train_tasks as u64).map(|i| env.sample_task(derive_seed(seed, "train", i))).collect()
}

pub fn eval_tasks(env: &Obstacle2d, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Task>> {
    (0..cfg.n_eval_tasks as u64).map(|i| env.sample_task(derive_seed(seed, "eval", i))).collect()
}

/// Builds option graphs on the training tasks, enumerates shortcut
/// candidates and prunes them with random rollouts.
pub fn collect(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<LedgerEntry>> {
    let env = cfg.env()?;
    let mut graphs = Vec::new();
    for (i, task) in train_tasks(&env, cfg, seed)?.iter().enumerate() {
        for _ in 0..cfg.n_collect {
            let g = options_graph(&env, task).map_err(|e| match e {
                Error::Unsolvable(m) => Error::Unsolvable(format!("training task {i} (seed {}): {m}", task.seed)),
                other => other,
            })?;
            graphs.push(g);
        }
    }
    let candidates = get_shortcut_data(&graphs);
    let r = &cfg.rollout;
    let results: Vec<_> = cfg.install(|| {
        candidates
            .par_iter()
            .enumerate()
            .map(|(i, c)| prune_random_rollouts(&env, c, r.n, r.t, r.k, derive_seed(seed, "prune", i as u64)))
            .collect()
    });
    Ok(candidates.iter().zip(results).enumerate().map(|(i, (c, pr))| LedgerEntry::new(i, c, pr, r.n, r.t, r.k)).collect())
}

/// Ledger entries whose rollout successes reach `k`.
pub fn surviving(ledger: &[LedgerEntry], k: usize) -> Vec<&LedgerEntry> {
    ledger.iter().filter(|e| e.successes >= k).collect()
}

/// A trained shortcut with everything needed to write its checkpoint.
#[derive(Clone, Debug)]
pub struct TrainedShortcut {
    /// Ledger id, or `None` for the shared policy.
    pub id: Option<usize>,
    pub outcome: TrainOutcome,
    pub signature: CheckpointSignature,
}

#[derive(Clone, Debug)]
pub struct Training {
    pub shortcuts: Vec<TrainedShortcut>,
    /// Ledger ids whose training diverged, with the reason.
    pub diverged: Vec<(usize, String)>,
}

pub fn object_refs(objects: &[ObjectId]) -> Vec<ObjectRef> {
    objects.iter().map(|o| ObjectRef { name: o.name.to_string(), otype: o.otype }).collect()
}

fn signature_for(c: &ShortcutCandidate, observed: &[ObjectId], hidden: usize, vocabulary: &[Atom]) -> CheckpointSignature {
    CheckpointSignature {
        objects: object_refs(c.x0_pool[0].objects()),
        s_init: c.s_init.to_records(),
        s_term: c.s_term.to_records(),
        rel_objects: c.rel_objects.iter().map(|o| o.name.to_string()).collect(),
        observed: observed.iter().map(|o| o.name.to_string()).collect(),
        hidden,
        vocabulary: vocabulary.iter().map(Atom::to_record).collect(),
    }
}

/// Trains one policy per surviving candidate, or one shared policy.
pub fn train(cfg: &ExperimentConfig, seed: u64, ledger: &[LedgerEntry]) -> Result<Training> {
    let env = cfg.env()?;
    let kept = surviving(ledger, cfg.rollout.k);
    let candidates: Vec<(usize, ShortcutCandidate)> =
        kept.iter().map(|e| Ok((e.id, e.candidate()?))).collect::<Result<Vec<_>>>()?;
    let mut training = Training { shortcuts: Vec::new(), diverged: Vec::new() };
    if candidates.is_empty() {
        return Ok(training);
    }
    match cfg.mode {
        Mode::Independent => {
            let results: Vec<_> = cfg.install(|| {
                candidates
                    .par_iter()
                    .map(|(id, c)| {
                        let mdp = create_mdp(&env, c.clone(), cfg.ppo.max_steps);
                        learn_policy(&mdp, &cfg.ppo, derive_seed(seed, "policy", *id as u64))
                    })
                    .collect()
            });
            for ((id, c), res) in candidates.iter().zip(results) {
                match res {
                    Ok(outcome) => training.shortcuts.push(TrainedShortcut {
                        id: Some(*id),
                        outcome,
                        signature: signature_for(c, &c.observed, cfg.ppo.hidden, &[]),
                    }),
                    Err(Error::Divergence(m)) => training.diverged.push((*id, m)),
                    Err(e) => return Err(e),
                }
            }
        }
        Mode::Shared => {
            let objects = candidates[0].1.x0_pool[0].objects().to_vec();
            let vocabulary = atom_vocabulary(&objects, env.predicates());
            let mdps: Vec<ShortcutMdp> =
                candidates.iter().map(|(_, c)| create_mdp(&env, c.clone(), cfg.ppo.max_steps).with_full_observation()).collect();
            let encodings: Vec<Vec<f64>> = candidates.iter().map(|(_, c)| goal_encoding(&vocabulary, &c.s_term)).collect();
            match learn_shared_policy(&mdps, &encodings, &cfg.ppo, derive_seed(seed, "shared-policy", 0)) {
                Ok(outcome) => {
                    let c = &candidates[0].1;
                    let mut signature = signature_for(c, &mdps[0].observed, cfg.ppo.hidden, &vocabulary);
                    signature.s_init.clear();
                    signature.s_term.clear();
                    signature.rel_objects.clear();
                    training.shortcuts.push(TrainedShortcut { id: None, outcome, signature });
                }
                Err(Error::Divergence(m)) => training.diverged.extend(candidates.iter().map(|(id, _)| (*id, m.clone()))),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(training)
}

fn resolve_objects(refs: &[ObjectRef]) -> Vec<ObjectId> {
    refs.iter().map(|r| ObjectId::new(&r.name, r.otype)).collect()
}

fn resolve_atoms(recs: &[crate::model::AtomRecord], objects: &[ObjectId]) -> Result<Vec<Atom>> {
    recs.iter().map(|r| Atom::from_record(r, objects)).collect()
}

fn resolve_names(names: &[String], objects: &[ObjectId]) -> Result<Vec<ObjectId>> {
    names
        .iter()
        .map(|n| {
            objects
                .iter()
                .find(|o| &*o.name == n.as_str())
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint names unknown object {n}")))
        })
        .collect()
}

/// Turns checkpoints into planner shortcuts. A shared checkpoint expands
/// into one shortcut per ledger candidate it was trained on.
pub fn shortcut_policies(checkpoints: &[(PolicyParams, CheckpointSignature)], ledger: &[LedgerEntry], k: usize) -> Result<Vec<Arc<ShortcutPolicy>>> {
    let mut out = Vec::new();
    for (params, sig) in checkpoints {
        let objects = resolve_objects(&sig.objects);
        let observed = resolve_names(&sig.observed, &objects)?;
        if sig.vocabulary.is_empty() {
            let s_init = AbstractState::from_atoms(resolve_atoms(&sig.s_init, &objects)?);
            let s_term = AbstractState::from_atoms(resolve_atoms(&sig.s_term, &objects)?);
            let signature = crate::shortcut::Signature::between(&s_init, &s_term);
            let obs_dim: usize = observed.iter().map(|o| o.otype.feature_len()).sum();
            if obs_dim != params.obs_dim || params.act_dim != ACT_DIM {
                return Err(Error::IncompatibleCheckpoint(format!("observation dim {} does not match its objects", params.obs_dim)));
            }
            let name = ShortcutCandidate::new(s_init, s_term, vec![placeholder_state(&objects)?])?.name().to_string();
            out.push(Arc::new(ShortcutPolicy { name, params: params.clone(), signature, observed, vocabulary: None }));
        } else {
            let vocabulary = resolve_atoms(&sig.vocabulary, &objects)?;
            for e in surviving(ledger, k) {
                let c = e.candidate()?;
                out.push(Arc::new(ShortcutPolicy {
                    name: format!("shared {}", c.name()),
                    params: params.clone(),
                    signature: c.signature(),
                    observed: observed.clone(),
                    vocabulary: Some(vocabulary.clone()),
                }));
            }
        }
    }
    Ok(out)
}

fn placeholder_state(objects: &[ObjectId]) -> Result<State> {
    State::new(objects.iter().map(|o| (o.clone(), vec![0.0; o.otype.feature_len()])).collect(), None)
}

/// Planner shortcuts straight from an in-memory training run.
pub fn policies_from_training(training: &Training, ledger: &[LedgerEntry], k: usize, snapshot: Option<usize>) -> Result<Vec<Arc<ShortcutPolicy>>> {
    let pairs: Vec<(PolicyParams, CheckpointSignature)> = training
        .shortcuts
        .iter()
        .map(|t| {
            let params = match snapshot {
                Some(i) => t.outcome.snapshots[i].params.clone(),
                None => t.outcome.params.clone(),
            };
            (params, t.signature.clone())
        })
        .collect();
    shortcut_policies(&pairs, ledger, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanOutcome {
    pub success: bool,
    pub plan_length: u64,
    pub planning_time_ms: u64,
    pub shortcuts_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskOutcome {
    pub pure: PlanOutcome,
    pub slap: PlanOutcome,
    /// Shortcut edges that survived validation in the SLAP graph.
    pub shortcut_edges: usize,
}

/// Plans `task` with the scripted options alone and with the shortcuts
/// added, validating each shortcut edge by running its policy.
pub fn solve_task(env: &Obstacle2d, task: &Task, policies: &[Arc<ShortcutPolicy>], t_eval: usize) -> Result<TaskOutcome> {
    let horizon = env.config().horizon as u64;
    let failed = |ms| PlanOutcome { success: false, plan_length: horizon, planning_time_ms: ms, shortcuts_used: 0 };
    let start = Instant::now();
    let top = match top_level(env, task) {
        Ok(t) => t,
        Err(Error::Unsolvable(_)) => return Ok(TaskOutcome { pure: failed(0), slap: failed(0), shortcut_edges: 0 }),
        Err(e) => return Err(e),
    };
    let top_ms = start.elapsed();
    let run = |graph: Result<crate::graph::PlanningGraph>, started: Instant| -> Result<(PlanOutcome, usize)> {
        let graph = match graph {
            Ok(g) => g,
            Err(Error::Unsolvable(_)) => return Ok((failed(ms(started.elapsed() + top_ms)), 0)),
            Err(e) => return Err(e),
        };
        let edges = graph.shortcut_edge_count();
        let plan = plan_and_verify(env, &graph, task);
        let t = ms(started.elapsed() + top_ms);
        Ok(match plan {
            Ok(p) => (PlanOutcome { success: true, plan_length: p.total_cost, planning_time_ms: t, shortcuts_used: p.shortcuts_used() }, edges),
            Err(Error::NoPlan) => (failed(t), edges),
            Err(e) => return Err(e),
        })
    };
    let started = Instant::now();
    let (pure, _) = run(consolidate_bottom_level(top.clone(), &Executor { env, bound: &[], t_eval }), started)?;
    let started = Instant::now();
    let mut slap_top = top;
    let encode = |p: &ShortcutPolicy, s_term: &AbstractState| p.vocabulary.as_ref().map(|v| goal_encoding(v, s_term)).unwrap_or_default();
    let bound = attach_shortcuts(&mut slap_top, policies, &encode);
    let (slap, shortcut_edges) = run(consolidate_bottom_level(slap_top, &Executor { env, bound: &bound, t_eval }), started)?;
    Ok(TaskOutcome { pure, slap, shortcut_edges })
}

fn ms(d: std::time::Duration) -> u64 {
    d.as_millis() as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub task_id: usize,
    pub method: String,
    pub seed: u64,
    pub success: bool,
    pub plan_length: u64,
    pub planning_time_ms: u64,
    pub shortcuts_used: usize,
    pub relative_path_length: f64,
}

pub const RESULTS_HEADER: &str = "task_id,method,seed,success,plan_length,planning_time_ms,shortcuts_used,relative_path_length";

impl EvalRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.task_id,
            self.method,
            self.seed,
            self.success as u8,
            self.plan_length,
            self.planning_time_ms,
            self.shortcuts_used,
            self.relative_path_length
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("expected 8 fields: {line}")));
        }
        let bad = |what: &str| Error::Format(format!("bad {what} in: {line}"));
        Ok(EvalRecord {
            task_id: f[0].parse().map_err(|_| bad("task_id"))?,
            method: f[1].to_string(),
            seed: f[2].parse().map_err(|_| bad("seed"))?,
            success: f[3] == "1" || f[3] == "true",
            plan_length: f[4].parse().map_err(|_| bad("plan_length"))?,
            planning_time_ms: f[5].parse().map_err(|_| bad("planning_time_ms"))?,
            shortcuts_used: f[6].parse().map_err(|_| bad("shortcuts_used"))?,
            relative_path_length: f[7].parse().map_err(|_| bad("relative_path_length"))?,
        })
    }
}

pub fn write_results<W: Write>(mut out: W, records: &[EvalRecord]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(Error::Format("results file lacks the expected header".into())),
    }
    lines.map(EvalRecord::parse).collect()
}

fn records_for(task_id: usize, seed: u64, suffix: &str, o: &TaskOutcome, record_time: bool) -> [EvalRecord; 2] {
    let t = |v: u64| if record_time { v } else { 0 };
    let rel = o.slap.plan_length as f64 / o.pure.plan_length.max(1) as f64;
    let rec = |method: &str, p: &PlanOutcome, rel: f64| EvalRecord {
        task_id,
        method: format!("{method}{suffix}"),
        seed,
        success: p.success,
        plan_length: p.plan_length,
        planning_time_ms: t(p.planning_time_ms),
        shortcuts_used: p.shortcuts_used,
        relative_path_length: rel,
    };
    [rec("slap", &o.slap, rel), rec("pure", &o.pure, 1.0)]
}

/// Protocols for evaluation on held-out tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// The held-out tasks as sampled.
    Standard,
    /// The same tasks with extra distractor blocks on the bottom line.
    Distractors,
    /// Goals drawn from the non-root abstract states of each task's graph.
    RandomGoals,
}

impl Protocol {
    pub fn suffix(self) -> &'static str {
        match self {
            Protocol::Standard => "",
            Protocol::Distractors => "_distractor",
            Protocol::RandomGoals => "_goal",
        }
    }
}

/// Held-out tasks for a protocol.
pub fn protocol_tasks(cfg: &ExperimentConfig, seed: u64, protocol: Protocol) -> Result<Vec<Task>> {
    let env = cfg.env()?;
    match protocol {
        Protocol::Standard => eval_tasks(&env, cfg, seed),
        Protocol::Distractors => {
            let denv = Obstacle2d::new(EnvConfig { n_distractors: cfg.generalization.n_distractors, ..cfg.env.clone() })?;
            eval_tasks(&denv, cfg, seed)
        }
        Protocol::RandomGoals => eval_tasks(&env, cfg, seed)?
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let g = options_graph(&env, task)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "goal", i as u64));
                let choices: Vec<usize> = (0..g.nodes.len()).filter(|&n| n != g.root).collect();
                if choices.is_empty() {
                    return Ok(task.clone());
                }
                let node = &g.nodes[choices[rng.random_range(0..choices.len())]];
                Ok(with_goal(task, Goal::new(node.abstract_state.atoms().to_vec())))
            })
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    pub outcomes: Vec<TaskOutcome>,
}

impl Evaluation {
    pub fn shortcut_edges(&self) -> usize {
        self.outcomes.iter().map(|o| o.shortcut_edges).sum()
    }

    pub fn mean_plan_length(&self, slap: bool) -> f64 {
        mean(&self.outcomes.iter().map(|o| if slap { o.slap.plan_length } else { o.pure.plan_length } as f64).collect::<Vec<_>>())
    }
}

/// SLAP and pure-planning records for every held-out task of a protocol.
pub fn evaluate(cfg: &ExperimentConfig, seed: u64, policies: &[Arc<ShortcutPolicy>], protocol: Protocol) -> Result<Evaluation> {
    let tasks = protocol_tasks(cfg, seed, protocol)?;
    let env = if protocol == Protocol::Distractors {
        Obstacle2d::new(EnvConfig { n_distractors: cfg.generalization.n_distractors, ..cfg.env.clone() })?
    } else {
        cfg.env()?
    };
    let outcomes: Vec<TaskOutcome> =
        cfg.install(|| tasks.par_iter().map(|t| solve_task(&env, t, policies, cfg.t_eval)).collect::<Result<Vec<_>>>())?;
    let records = outcomes
        .iter()
        .enumerate()
        .flat_map(|(i, o)| records_for(i, seed, protocol.suffix(), o, cfg.record_planning_time))
        .collect();
    Ok(Evaluation { records, outcomes })
}

/// Whole training tasks, presented round-robin, with -1 reward per step.
#[derive(Clone, Debug)]
pub struct FlatMdp {
    pub env: Obstacle2d,
    pub tasks: Vec<Task>,
    pub horizon: usize,
}

impl Episodic for FlatMdp {
    type State = (usize, State);

    fn obs_dim(&self) -> usize {
        self.tasks[0].initial_state.flat_features().len()
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn max_steps(&self) -> usize {
        self.horizon
    }

    fn reset(&self, episode: usize, _rng: &mut ChaCha8Rng) -> Self::State {
        let k = episode % self.tasks.len();
        (k, self.tasks[k].initial_state.clone())
    }

    fn observe(&self, s: &Self::State) -> Vec<f64> {
        s.1.flat_features().to_vec()
    }

    fn step(&self, s: &Self::State, action: &[f64]) -> (Self::State, f64, bool) {
        let next = self.env.step(&s.1, crate::shortcut::denormalize(&self.env, action));
        let done = goal_satisfied(&self.env.abstract_state(&next), &self.tasks[s.0].goal);
        ((s.0, next), -1.0, done)
    }
}

/// Runs a flat policy on `task`; returns the steps to the goal. With an
/// `rng` actions are sampled from the policy's Gaussian, otherwise the mean
/// action is used.
pub fn rollout_flat(env: &Obstacle2d, params: &PolicyParams, task: &Task, horizon: usize, mut rng: Option<&mut ChaCha8Rng>) -> Result<Option<usize>> {
    let mut x = task.initial_state.clone();
    for t in 0..horizon {
        let (mean, log_std, _) = params.forward(x.flat_features())?;
        let a: Vec<f64> = match rng.as_deref_mut() {
            Some(rng) => mean
                .iter()
                .zip(&log_std)
                .map(|(m, ls)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + ls.exp() * z
                })
                .collect(),
            None => mean,
        };
        x = env.step(&x, crate::shortcut::denormalize(env, &a));
        if goal_satisfied(&env.abstract_state(&x), &task.goal) {
            return Ok(Some(t + 1));
        }
    }
    Ok(None)
}

/// PPO trained directly on the full tasks, evaluated on held-out tasks.
/// Records tagged `ppo` execute the stochastic policy PPO optimizes;
/// `ppo_mean` records execute its mean action.
pub fn run_flat_ppo_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<EvalRecord>, TrainOutcome)> {
    let env = cfg.env()?;
    let horizon = cfg.env.horizon;
    let mdp = FlatMdp { env: env.clone(), tasks: train_tasks(&env, cfg, seed)?, horizon };
    let hyper = PpoHyper { entropy_coeff: cfg.baseline.entropy_coeff, episodes: cfg.baseline.episodes, max_steps: horizon, ..cfg.ppo.clone() };
    let outcome = learn_policy(&mdp, &hyper, derive_seed(seed, "flat-ppo", 0))?;
    let tasks = eval_tasks(&env, cfg, seed)?;
    let mut records = Vec::new();
    for (method, sampled) in [("ppo", true), ("ppo_mean", false)] {
        for (i, task) in tasks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "flat-eval", i as u64));
            let steps = rollout_flat(&env, &outcome.params, task, horizon, sampled.then_some(&mut rng))?;
            records.push(EvalRecord {
                task_id: i,
                method: method.into(),
                seed,
                success: steps.is_some(),
                plan_length: steps.unwrap_or(horizon) as u64,
                planning_time_ms: 0,
                shortcuts_used: 0,
                relative_path_length: f64::NAN,
            });
        }
    }
    Ok((records, outcome))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `K / N` in percent.
    pub ratio: f64,
    pub k: usize,
    pub surviving: usize,
    pub mean_plan_length: f64,
    pub success_rate: f64,
}

pub const ABLATION_HEADER: &str = "ratio_percent,K,surviving,mean_plan_length,success_rate";

/// Sweeps the pruning threshold. Policies are trained once for every
/// candidate kept at the lowest threshold and reused at higher ones, since a
/// candidate's policy does not depend on the threshold.
pub fn ablate_pruning(cfg: &ExperimentConfig, seed: u64, ratios: &[f64]) -> Result<Vec<AblationRow>> {
    let ledger = collect(cfg, seed)?;
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    let k_of = |r: f64| ((r / 100.0) * cfg.rollout.n as f64).ceil() as usize;
    let k_min = ratios.first().map(|&r| k_of(r)).unwrap_or(cfg.rollout.k);
    let mut train_cfg = cfg.clone();
    train_cfg.rollout.k = k_min;
    let training = train(&train_cfg, seed, &ledger)?;
    let mut rows = Vec::new();
    for r in ratios {
        let k = k_of(r);
        let kept: Vec<usize> = surviving(&ledger, k).iter().map(|e| e.id).collect();
        let subset = Training {
            shortcuts: training.shortcuts.iter().filter(|t| t.id.is_none_or(|id| kept.contains(&id))).cloned().collect(),
            diverged: vec![],
        };
        let policies = if kept.is_empty() { vec![] } else { policies_from_training(&subset, &ledger, k, None)? };
        let ev = evaluate(cfg, seed, &policies, Protocol::Standard)?;
        let slap: Vec<&TaskOutcome> = ev.outcomes.iter().collect();
        let success = slap.iter().filter(|o| o.slap.success).count() as f64 / slap.len().max(1) as f64;
        rows.push(AblationRow { ratio: r, k, surviving: kept.len(), mean_plan_length: ev.mean_plan_length(true), success_rate: success });
    }
    Ok(rows)
}

pub fn write_ablation<W: Write>(mut out: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(out, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.ratio, r.k, r.surviving, r.mean_plan_length, r.success_rate)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsRow {
    pub snapshot: usize,
    pub episodes: usize,
    pub shortcut_edges: usize,
    pub mean_plan_length: f64,
}

pub const DYNAMICS_HEADER: &str = "snapshot,episodes,shortcut_edges,mean_plan_length";

/// Plan quality on held-out tasks as training progresses, using the
/// periodic snapshots of every shortcut policy.
pub fn training_dynamics(cfg: &ExperimentConfig, seed: u64, ledger: &[LedgerEntry], training: &Training) -> Result<Vec<DynamicsRow>> {
    let n = training.shortcuts.iter().map(|t| t.outcome.snapshots.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let policies = policies_from_training(training, ledger, cfg.rollout.k, Some(i))?;
            let ev = evaluate(cfg, seed, &policies, Protocol::Standard)?;
            Ok(DynamicsRow {
                snapshot: i,
                episodes: training.shortcuts[0].outcome.snapshots[i].episodes,
                shortcut_edges: ev.shortcut_edges(),
                mean_plan_length: ev.mean_plan_length(true),
            })
        })
        .collect()
}

pub fn write_dynamics<W: Write>(mut out: W, rows: &[DynamicsRow]) -> Result<()> {
    writeln!(out, "{DYNAMICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.snapshot, r.episodes, r.shortcut_edges, r.mean_plan_length)?;
    }
    Ok(())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub plan_length_mean: f64,
    pub plan_length_std: f64,
    /// Mean over tasks of per-task relative length, averaged over seeds.
    pub relative_per_task: f64,
    /// Total plan length over total pure-planning plan length.
    pub relative_pooled: f64,
}

pub const SUMMARY_HEADER: &str =
    "method,seeds,success_mean,success_std,plan_length_mean,plan_length_std,relative_per_task,relative_pooled";

/// Per-method means and across-seed standard deviations.
pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .iter()
        .map(|&m| {
            let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
            let mut seeds: Vec<u64> = mine.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let per_seed = |f: &dyn Fn(&EvalRecord) -> f64| -> Vec<f64> {
                seeds.iter().map(|s| mean(&mine.iter().filter(|r| r.seed == *s).map(|r| f(r)).collect::<Vec<_>>())).collect()
            };
            let success = per_seed(&|r| r.success as u8 as f64);
            let length = per_seed(&|r| r.plan_length as f64);
            let rel = per_seed(&|r| r.relative_path_length);
            let pure_method = m.replacen("slap", "pure", 1);
            let pure_total: f64 = records.iter().filter(|r| r.method == pure_method).map(|r| r.plan_length as f64).sum();
            let mine_total: f64 = mine.iter().map(|r| r.plan_length as f64).sum();
            SummaryRow {
                method: m.to_string(),
                seeds: seeds.len(),
                success_mean: mean(&success),
                success_std: std_dev(&success),
                plan_length_mean: mean(&length),
                plan_length_std: std_dev(&length),
                relative_per_task: mean(&rel),
                relative_pooled: if pure_total > 0.0 { mine_total / pure_total } else { f64::NAN },
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "# relative_per_task averages slap/pure per task first; relative_pooled divides summed lengths")?;
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.method, r.seeds, r.success_mean, r.success_std, r.plan_length_mean, r.plan_length_std, r.relative_per_task, r.relative_pooled
        )?;
    }
    Ok(())
}
