//! Shortcut candidates: discovery, random-rollout pruning, relational
//! signatures and the per-shortcut MDP.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Obstacle2d};
use crate::error::{Error, Result};
use crate::graph::{NodeId, PlanningGraph};
use crate::model::{AbstractState, Atom, AtomRecord, ObjectId, ObjectType, State, StateRecord};
use crate::policy::Episodic;

/// Add/delete atoms of an abstract transition and the objects they mention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
    pub rel_objects: Vec<ObjectId>,
}

impl Signature {
    pub fn between(s_init: &AbstractState, s_term: &AbstractState) -> Self {
        let add = s_term.difference(s_init);
        let del = s_init.difference(s_term);
        let rel: BTreeSet<ObjectId> = add.iter().chain(&del).flat_map(|a| a.args.iter().cloned()).collect();
        Signature { add, del, rel_objects: rel.into_iter().collect() }
    }

    /// Objects a policy for this transition observes: the relevant objects
    /// plus every robot, in canonical order. The robot must be visible even
    /// when its atoms are unchanged, otherwise the policy cannot locate it.
    pub fn observed_objects(&self, all_objects: &[ObjectId]) -> Vec<ObjectId> {
        let mut set: BTreeSet<ObjectId> = self.rel_objects.iter().cloned().collect();
        set.extend(all_objects.iter().filter(|o| o.otype == ObjectType::Robot).cloned());
        set.into_iter().collect()
    }
}

#[derive(Clone, Debug)]
pub struct ShortcutCandidate {
    pub s_init: AbstractState,
    pub s_term: AbstractState,
    pub x0_pool: Vec<State>,
    pub add_atoms: Vec<Atom>,
    pub del_atoms: Vec<Atom>,
    pub rel_objects: Vec<ObjectId>,
    /// `rel_objects` plus robots; the projection order used by policies.
    pub observed: Vec<ObjectId>,
}

impl ShortcutCandidate {
    pub fn new(s_init: AbstractState, s_term: AbstractState, x0_pool: Vec<State>) -> Result<Self> {
        if s_init == s_term {
            return Err(Error::InvalidTask("shortcut endpoints are identical".into()));
        }
        let first = x0_pool.first().ok_or_else(|| Error::InvalidTask("empty initial-state pool".into()))?;
        let sig = Signature::between(&s_init, &s_term);
        let observed = sig.observed_objects(first.objects());
        Ok(Self { s_init, s_term, x0_pool, add_atoms: sig.add, del_atoms: sig.del, rel_objects: sig.rel_objects, observed })
    }

    pub fn signature(&self) -> Signature {
        Signature { add: self.add_atoms.clone(), del: self.del_atoms.clone(), rel_objects: self.rel_objects.clone() }
    }

    pub fn name(&self) -> String {
        let fmt = |atoms: &[Atom]| atoms.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
        format!("+{{{}}} -{{{}}}", fmt(&self.add_atoms), fmt(&self.del_atoms))
    }

    pub fn obs_dim(&self) -> usize {
        self.observed.iter().map(|o| o.otype.feature_len()).sum()
    }
}

pub fn relevant_signature(c: &ShortcutCandidate) -> (Vec<Atom>, Vec<Atom>, Vec<ObjectId>) {
    (c.add_atoms.clone(), c.del_atoms.clone(), c.rel_objects.clone())
}

/// Node pairs `(u, v)` with no `u -> v` edge whose depth gap exceeds one.
pub fn skip_pairs(graph: &PlanningGraph) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for (u, nu) in graph.nodes.iter().enumerate() {
        for (v, nv) in graph.nodes.iter().enumerate() {
            if u != v && nv.depth > nu.depth + 1 && !graph.has_edge(u, v) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Collects shortcut candidates from consolidated training graphs, merging
/// pairs with identical endpoints across graphs in first-seen order.
pub fn get_shortcut_data(graphs: &[PlanningGraph]) -> Vec<ShortcutCandidate> {
    let mut order: Vec<(AbstractState, AbstractState)> = Vec::new();
    let mut pools: HashMap<(AbstractState, AbstractState), Vec<State>> = HashMap::new();
    for g in graphs {
        for (u, v) in skip_pairs(g) {
            let key = (g.nodes[u].abstract_state.clone(), g.nodes[v].abstract_state.clone());
            let pool = pools.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                Vec::new()
            });
            for e in &g.nodes[u].concrete {
                if !pool.contains(&e.state) {
                    pool.push(e.state.clone());
                }
            }
        }
    }
    let connected = |a: &AbstractState, b: &AbstractState| {
        graphs.iter().any(|g| match (g.node_id(a), g.node_id(b)) {
            (Some(u), Some(v)) => g.has_edge(u, v),
            _ => false,
        })
    };
    order
        .into_iter()
        .filter(|(a, b)| !connected(a, b))
        .filter_map(|key| {
            let pool = pools.remove(&key).unwrap_or_default();
            ShortcutCandidate::new(key.0, key.1, pool).ok()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneResult {
    pub keep: bool,
    pub successes: usize,
}

/// Uniform-random-action rollouts from the candidate's pool. All `n`
/// episodes run, so `successes` is valid for any threshold.
pub fn prune_random_rollouts(env: &Obstacle2d, c: &ShortcutCandidate, n: usize, t: usize, k: usize, seed: u64) -> PruneResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_max = env.config().a_max;
    let mut successes = 0;
    if !c.x0_pool.is_empty() {
        for ep in 0..n {
            let mut x = c.x0_pool[ep % c.x0_pool.len()].clone();
            for _ in 0..t {
                let a = Action::new(rng.random_range(-a_max..=a_max), rng.random_range(-a_max..=a_max), rng.random_range(-1.0..=1.0));
                x = env.step(&x, a);
                if env.abstract_state(&x) == c.s_term {
                    successes += 1;
                    break;
                }
            }
        }
    }
    PruneResult { keep: successes >= k, successes }
}

/// Concatenated features of `objects`, looked up by name in `state`.
pub fn project(state: &State, objects: &[ObjectId]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for o in objects {
        let i = state
            .index_of(&o.name)
            .filter(|&i| state.object(i).otype == o.otype)
            .ok_or_else(|| Error::Substitution(format!("object {} missing from state", o.name)))?;
        out.extend_from_slice(state.features(i));
    }
    Ok(out)
}

/// Type-preserving injection from a trained shortcut's objects into a new
/// candidate's objects. Unmapped objects (robots) map to themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Substitution {
    pub pairs: Vec<(ObjectId, ObjectId)>,
}

impl Substitution {
    pub fn map(&self, o: &ObjectId) -> ObjectId {
        self.pairs.iter().find(|(a, _)| a == o).map(|(_, b)| b.clone()).unwrap_or_else(|| o.clone())
    }

    pub fn map_atom(&self, a: &Atom) -> Atom {
        Atom { predicate: a.predicate.clone(), args: a.args.iter().map(|o| self.map(o)).collect() }
    }

    pub fn map_objects(&self, objs: &[ObjectId]) -> Vec<ObjectId> {
        objs.iter().map(|o| self.map(o)).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.pairs.iter().all(|(a, b)| a == b)
    }
}

/// True when `sigma` carries both of `train`'s atom sets into `eval`'s.
pub fn containment_holds(sigma: &Substitution, train: &Signature, eval: &Signature) -> bool {
    let within = |atoms: &[Atom], into: &[Atom]| atoms.iter().all(|a| into.contains(&sigma.map_atom(a)));
    within(&train.add, &eval.add) && within(&train.del, &eval.del)
}

/// First substitution in canonical enumeration order satisfying the
/// containment conditions, if any.
pub fn match_substitution(train: &Signature, eval: &Signature) -> Option<Substitution> {
    fn search(i: usize, train: &Signature, eval: &Signature, used: &mut Vec<bool>, sigma: &mut Substitution) -> bool {
        if i == train.rel_objects.len() {
            return containment_holds(sigma, train, eval);
        }
        let src = &train.rel_objects[i];
        for (j, dst) in eval.rel_objects.iter().enumerate() {
            if used[j] || dst.otype != src.otype || (src.otype == ObjectType::Robot && dst != src) {
                continue;
            }
            used[j] = true;
            sigma.pairs.push((src.clone(), dst.clone()));
            if search(i + 1, train, eval, used, sigma) {
                return true;
            }
            sigma.pairs.pop();
            used[j] = false;
        }
        false
    }
    let mut sigma = Substitution::default();
    let mut used = vec![false; eval.rel_objects.len()];
    search(0, train, eval, &mut used, &mut sigma).then_some(sigma)
}

/// Episodic task of reaching `s_term` from the candidate's pool with a
/// reward of -1 per step.
#[derive(Clone, Debug)]
pub struct ShortcutMdp {
    pub env: Obstacle2d,
    pub candidate: ShortcutCandidate,
    pub t_max: usize,
    /// Objects whose features form the observation.
    pub observed: Vec<ObjectId>,
}

pub fn create_mdp(env: &Obstacle2d, c: ShortcutCandidate, t_max: usize) -> ShortcutMdp {
    let observed = c.observed.clone();
    ShortcutMdp { env: env.clone(), candidate: c, t_max, observed }
}

impl ShortcutMdp {
    /// Observe every object of the task instead of the projection.
    pub fn with_full_observation(mut self) -> Self {
        let mut all = self.candidate.x0_pool[0].objects().to_vec();
        all.sort();
        self.observed = all;
        self
    }
}

/// Maps a normalized policy action in `[-1, 1]^3` to a simulator action.
pub fn denormalize(env: &Obstacle2d, a: &[f64]) -> Action {
    let a_max = env.config().a_max;
    Action::new(a[0].clamp(-1.0, 1.0) * a_max, a[1].clamp(-1.0, 1.0) * a_max, a[2].clamp(-1.0, 1.0))
}

pub const ACT_DIM: usize = 3;

impl Episodic for ShortcutMdp {
    type State = State;

    fn obs_dim(&self) -> usize {
        self.observed.iter().map(|o| o.otype.feature_len()).sum()
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn max_steps(&self) -> usize {
        self.t_max
    }

    fn reset(&self, _episode: usize, rng: &mut ChaCha8Rng) -> State {
        let pool = &self.candidate.x0_pool;
        pool[rng.random_range(0..pool.len())].clone()
    }

    fn observe(&self, s: &State) -> Vec<f64> {
        project(s, &self.observed).expect("pool states contain every observed object")
    }

    fn step(&self, s: &State, action: &[f64]) -> (State, f64, bool) {
        let next = self.env.step(s, denormalize(&self.env, action));
        let done = self.env.abstract_state(&next) == self.candidate.s_term;
        (next, -1.0, done)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: usize,
    pub s_init: Vec<AtomRecord>,
    pub s_term: Vec<AtomRecord>,
    pub add: Vec<AtomRecord>,
    pub del: Vec<AtomRecord>,
    pub rel_objects: Vec<String>,
    pub pool_size: usize,
    pub successes: usize,
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub kept: bool,
    pub pool: Vec<StateRecord>,
}

impl LedgerEntry {
    pub fn new(id: usize, c: &ShortcutCandidate, pr: PruneResult, n: usize, t: usize, k: usize) -> Self {
        let recs = |atoms: &[Atom]| atoms.iter().map(Atom::to_record).collect();
        LedgerEntry {
            id,
            s_init: c.s_init.to_records(),
            s_term: c.s_term.to_records(),
            add: recs(&c.add_atoms),
            del: recs(&c.del_atoms),
            rel_objects: c.rel_objects.iter().map(|o| o.name.to_string()).collect(),
            pool_size: c.x0_pool.len(),
            successes: pr.successes,
            n,
            t,
            k,
            kept: pr.keep,
            pool: c.x0_pool.iter().map(State::to_record).collect(),
        }
    }

    pub fn candidate(&self) -> Result<ShortcutCandidate> {
        let pool = self.pool.iter().map(State::from_record).collect::<Result<Vec<_>>>()?;
        let objects = pool.first().ok_or_else(|| Error::Format("ledger entry with empty pool".into()))?.objects().to_vec();
        let atoms = |recs: &[AtomRecord]| -> Result<AbstractState> {
            Ok(AbstractState::from_atoms(recs.iter().map(|r| Atom::from_record(r, &objects)).collect::<Result<Vec<_>>>()?))
        };
        ShortcutCandidate::new(atoms(&self.s_init)?, atoms(&self.s_term)?, pool)
    }
}

pub fn write_ledger<W: Write>(mut out: W, entries: &[LedgerEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ledger(text: &str) -> Result<Vec<LedgerEntry>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeLabel;

    fn obj(name: &str, t: ObjectType) -> ObjectId {
        ObjectId::new(name, t)
    }

    fn atom(p: &str, args: &[&ObjectId]) -> Atom {
        Atom::new(p, args.iter().map(|o| (*o).clone()).collect())
    }

    fn robot_state(x: f64) -> State {
        State::new(vec![(obj("robot", ObjectType::Robot), vec![x, 0.5, 1.0])], None).unwrap()
    }

    #[test]
    fn linear_graph_gives_single_candidate() {
        let s = |n: &str| AbstractState::from_atoms(vec![Atom::new(n, vec![])]);
        let mut g = PlanningGraph::new(s("a"), robot_state(0.1));
        let b = g.add_node(s("b"), 1);
        let c = g.add_node(s("c"), 2);
        let lbl = EdgeLabel::Shortcut { policy: 0, name: "x".into() };
        g.add_edge(0, b, lbl.clone());
        g.add_edge(b, c, lbl);
        let cands = get_shortcut_data(&[g.clone()]);
        assert_eq!(cands.len(), 1);
        assert_eq!((&cands[0].s_init, &cands[0].s_term), (&s("a"), &s("c")));
        assert_eq!(cands[0].x0_pool.len(), 1);
        g.add_edge(0, c, EdgeLabel::Shortcut { policy: 1, name: "y".into() });
        assert!(get_shortcut_data(&[g]).is_empty());
    }

    #[test]
    fn signature_set_differences() {
        let a = obj("a", ObjectType::Block);
        let r = obj("robot", ObjectType::Robot);
        let q = atom("q", &[&r]);
        let pa = atom("p", &[&a]);
        let term = AbstractState::from_atoms(vec![q.clone()]);
        let init = AbstractState::from_atoms(vec![q, pa.clone()]);
        let sig = Signature::between(&init, &term);
        assert!(sig.add.is_empty());
        assert_eq!(sig.del, vec![pa]);
        assert_eq!(sig.rel_objects, vec![a.clone()]);
        assert_eq!(sig.observed_objects(&[a.clone(), r.clone()]), vec![a, r]);
    }

    #[test]
    fn substitution_renames_single_object() {
        let a = obj("A", ObjectType::Block);
        let b = obj("B", ObjectType::Block);
        let train = Signature { add: vec![atom("p", &[&a])], del: vec![], rel_objects: vec![a.clone()] };
        let eval = Signature { add: vec![atom("p", &[&b]), atom("q", &[&b])], del: vec![], rel_objects: vec![b.clone()] };
        let sigma = match_substitution(&train, &eval).unwrap();
        assert_eq!(sigma.pairs, vec![(a.clone(), b)]);
        assert!(match_substitution(&train, &train).unwrap().is_identity());
        let robot = obj("robot", ObjectType::Robot);
        let wrong = Signature { add: vec![atom("p", &[&robot])], del: vec![], rel_objects: vec![robot] };
        assert!(match_substitution(&train, &wrong).is_none());
    }

    #[test]
    fn projection_uses_canonical_names() {
        let s = State::new(
            vec![
                (obj("robot", ObjectType::Robot), vec![0.1, 0.2, 1.0]),
                (obj("b", ObjectType::Block), vec![0.3, 0.1, 0.0, 0.0]),
            ],
            None,
        )
        .unwrap();
        let p = project(&s, &[obj("b", ObjectType::Block), obj("robot", ObjectType::Robot)]).unwrap();
        assert_eq!(p, vec![0.3, 0.1, 0.0, 0.0, 0.1, 0.2, 1.0]);
        assert!(matches!(project(&s, &[obj("zz", ObjectType::Block)]), Err(Error::Substitution(_))));
    }
}
