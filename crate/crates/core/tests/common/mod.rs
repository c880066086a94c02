//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance suite. Nothing here calls the
//! code it checks except to build inputs and read outputs.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slap_core::env::lifted_operators;
use slap_core::graph::{build_top_level, ground_all, shortest_plan, EdgeLabel, PlanningGraph};
use slap_core::model::{AbstractState, Atom, Goal, ObjectId, ObjectType, ParamType, State};
use slap_core::policy::{ppo_loss, ppo_loss_and_grad, random_samples, LossWeights, PolicyParams};
use slap_core::shortcut::{match_substitution, project, Signature};
use slap_core::Error;

// ---------------------------------------------------------------------------
// Top-level search

/// Atoms as plain strings, so the oracle shares no types with the planner.
type SAtom = (String, Vec<String>);
type SState = BTreeSet<SAtom>;

fn satom(a: &Atom) -> SAtom {
    (a.predicate.to_string(), a.args.iter().map(|o| o.name.to_string()).collect())
}

fn sstate(s: &AbstractState) -> SState {
    s.atoms().iter().map(satom).collect()
}

fn type_ok(p: ParamType, o: ObjectType) -> bool {
    matches!(
        (p, o),
        (ParamType::Robot, ObjectType::Robot)
            | (ParamType::Block, ObjectType::Block)
            | (ParamType::Region, ObjectType::Region)
            | (ParamType::Table, ObjectType::Table)
            | (ParamType::Surface, ObjectType::Region)
            | (ParamType::Surface, ObjectType::Table)
    )
}

struct SOp {
    pre: Vec<SAtom>,
    add: Vec<SAtom>,
    del: Vec<SAtom>,
}

/// Every injective, well-typed grounding, built by trying all tuples.
fn brute_ground(objects: &[ObjectId]) -> Vec<SOp> {
    let mut out = Vec::new();
    for op in lifted_operators() {
        let k = op.params.len();
        let n = objects.len();
        let total = n.pow(k as u32);
        for code in 0..total {
            let idx: Vec<usize> = (0..k).map(|i| (code / n.pow(i as u32)) % n).collect();
            let distinct = idx.iter().collect::<BTreeSet<_>>().len() == k;
            if !distinct || !op.params.iter().zip(&idx).all(|((_, t), &i)| type_ok(*t, objects[i].otype)) {
                continue;
            }
            let g = |atoms: &[slap_core::env::LiftedAtom]| -> Vec<SAtom> {
                atoms.iter().map(|a| (a.predicate.clone(), a.args.iter().map(|&j| objects[idx[j]].name.to_string()).collect())).collect()
            };
            out.push(SOp { pre: g(&op.pre), add: g(&op.add), del: g(&op.del) });
        }
    }
    out
}

/// Abstract states within the first goal depth, by exhaustive forward
/// search over the whole reachable space. `None` when no goal is reachable.
pub fn brute_force_top_level(objects: &[ObjectId], root: &AbstractState, goal: &Goal) -> Option<BTreeSet<SState>> {
    let ops = brute_ground(objects);
    let goal: Vec<SAtom> = goal.atoms().iter().map(satom).collect();
    let mut dist: HashMap<SState, usize> = HashMap::new();
    let root = sstate(root);
    dist.insert(root.clone(), 0);
    let mut queue = VecDeque::from([root]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        for op in &ops {
            if !op.pre.iter().all(|a| s.contains(a)) {
                continue;
            }
            let mut t = s.clone();
            for a in &op.del {
                t.remove(a);
            }
            t.extend(op.add.iter().cloned());
            if !dist.contains_key(&t) {
                dist.insert(t.clone(), d + 1);
                queue.push_back(t);
            }
        }
    }
    let depth = dist.iter().filter(|(s, _)| goal.iter().all(|a| s.contains(a))).map(|(_, &d)| d).min()?;
    Some(dist.into_iter().filter(|(_, d)| *d <= depth).map(|(s, _)| s).collect())
}

pub fn planner_top_level(objects: &[ObjectId], root: &AbstractState, goal: &Goal) -> Option<BTreeSet<SState>> {
    let x0 = dummy_state(objects.len() as f64);
    match build_top_level(root.clone(), x0, goal, &ground_all(&lifted_operators(), objects)) {
        Ok(g) => Some(g.nodes.iter().map(|n| sstate(&n.abstract_state)).collect()),
        Err(Error::Unsolvable(_)) => None,
        Err(e) => panic!("unexpected error {e}"),
    }
}

pub fn symbolic_objects(blocks: usize) -> Vec<ObjectId> {
    let mut o = vec![
        ObjectId::new("robot", ObjectType::Robot),
        ObjectId::new("table", ObjectType::Table),
        ObjectId::new("region", ObjectType::Region),
    ];
    for i in 0..blocks {
        o.push(ObjectId::new(&format!("b{i}"), ObjectType::Block));
    }
    o
}

/// A random symbolic task with 1 to 3 blocks: at most one block in the
/// region, possibly one block in hand, and a goal naming a random block.
pub fn random_symbolic_task(rng: &mut ChaCha8Rng) -> (Vec<ObjectId>, AbstractState, Goal) {
    let n = rng.random_range(1..=3);
    let objects = symbolic_objects(n);
    let (robot, table, region) = (objects[0].clone(), objects[1].clone(), objects[2].clone());
    let blocks: Vec<ObjectId> = objects[3..].to_vec();
    let held = if rng.random_bool(0.25) { Some(rng.random_range(0..n)) } else { None };
    let in_region = if rng.random_bool(0.6) { Some(rng.random_range(0..n)).filter(|&b| Some(b) != held) } else { None };
    let mut atoms = Vec::new();
    match held {
        Some(b) => atoms.push(Atom::new("Holding", vec![robot.clone(), blocks[b].clone()])),
        None => atoms.push(Atom::new("GripperEmpty", vec![robot.clone()])),
    }
    for (i, b) in blocks.iter().enumerate() {
        if Some(i) != held {
            atoms.push(Atom::new("On", vec![b.clone(), table.clone()]));
        }
    }
    match in_region {
        Some(b) => atoms.push(Atom::new("Overlap", vec![blocks[b].clone(), region.clone()])),
        None => atoms.push(Atom::new("Clear", vec![region.clone()])),
    }
    let g = blocks[rng.random_range(0..n)].clone();
    let goal = Goal::new(vec![Atom::new("Overlap", vec![g.clone(), region]), Atom::new("On", vec![g, table])]);
    (objects, AbstractState::from_atoms(atoms), goal)
}

// ---------------------------------------------------------------------------
// Path-dependent shortest paths

pub fn dummy_state(tag: f64) -> State {
    State::new(vec![(ObjectId::new("robot", ObjectType::Robot), vec![tag, 0.0, 1.0])], None).unwrap()
}

fn node_state(i: usize) -> AbstractState {
    AbstractState::from_atoms(vec![Atom::new(&format!("N{i}"), vec![])])
}

/// A random DAG of at most 12 nodes whose edges carry a separate cost for
/// every concrete entry of their source node.
pub fn random_graph(rng: &mut ChaCha8Rng) -> PlanningGraph {
    let n = rng.random_range(2..=12);
    let mut g = PlanningGraph::new(node_state(0), dummy_state(0.0));
    for i in 1..n {
        g.add_node(node_state(i), i);
    }
    let mut tag = 1.0;
    let mut entries = vec![1usize; n];
    for (i, e) in entries.iter_mut().enumerate().skip(1) {
        *e = rng.random_range(1..=3);
        for _ in 0..*e {
            g.add_entry(i, dummy_state(tag), 0);
            tag += 1.0;
        }
    }
    for u in 0..n {
        for v in u + 1..n {
            if !rng.random_bool(0.35) {
                continue;
            }
            let eid = g.add_edge(u, v, EdgeLabel::Shortcut { policy: 0, name: format!("{u}->{v}") });
            for from in 0..entries[u] {
                if rng.random_bool(0.8) {
                    let to = rng.random_range(0..entries[v]);
                    g.add_transition(eid, from, to, rng.random_range(1..=20), Vec::new());
                }
            }
        }
    }
    let goals = rng.random_range(1..=2.min(n - 1));
    let mut ids: Vec<usize> = (1..n).collect();
    ids.shuffle(rng);
    g.goal_nodes = ids[..goals].to_vec();
    g
}

/// Cheapest cost over every path from the root entry to a goal node.
pub fn enumerate_min_cost(g: &PlanningGraph) -> Option<u64> {
    fn walk(g: &PlanningGraph, node: usize, entry: usize, cost: u64, best: &mut Option<u64>) {
        if g.goal_nodes.contains(&node) {
            *best = Some(best.map_or(cost, |b| b.min(cost)));
        }
        for e in g.edges.iter().filter(|e| e.source == node) {
            for t in e.transitions.iter().filter(|t| t.from == entry) {
                walk(g, e.target, t.to, cost + t.cost, best);
            }
        }
    }
    let mut best = None;
    walk(g, g.root, 0, 0, &mut best);
    best
}

pub fn dijkstra_cost(g: &PlanningGraph) -> Option<u64> {
    match shortest_plan(g) {
        Ok(p) => Some(p.total_cost),
        Err(Error::NoPlan) => None,
        Err(e) => panic!("unexpected error {e}"),
    }
}

// ---------------------------------------------------------------------------
// Gradients

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely; central differences
/// carry round-off of roughly `1e-16 * |loss| / FD_STEP`.
pub const FD_FLOOR: f64 = 1e-5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest relative error between the analytic gradient and central
/// differences on one random batch, for each loss term separately and for
/// their sum.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = rng.random_range(1..=5);
    let hidden = rng.random_range(2..=8);
    let mut p = PolicyParams::init(obs, 3, hidden, &[rng.random_range(-1.0..0.5)], &mut rng);
    for t in &mut p.theta {
        *t += rng.random_range(-0.5..0.5);
    }
    let samples = random_samples(&p, rng.random_range(1..=8), &mut rng);
    let clip = 0.2;
    let weightings = [
        LossWeights { policy: 1.0, value: 0.0, entropy: 0.0 },
        LossWeights { policy: 0.0, value: 1.0, entropy: 0.0 },
        LossWeights { policy: 0.0, value: 0.0, entropy: 1.0 },
        LossWeights { policy: 1.0, value: 0.5, entropy: 0.01 },
    ];
    let mut worst: f64 = 0.0;
    #[allow(clippy::needless_range_loop)]
    for w in weightings {
        let (_, grad) = ppo_loss_and_grad(&p, &samples, clip, w);
        for i in 0..p.theta.len() {
            let mut q = p.clone();
            q.theta[i] = p.theta[i] + FD_STEP;
            let up = ppo_loss(&q, &samples, clip, w).total;
            q.theta[i] = p.theta[i] - FD_STEP;
            let down = ppo_loss(&q, &samples, clip, w).total;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad[i], fd));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Projection and substitution

/// A state with random features over `objects`.
pub fn random_state(objects: &[ObjectId], rng: &mut ChaCha8Rng) -> State {
    State::new(
        objects.iter().map(|o| (o.clone(), (0..o.otype.feature_len()).map(|_| rng.random_range(-1.0..1.0)).collect())).collect(),
        None,
    )
    .unwrap()
}

/// Perturbs every object outside `keep` and checks the projection onto
/// `keep` is bit-identical before and after.
pub fn projection_invariance_case(rng: &mut ChaCha8Rng) -> bool {
    let blocks = rng.random_range(1..=5);
    let mut objects = symbolic_objects(blocks);
    objects.shuffle(rng);
    let x = random_state(&objects, rng);
    let keep: Vec<ObjectId> = objects.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
    let mut y = random_state(&objects, rng);
    // Copy the kept objects' features so only the others differ.
    let mut feats: Vec<(ObjectId, Vec<f64>)> = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        let src = if keep.contains(o) { &x } else { &y };
        feats.push((o.clone(), src.features(i).to_vec()));
    }
    y = State::new(feats, None).unwrap();
    project(&x, &keep).unwrap() == project(&y, &keep).unwrap()
}

fn random_atoms(objs: &[ObjectId], rng: &mut ChaCha8Rng, count: usize) -> Vec<Atom> {
    let by = |t: ObjectType| objs.iter().filter(|o| o.otype == t).cloned().collect::<Vec<_>>();
    let (robots, blocks, regions, tables) = (by(ObjectType::Robot), by(ObjectType::Block), by(ObjectType::Region), by(ObjectType::Table));
    fn pick(v: &[ObjectId], rng: &mut ChaCha8Rng) -> Option<ObjectId> {
        v.choose(rng).cloned()
    }
    let mut out = BTreeSet::new();
    for _ in 0..count * 4 {
        if out.len() >= count {
            break;
        }
        let atom = match rng.random_range(0..5) {
            0 => pick(&robots, rng).map(|r| Atom::new("GripperEmpty", vec![r])),
            1 => pick(&robots, rng).zip(pick(&blocks, rng)).map(|(r, b)| Atom::new("Holding", vec![r, b])),
            2 => pick(&blocks, rng).zip(pick(&tables, rng)).map(|(b, t)| Atom::new("On", vec![b, t])),
            3 => pick(&blocks, rng).zip(pick(&regions, rng)).map(|(b, g)| Atom::new("Overlap", vec![b, g])),
            _ => pick(&regions, rng).map(|g| Atom::new("Clear", vec![g])),
        };
        out.extend(atom);
    }
    out.into_iter().collect()
}

fn signature_of(add: Vec<Atom>, del: Vec<Atom>) -> Signature {
    let rel: BTreeSet<ObjectId> = add.iter().chain(&del).flat_map(|a| a.args.iter().cloned()).collect();
    Signature { add, del, rel_objects: rel.into_iter().collect() }
}

/// Objects for substitution cases: one robot and a mix of the other types.
fn pool(prefix: &str, rng: &mut ChaCha8Rng) -> Vec<ObjectId> {
    let mut o = vec![ObjectId::new("robot", ObjectType::Robot)];
    for i in 0..rng.random_range(1..=3) {
        o.push(ObjectId::new(&format!("{prefix}b{i}"), ObjectType::Block));
    }
    o.push(ObjectId::new(&format!("{prefix}g"), ObjectType::Region));
    o.push(ObjectId::new(&format!("{prefix}t"), ObjectType::Table));
    o
}

/// A training signature with at most five relevant objects and an
/// evaluation signature that, half the time, embeds a renamed copy of it.
pub fn random_signature_pair(rng: &mut ChaCha8Rng) -> (Signature, Signature) {
    let train = loop {
        let objs = pool("x", rng);
        let (na, nd) = (rng.random_range(1..=3), rng.random_range(0..=3));
        let s = signature_of(random_atoms(&objs, rng, na), random_atoms(&objs, rng, nd));
        if (1..=5).contains(&s.rel_objects.len()) {
            break s;
        }
    };
    let eval_objs = pool("y", rng);
    let (na, nd) = (rng.random_range(0..=3), rng.random_range(0..=3));
    let mut add = random_atoms(&eval_objs, rng, na);
    let mut del = random_atoms(&eval_objs, rng, nd);
    if rng.random_bool(0.5) {
        // Rename train objects into eval objects of the same type at random.
        let mut rename: HashMap<ObjectId, ObjectId> = HashMap::new();
        let mut free = eval_objs.clone();
        for o in &train.rel_objects {
            let choices: Vec<usize> = (0..free.len()).filter(|&j| free[j].otype == o.otype).collect();
            if let Some(&j) = choices.choose(rng) {
                rename.insert(o.clone(), free.remove(j));
            }
        }
        let map = |a: &Atom| Atom::new(&a.predicate, a.args.iter().map(|o| rename.get(o).cloned().unwrap_or_else(|| o.clone())).collect());
        add.extend(train.add.iter().map(map));
        del.extend(train.del.iter().map(map));
    }
    add.sort();
    add.dedup();
    del.sort();
    del.dedup();
    (train, signature_of(add, del))
}

/// Every type-preserving injection from `train`'s relevant objects into
/// `eval`'s that fixes robots and carries both atom sets inside, found by
/// enumerating all assignments.
pub fn all_valid_substitutions(train: &Signature, eval: &Signature) -> Vec<Vec<(String, String)>> {
    let src = &train.rel_objects;
    let dst = &eval.rel_objects;
    let mut out = Vec::new();
    if dst.is_empty() && !src.is_empty() {
        return out;
    }
    let n = dst.len().max(1);
    let total = n.pow(src.len() as u32);
    for code in 0..total {
        let idx: Vec<usize> = (0..src.len()).map(|i| (code / n.pow(i as u32)) % n).collect();
        if idx.iter().collect::<BTreeSet<_>>().len() != idx.len() {
            continue;
        }
        let ok = src.iter().zip(&idx).all(|(s, &j)| s.otype == dst[j].otype && (s.otype != ObjectType::Robot || s.name == dst[j].name));
        if !ok {
            continue;
        }
        let map: HashMap<String, String> = src.iter().zip(&idx).map(|(s, &j)| (s.name.to_string(), dst[j].name.to_string())).collect();
        let mapped = |a: &Atom| -> SAtom { (a.predicate.to_string(), a.args.iter().map(|o| map[&*o.name].clone()).collect()) };
        let add: BTreeSet<SAtom> = eval.add.iter().map(satom).collect();
        let del: BTreeSet<SAtom> = eval.del.iter().map(satom).collect();
        if train.add.iter().all(|a| add.contains(&mapped(a))) && train.del.iter().all(|a| del.contains(&mapped(a))) {
            let mut pairs: Vec<(String, String)> = map.into_iter().collect();
            pairs.sort();
            out.push(pairs);
        }
    }
    out
}

/// Checks `match_substitution` on one pair against the exhaustive oracle:
/// a returned σ must be one of the oracle's valid maps, and `None` must
/// mean the oracle found none.
pub fn substitution_case(train: &Signature, eval: &Signature) -> Result<bool, String> {
    let valid = all_valid_substitutions(train, eval);
    match match_substitution(train, eval) {
        Some(sigma) => {
            let mut pairs: Vec<(String, String)> = sigma.pairs.iter().map(|(a, b)| (a.name.to_string(), b.name.to_string())).collect();
            pairs.sort();
            let types_ok = sigma.pairs.iter().all(|(a, b)| a.otype == b.otype);
            if types_ok && valid.contains(&pairs) {
                Ok(true)
            } else {
                Err(format!("returned σ {pairs:?} fails re-verification"))
            }
        }
        None if valid.is_empty() => Ok(false),
        None => Err(format!("no σ returned but {} valid maps exist", valid.len())),
    }
}
