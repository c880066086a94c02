//! Bilevel abstract planning graph.
//!
//! The top level is a breadth-first expansion over grounded operators in
//! abstract-state space. The bottom level attaches concrete states to every
//! node, one per incoming path, and per-path execution costs to every edge.
//! Because an option's cost depends on the concrete state it starts from,
//! the shortest plan is found with Dijkstra over `(node, concrete state)`
//! labels rather than over nodes.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::env::{Action, LiftedOperator};
use crate::error::{Error, Result};
use crate::model::{goal_satisfied, typed_tuples, AbstractState, Atom, AtomRecord, Goal, ObjectId, State};

/// Default number of concrete states retained per node.
pub const DEFAULT_STATE_CAP: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroundedOperator {
    pub operator: Arc<LiftedOperator>,
    pub binding: Vec<ObjectId>,
    pub pre: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

impl GroundedOperator {
    pub fn new(operator: Arc<LiftedOperator>, binding: Vec<ObjectId>) -> Self {
        let pre = operator.ground_atoms(&operator.pre, &binding);
        let add = operator.ground_atoms(&operator.add, &binding);
        let del = operator.ground_atoms(&operator.del, &binding);
        Self { operator, binding, pre, add, del }
    }

    pub fn applicable(&self, s: &AbstractState) -> bool {
        s.contains_all(&self.pre)
    }

    pub fn successor(&self, s: &AbstractState) -> AbstractState {
        s.apply(&self.del, &self.add)
    }
}

impl fmt::Display for GroundedOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.operator.name)?;
        for (i, o) in self.binding.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&o.name)?;
        }
        f.write_str(")")
    }
}

/// Grounds every operator with every well-typed injective binding.
pub fn ground_all(operators: &[LiftedOperator], objects: &[ObjectId]) -> Vec<GroundedOperator> {
    operators
        .iter()
        .flat_map(|op| {
            let op = Arc::new(op.clone());
            typed_tuples(objects, &op.param_types())
                .into_iter()
                .map(move |t| GroundedOperator::new(op.clone(), t.iter().map(|&i| objects[i].clone()).collect()))
        })
        .collect()
}

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeLabel {
    Operator(GroundedOperator),
    /// A learned shortcut; `policy` indexes the caller's shortcut list.
    Shortcut { policy: usize, name: String },
}

impl EdgeLabel {
    pub fn is_shortcut(&self) -> bool {
        matches!(self, EdgeLabel::Shortcut { .. })
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Operator(op) => write!(f, "{op}"),
            EdgeLabel::Shortcut { name, .. } => write!(f, "Shortcut[{name}]"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConcreteEntry {
    pub state: State,
    pub path: usize,
    /// Cheapest known execution cost from the root to this state.
    pub cost: u64,
}

#[derive(Clone, Debug)]
pub struct Transition {
    /// Index into the source node's concrete entries.
    pub from: usize,
    /// Index into the target node's concrete entries.
    pub to: usize,
    pub cost: u64,
    pub trajectory: Vec<(State, Action)>,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub label: EdgeLabel,
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug)]
pub struct NodeRecord {
    pub abstract_state: AbstractState,
    pub depth: usize,
    pub concrete: Vec<ConcreteEntry>,
}

#[derive(Clone, Debug)]
pub struct PlanningGraph {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<Edge>,
    pub root: NodeId,
    pub goal_nodes: Vec<NodeId>,
    pub state_cap: usize,
    /// Number of nodes whose concrete states were truncated to `state_cap`.
    pub capped_nodes: usize,
    index: HashMap<AbstractState, NodeId>,
    next_path: usize,
}

/// Runs an edge's behaviour from a concrete state. Returns the executed
/// trajectory and final state when `target` is reached.
pub trait EdgeExecutor {
    fn execute(&self, state: &State, label: &EdgeLabel, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)>;
}

impl<F> EdgeExecutor for F
where
    F: Fn(&State, &EdgeLabel, &AbstractState) -> Option<(Vec<(State, Action)>, State)>,
{
    fn execute(&self, state: &State, label: &EdgeLabel, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)> {
        self(state, label, target)
    }
}

impl PlanningGraph {
    /// A graph holding only the root node with `x0` as its single concrete state.
    pub fn new(root: AbstractState, x0: State) -> Self {
        let mut g = PlanningGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            root: 0,
            goal_nodes: Vec::new(),
            state_cap: DEFAULT_STATE_CAP,
            capped_nodes: 0,
            index: HashMap::new(),
            next_path: 0,
        };
        g.add_node(root, 0);
        g.add_entry(0, x0, 0);
        g
    }

    pub fn add_node(&mut self, s: AbstractState, depth: usize) -> NodeId {
        if let Some(&id) = self.index.get(&s) {
            return id;
        }
        let id = self.nodes.len();
        self.index.insert(s.clone(), id);
        self.nodes.push(NodeRecord { abstract_state: s, depth, concrete: Vec::new() });
        id
    }

    pub fn node_id(&self, s: &AbstractState) -> Option<NodeId> {
        self.index.get(s).copied()
    }

    pub fn add_edge(&mut self, source: NodeId, target: NodeId, label: EdgeLabel) -> EdgeId {
        self.edges.push(Edge { source, target, label, transitions: Vec::new() });
        self.edges.len() - 1
    }

    pub fn has_edge(&self, source: NodeId, target: NodeId) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }

    pub fn has_operator_edge(&self, source: NodeId, target: NodeId) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target && !e.label.is_shortcut())
    }

    /// Adds (or reuses, if bit-identical) a concrete state at `node`.
    pub fn add_entry(&mut self, node: NodeId, state: State, cost: u64) -> usize {
        let entries = &mut self.nodes[node].concrete;
        if let Some(i) = entries.iter().position(|e| e.state == state) {
            entries[i].cost = entries[i].cost.min(cost);
            return i;
        }
        entries.push(ConcreteEntry { state, path: self.next_path, cost });
        self.next_path += 1;
        entries.len() - 1
    }

    pub fn add_transition(&mut self, edge: EdgeId, from: usize, to: usize, cost: u64, trajectory: Vec<(State, Action)>) {
        self.edges[edge].transitions.push(Transition { from, to, cost, trajectory });
    }

    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.source == node)
    }

    pub fn shortcut_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.label.is_shortcut()).count()
    }

    /// The same graph without shortcut edges. Concrete states are kept, so
    /// call this before consolidation.
    pub fn without_shortcuts(&self) -> PlanningGraph {
        let mut g = self.clone();
        g.edges.retain(|e| !e.label.is_shortcut());
        g
    }

    pub fn to_dump(&self) -> GraphDump {
        GraphDump {
            root: self.root,
            goal_nodes: self.goal_nodes.clone(),
            state_cap: self.state_cap,
            capped_nodes: self.capped_nodes,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeDump { id, depth: n.depth, atoms: n.abstract_state.to_records(), concrete_states: n.concrete.len() })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDump {
                    source: e.source,
                    target: e.target,
                    label: e.label.to_string(),
                    shortcut: e.label.is_shortcut(),
                    costs: e
                        .transitions
                        .iter()
                        .map(|t| PathCost { from_path: self.nodes[e.source].concrete[t.from].path, cost: t.cost })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphDump {
    pub root: NodeId,
    pub goal_nodes: Vec<NodeId>,
    pub state_cap: usize,
    pub capped_nodes: usize,
    pub nodes: Vec<NodeDump>,
    pub edges: Vec<EdgeDump>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeDump {
    pub id: NodeId,
    pub depth: usize,
    pub atoms: Vec<AtomRecord>,
    pub concrete_states: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeDump {
    pub source: NodeId,
    pub target: NodeId,
    pub label: String,
    pub shortcut: bool,
    pub costs: Vec<PathCost>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathCost {
    pub from_path: usize,
    pub cost: u64,
}

/// Breadth-first expansion of the abstract state space from the root,
/// stopping once the first depth containing a goal node is complete.
pub fn build_top_level(root: AbstractState, x0: State, goal: &Goal, grounded: &[GroundedOperator]) -> Result<PlanningGraph> {
    let mut g = PlanningGraph::new(root, x0);
    if goal_satisfied(&g.nodes[0].abstract_state, goal) {
        g.goal_nodes = vec![0];
        return Ok(g);
    }
    let mut frontier = vec![0];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &u in &frontier {
            for op in grounded {
                let s = &g.nodes[u].abstract_state;
                if !op.applicable(s) {
                    continue;
                }
                let succ = op.successor(s);
                let v = match g.node_id(&succ) {
                    Some(v) => v,
                    None => {
                        let v = g.add_node(succ, depth + 1);
                        next.push(v);
                        v
                    }
                };
                g.add_edge(u, v, EdgeLabel::Operator(op.clone()));
            }
        }
        let goals: Vec<NodeId> = next.iter().copied().filter(|&v| goal_satisfied(&g.nodes[v].abstract_state, goal)).collect();
        if !goals.is_empty() {
            g.goal_nodes = goals;
            return Ok(g);
        }
        if next.is_empty() {
            return Err(Error::Unsolvable(format!("abstract search exhausted at depth {depth} without reaching the goal")));
        }
        frontier = next;
        depth += 1;
    }
}

/// Validates the top level from the root's concrete state.
///
/// Nodes are visited in depth order. Every edge into a strictly deeper node
/// is simulated from each concrete state of its source; successful runs add
/// concrete states (and per-path costs) to the target. Edges that never
/// succeed and nodes that end up with no concrete state are removed.
pub fn consolidate_bottom_level<E: EdgeExecutor + ?Sized>(mut graph: PlanningGraph, executor: &E) -> Result<PlanningGraph> {
    let mut order: Vec<NodeId> = (0..graph.nodes.len()).collect();
    order.sort_by_key(|&n| (graph.nodes[n].depth, n));
    for e in &mut graph.edges {
        e.transitions.clear();
    }
    for (id, node) in graph.nodes.iter_mut().enumerate() {
        if id != graph.root {
            node.concrete.clear();
        }
    }

    for &u in &order {
        if u != graph.root {
            truncate_entries(&mut graph, u);
        }
        if graph.nodes[u].concrete.is_empty() {
            continue;
        }
        let edges: Vec<EdgeId> = graph.outgoing(u).map(|(id, _)| id).collect();
        for eid in edges {
            let target = graph.edges[eid].target;
            if graph.nodes[target].depth <= graph.nodes[u].depth {
                continue;
            }
            let target_state = graph.nodes[target].abstract_state.clone();
            for i in 0..graph.nodes[u].concrete.len() {
                let entry = &graph.nodes[u].concrete[i];
                let (start, base) = (entry.state.clone(), entry.cost);
                if let Some((traj, fin)) = executor.execute(&start, &graph.edges[eid].label, &target_state) {
                    let cost = traj.len() as u64;
                    let j = graph.add_entry(target, fin, base + cost);
                    graph.add_transition(eid, i, j, cost, traj);
                }
            }
        }
    }
    prune_unreachable(&mut graph);
    if graph.goal_nodes.is_empty() {
        return Err(Error::Unsolvable("no goal node is reachable by executing options".into()));
    }
    Ok(graph)
}

fn truncate_entries(graph: &mut PlanningGraph, node: NodeId) {
    let cap = graph.state_cap.max(1);
    let n = graph.nodes[node].concrete.len();
    if n <= cap {
        return;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (graph.nodes[node].concrete[i].cost, i));
    idx.truncate(cap);
    idx.sort_unstable();
    let mut remap = vec![None; n];
    for (new, &old) in idx.iter().enumerate() {
        remap[old] = Some(new);
    }
    let old = std::mem::take(&mut graph.nodes[node].concrete);
    graph.nodes[node].concrete = old.into_iter().enumerate().filter(|(i, _)| remap[*i].is_some()).map(|(_, e)| e).collect();
    for e in graph.edges.iter_mut().filter(|e| e.target == node) {
        e.transitions.retain_mut(|t| match remap[t.to] {
            Some(j) => {
                t.to = j;
                true
            }
            None => false,
        });
    }
    graph.capped_nodes += 1;
}

fn prune_unreachable(graph: &mut PlanningGraph) {
    graph.edges.retain(|e| !e.transitions.is_empty());
    let keep: Vec<bool> = graph.nodes.iter().enumerate().map(|(i, n)| i == graph.root || !n.concrete.is_empty()).collect();
    let mut remap = vec![usize::MAX; graph.nodes.len()];
    let mut next = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            remap[i] = next;
            next += 1;
        }
    }
    let nodes = std::mem::take(&mut graph.nodes);
    graph.nodes = nodes.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(n, _)| n).collect();
    graph.edges.retain(|e| keep[e.source] && keep[e.target]);
    for e in &mut graph.edges {
        e.source = remap[e.source];
        e.target = remap[e.target];
    }
    graph.root = remap[graph.root];
    graph.goal_nodes = graph.goal_nodes.iter().filter(|&&g| keep[g]).map(|&g| remap[g]).collect();
    graph.index = graph.nodes.iter().enumerate().map(|(i, n)| (n.abstract_state.clone(), i)).collect();
}

#[derive(Clone, Debug)]
pub struct PlanStep {
    pub edge: EdgeId,
    pub label: EdgeLabel,
    pub source: NodeId,
    pub target: NodeId,
    pub trajectory: Vec<(State, Action)>,
}

#[derive(Clone, Debug)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub total_cost: u64,
}

impl Plan {
    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.steps.iter().flat_map(|s| s.trajectory.iter().map(|(_, a)| *a))
    }

    pub fn shortcuts_used(&self) -> usize {
        self.steps.iter().filter(|s| s.label.is_shortcut()).count()
    }
}

type Label = (NodeId, usize);
type PathKey = Vec<(EdgeId, usize)>;

/// Minimum-cost plan from the root's concrete state to any goal node.
///
/// Dijkstra over `(node, concrete entry)` labels; a node is expanded again
/// whenever it is reached in a different concrete state. Equal-cost plans
/// are ordered lexicographically by the edge insertion order along the path.
pub fn shortest_plan(graph: &PlanningGraph) -> Result<Plan> {
    if graph.nodes[graph.root].concrete.is_empty() {
        return Err(Error::NoPlan);
    }
    let is_goal = |n: NodeId| graph.goal_nodes.contains(&n);
    let mut best: HashMap<Label, (u64, PathKey)> = HashMap::new();
    let mut heap: BinaryHeap<Reverse<(u64, PathKey, NodeId, usize)>> = BinaryHeap::new();
    let start = (graph.root, 0);
    best.insert(start, (0, Vec::new()));
    heap.push(Reverse((0, Vec::new(), start.0, start.1)));
    while let Some(Reverse((cost, path, node, entry))) = heap.pop() {
        match best.get(&(node, entry)) {
            Some((c, p)) if (*c, p) < (cost, &path) => continue,
            _ => {}
        }
        if is_goal(node) {
            return Ok(materialize(graph, cost, &path));
        }
        for (eid, edge) in graph.outgoing(node) {
            for (tid, t) in edge.transitions.iter().enumerate() {
                if t.from != entry {
                    continue;
                }
                let label = (edge.target, t.to);
                let ncost = cost + t.cost;
                let mut npath = path.clone();
                npath.push((eid, tid));
                let better = match best.get(&label) {
                    None => true,
                    Some((c, p)) => (ncost, &npath) < (*c, p),
                };
                if better {
                    best.insert(label, (ncost, npath.clone()));
                    heap.push(Reverse((ncost, npath, label.0, label.1)));
                }
            }
        }
    }
    Err(Error::NoPlan)
}

fn materialize(graph: &PlanningGraph, cost: u64, path: &[(EdgeId, usize)]) -> Plan {
    let steps = path
        .iter()
        .map(|&(eid, tid)| {
            let e = &graph.edges[eid];
            PlanStep {
                edge: eid,
                label: e.label.clone(),
                source: e.source,
                target: e.target,
                trajectory: e.transitions[tid].trajectory.clone(),
            }
        })
        .collect();
    Plan { steps, total_cost: cost }
}
