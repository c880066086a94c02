//! Planning with scripted options and learned shortcuts on Obstacle 2D.

use std::sync::Arc;

use crate::env::{Action, Obstacle2d};
use crate::error::{Error, Result};
use crate::graph::{
    build_top_level, consolidate_bottom_level, ground_all, shortest_plan, EdgeLabel, GroundedOperator, Plan, PlanningGraph,
};
use crate::model::{goal_satisfied, AbstractState, Goal, ObjectId, State, Task};
use crate::policy::PolicyParams;
use crate::shortcut::{denormalize, match_substitution, project, skip_pairs, Signature};

/// A trained shortcut policy and what it was trained for.
#[derive(Clone, Debug)]
pub struct ShortcutPolicy {
    pub name: String,
    pub params: PolicyParams,
    pub signature: Signature,
    /// Observation objects in the training task.
    pub observed: Vec<ObjectId>,
    /// Goal encoding vocabulary, for goal-conditioned shared policies.
    pub vocabulary: Option<Vec<crate::model::Atom>>,
}

/// A shortcut policy bound to a node pair of a particular graph.
#[derive(Clone, Debug)]
pub struct BoundShortcut {
    pub policy: Arc<ShortcutPolicy>,
    /// Observation objects after substitution.
    pub observed: Vec<ObjectId>,
    /// Goal encoding appended to observations; empty for independent policies.
    pub encoding: Vec<f64>,
}

/// Executes graph edges in the simulator.
pub struct Executor<'a> {
    pub env: &'a Obstacle2d,
    pub bound: &'a [BoundShortcut],
    pub t_eval: usize,
}

impl Executor<'_> {
    pub fn run(&self, state: &State, label: &EdgeLabel, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)> {
        match label {
            EdgeLabel::Operator(op) => self.run_operator(state, op, target),
            EdgeLabel::Shortcut { policy, .. } => self.run_shortcut(state, &self.bound[*policy], target),
        }
    }

    fn run_operator(&self, state: &State, op: &GroundedOperator, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)> {
        let option = self.env.option(&op.operator.name)?;
        let binding = op.binding.iter().map(|o| state.index_of(&o.name)).collect::<Option<Vec<_>>>()?;
        let roll = self.env.execute_option(state, option, &binding).ok()?;
        (roll.success && &self.env.abstract_state(&roll.final_state) == target).then_some((roll.trajectory, roll.final_state))
    }

    fn run_shortcut(&self, state: &State, b: &BoundShortcut, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)> {
        let mut x = state.clone();
        let mut traj = Vec::new();
        for _ in 0..self.t_eval {
            let mut obs = project(&x, &b.observed).ok()?;
            obs.extend_from_slice(&b.encoding);
            let a = denormalize(self.env, &b.policy.params.mean_action(&obs).ok()?);
            let next = self.env.step(&x, a);
            traj.push((x, a));
            x = next;
            if &self.env.abstract_state(&x) == target {
                return Some((traj, x));
            }
        }
        None
    }
}

impl crate::graph::EdgeExecutor for Executor<'_> {
    fn execute(&self, state: &State, label: &EdgeLabel, target: &AbstractState) -> Option<(Vec<(State, Action)>, State)> {
        self.run(state, label, target)
    }
}

pub fn grounded_operators(env: &Obstacle2d, state: &State) -> Vec<GroundedOperator> {
    ground_all(&env.operators(), state.objects())
}

/// Top-level graph for `task` with its root state attached.
pub fn top_level(env: &Obstacle2d, task: &Task) -> Result<PlanningGraph> {
    let x0 = &task.initial_state;
    build_top_level(env.abstract_state(x0), x0.clone(), &task.goal, &grounded_operators(env, x0))
}

/// Top level plus consolidation with the scripted options only.
pub fn options_graph(env: &Obstacle2d, task: &Task) -> Result<PlanningGraph> {
    let top = top_level(env, task)?;
    consolidate_bottom_level(top, &Executor { env, bound: &[], t_eval: 0 })
}

/// Adds one shortcut edge for every policy whose signature embeds into a
/// skipping node pair of `top`. Returns the bindings the edge labels index.
pub fn attach_shortcuts(
    top: &mut PlanningGraph,
    policies: &[Arc<ShortcutPolicy>],
    encode: &dyn Fn(&ShortcutPolicy, &AbstractState) -> Vec<f64>,
) -> Vec<BoundShortcut> {
    let mut bound = Vec::new();
    for (u, v) in skip_pairs(top) {
        let sv = top.nodes[v].abstract_state.clone();
        let eval = Signature::between(&top.nodes[u].abstract_state, &sv);
        for p in policies {
            let Some(sigma) = match_substitution(&p.signature, &eval) else { continue };
            bound.push(BoundShortcut { policy: p.clone(), observed: sigma.map_objects(&p.observed), encoding: encode(p, &sv) });
            top.add_edge(u, v, EdgeLabel::Shortcut { policy: bound.len() - 1, name: p.name.clone() });
        }
    }
    bound
}

/// Plans from the task's initial state and replays the plan to confirm
/// that it reaches the goal in exactly `total_cost` steps.
pub fn plan_and_verify(env: &Obstacle2d, graph: &PlanningGraph, task: &Task) -> Result<Plan> {
    let plan = shortest_plan(graph)?;
    let mut x = task.initial_state.clone();
    for a in plan.actions() {
        x = env.step(&x, a);
    }
    let steps = plan.actions().count() as u64;
    if steps != plan.total_cost || !goal_satisfied(&env.abstract_state(&x), &task.goal) {
        return Err(Error::NoPlan);
    }
    Ok(plan)
}

/// The same task with a different goal.
pub fn with_goal(task: &Task, goal: Goal) -> Task {
    Task { initial_state: task.initial_state.clone(), goal, seed: task.seed }
}
