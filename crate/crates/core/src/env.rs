//! Obstacle 2D: a planar gripper, blocks resting on a bottom line, and a
//! one-block-wide target region in the middle of that line.
//!
//! Coordinates live in the unit square. The robot is described by its
//! gripper tip; its body is a small box standing on top of the tip. Blocks
//! are axis-aligned squares described by their centers. Only horizontal
//! contact is resolved: anything the robot body or the held block overlaps
//! after a move is shoved sideways.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{abstract_state, AbstractState, Atom, Goal, ObjectId, ObjectType, ParamType, Predicate, State, Task};

pub const ROBOT: &str = "robot";
pub const TABLE: &str = "table";
pub const REGION: &str = "region";
pub const TARGET: &str = "target";

const EPS: f64 = 1e-9;
/// Gap kept between a placed block and its neighbours.
const PLACE_MARGIN: f64 = 0.02;
/// Extra height used when carrying a block over others.
const CARRY_CLEARANCE: f64 = 0.02;
const SLOT_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub grip: f64,
}

impl Action {
    pub const ZERO: Action = Action { dx: 0.0, dy: 0.0, grip: 0.0 };

    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        Self { dx, dy, grip }
    }

    /// Clamps into the action box; non-finite components become zero.
    pub fn clamped(self, a_max: f64) -> Action {
        let c = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        Action { dx: c(self.dx, a_max), dy: c(self.dy, a_max), grip: c(self.grip, 1.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub block_w: f64,
    pub block_h: f64,
    pub robot_w: f64,
    pub robot_h: f64,
    pub a_max: f64,
    pub eps_grasp: f64,
    pub eps_overlap: f64,
    /// A released block whose bottom is this close to the bottom line drops onto it.
    pub snap_dist: f64,
    pub n_obstacles: usize,
    pub n_distractors: usize,
    pub option_max_steps: usize,
    /// Episode horizon for whole-task control.
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            block_w: 0.2,
            block_h: 0.2,
            robot_w: 0.1,
            robot_h: 0.1,
            a_max: 0.05,
            eps_grasp: 0.03,
            eps_overlap: 0.01,
            snap_dist: 0.05,
            n_obstacles: 1,
            n_distractors: 0,
            option_max_steps: 100,
            horizon: 100,
        }
    }
}

impl EnvConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.a_max > 0.0) {
            return bad("a_max must be positive");
        }
        if !(self.eps_grasp > 0.0) {
            return bad("eps_grasp must be positive");
        }
        if !(self.eps_overlap >= 0.0) {
            return bad("eps_overlap must be non-negative");
        }
        if !(self.block_w > 0.0 && self.block_h > 0.0 && self.block_w <= 1.0 && 2.0 * self.block_h < 1.0) {
            return bad("blocks must fit inside the workspace");
        }
        if !(self.robot_w > 0.0 && self.robot_h > 0.0) {
            return bad("robot extents must be positive");
        }
        if self.n_obstacles != 1 {
            return bad("exactly one obstacle may overlap the target region");
        }
        let blocks = 1 + self.n_obstacles + self.n_distractors;
        if blocks as f64 * (self.block_w + PLACE_MARGIN) > 1.0 - self.block_w {
            return bad("too many blocks for the bottom line");
        }
        if self.option_max_steps == 0 || self.horizon == 0 {
            return bad("step budgets must be positive");
        }
        Ok(())
    }

    /// Horizontal extent of the target region.
    pub fn region_x(&self) -> (f64, f64) {
        (0.5 - self.block_w / 2.0, 0.5 + self.block_w / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LiftedAtom {
    pub predicate: String,
    /// Indices into the operator's parameter list.
    pub args: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LiftedOperator {
    pub name: String,
    pub params: Vec<(String, ParamType)>,
    pub pre: Vec<LiftedAtom>,
    pub add: Vec<LiftedAtom>,
    pub del: Vec<LiftedAtom>,
}

impl LiftedOperator {
    pub fn param_types(&self) -> Vec<ParamType> {
        self.params.iter().map(|(_, t)| *t).collect()
    }

    pub fn ground_atoms(&self, lifted: &[LiftedAtom], binding: &[ObjectId]) -> Vec<Atom> {
        let mut atoms: Vec<Atom> = lifted
            .iter()
            .map(|la| Atom::new(&la.predicate, la.args.iter().map(|&i| binding[i].clone()).collect()))
            .collect();
        atoms.sort();
        atoms
    }
}

fn la(predicate: &str, args: &[usize]) -> LiftedAtom {
    LiftedAtom { predicate: predicate.to_string(), args: args.to_vec() }
}

fn params(list: &[(&str, ParamType)]) -> Vec<(String, ParamType)> {
    list.iter().map(|(n, t)| (n.to_string(), *t)).collect()
}

/// The four Obstacle 2D operators: Pick, Place, PickFromTarget, PlaceInTarget.
pub fn lifted_operators() -> Vec<LiftedOperator> {
    use ParamType::*;
    vec![
        LiftedOperator {
            name: "Pick".into(),
            params: params(&[("?r", Robot), ("?b", Block), ("?s", Table)]),
            pre: vec![la("GripperEmpty", &[0]), la("On", &[1, 2])],
            add: vec![la("Holding", &[0, 1])],
            del: vec![la("GripperEmpty", &[0]), la("On", &[1, 2])],
        },
        LiftedOperator {
            name: "Place".into(),
            params: params(&[("?r", Robot), ("?b", Block), ("?s", Table)]),
            pre: vec![la("Holding", &[0, 1])],
            add: vec![la("GripperEmpty", &[0]), la("On", &[1, 2])],
            del: vec![la("Holding", &[0, 1])],
        },
        LiftedOperator {
            name: "PickFromTarget".into(),
            params: params(&[("?r", Robot), ("?b", Block), ("?s", Table), ("?g", Region)]),
            pre: vec![la("GripperEmpty", &[0]), la("On", &[1, 2]), la("Overlap", &[1, 3])],
            add: vec![la("Holding", &[0, 1]), la("Clear", &[3])],
            del: vec![la("GripperEmpty", &[0]), la("On", &[1, 2]), la("Overlap", &[1, 3])],
        },
        LiftedOperator {
            name: "PlaceInTarget".into(),
            params: params(&[("?r", Robot), ("?b", Block), ("?s", Table), ("?g", Region)]),
            pre: vec![la("Holding", &[0, 1]), la("Clear", &[3])],
            add: vec![la("GripperEmpty", &[0]), la("On", &[1, 2]), la("Overlap", &[1, 3])],
            del: vec![la("Holding", &[0, 1]), la("Clear", &[3])],
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Controller {
    Pick,
    Place,
    PlaceInTarget,
}

/// An operator paired with its scripted controller.
#[derive(Clone, Debug)]
pub struct ScriptedOption {
    pub operator: LiftedOperator,
    pub max_steps: usize,
    controller: Controller,
}

#[derive(Clone, Debug)]
pub struct OptionRollout {
    /// `(state before, action taken)` for every executed step.
    pub trajectory: Vec<(State, Action)>,
    pub final_state: State,
    pub success: bool,
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Rect { x0: cx - w / 2.0, x1: cx + w / 2.0, y0: cy - h / 2.0, y1: cy + h / 2.0 }
    }

    fn cx(&self) -> f64 {
        0.5 * (self.x0 + self.x1)
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 - 1e-12 && o.x0 < self.x1 - 1e-12 && self.y0 < o.y1 - 1e-12 && o.y0 < self.y1 - 1e-12
    }
}

/// The simulator, its predicates and its options. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Obstacle2d {
    config: EnvConfig,
    predicates: Arc<Vec<Predicate>>,
    options: Arc<Vec<ScriptedOption>>,
}

impl Obstacle2d {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let predicates = Arc::new(build_predicates(&config));
        let options = Arc::new(
            lifted_operators()
                .into_iter()
                .map(|op| {
                    let controller = match op.name.as_str() {
                        "Pick" | "PickFromTarget" => Controller::Pick,
                        "Place" => Controller::Place,
                        _ => Controller::PlaceInTarget,
                    };
                    ScriptedOption { operator: op, max_steps: config.option_max_steps, controller }
                })
                .collect(),
        );
        Ok(Self { config, predicates, options })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn options(&self) -> &[ScriptedOption] {
        &self.options
    }

    pub fn option(&self, name: &str) -> Option<&ScriptedOption> {
        self.options.iter().find(|o| o.operator.name == name)
    }

    pub fn operators(&self) -> Vec<LiftedOperator> {
        self.options.iter().map(|o| o.operator.clone()).collect()
    }

    pub fn abstract_state(&self, state: &State) -> AbstractState {
        abstract_state(state, &self.predicates)
    }

    fn robot(&self, state: &State) -> usize {
        state.index_of_type(ObjectType::Robot).expect("state has a robot")
    }

    fn block_rect(&self, state: &State, idx: usize) -> Rect {
        let f = state.features(idx);
        Rect::centered(f[0], f[1], self.config.block_w, self.config.block_h)
    }

    fn blocks(state: &State) -> impl Iterator<Item = usize> + '_ {
        (0..state.num_objects()).filter(move |&i| state.object(i).otype == ObjectType::Block)
    }

    /// Deterministic transition function.
    pub fn step(&self, state: &State, action: Action) -> State {
        let a = action.clamped(self.config.a_max);
        if let Some(next) = self.try_step(state, a, 1.0, false) {
            return next;
        }
        // A pushed chain would leave the workspace: shorten the motion.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.try_step(state, a, mid, false).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.try_step(state, a, lo, false)
            .unwrap_or_else(|| self.try_step(state, a, lo, true).expect("clamped step always succeeds"))
    }

    fn try_step(&self, state: &State, a: Action, scale: f64, clamp_walls: bool) -> Option<State> {
        let cfg = &self.config;
        let (bw, bh) = (cfg.block_w, cfg.block_h);
        let mut s = state.clone();
        let r = self.robot(&s);
        let (rx, ry) = (s.features(r)[0], s.features(r)[1]);
        let held = s.held();

        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (0.0, 1.0, bh, 1.0);
        if let Some(b) = held {
            let (ox, oy) = (s.features(b)[0] - rx, s.features(b)[1] - ry);
            x_lo = f64::max(x_lo, bw / 2.0 - ox);
            x_hi = f64::min(x_hi, 1.0 - bw / 2.0 - ox);
            y_lo = f64::max(y_lo, bh / 2.0 - oy);
            y_hi = f64::min(y_hi, 1.0 - bh / 2.0 - oy);
        }
        let nx = clamp_range(rx + scale * a.dx, x_lo, x_hi, rx);
        let ny = clamp_range(ry + scale * a.dy, y_lo, y_hi, ry);
        let (mx, my) = (nx - rx, ny - ry);
        {
            let f = s.features_mut(r);
            f[0] = nx;
            f[1] = ny;
        }
        if let Some(b) = held {
            let f = s.features_mut(b);
            f[0] += mx;
            f[1] += my;
        }

        if a.grip > 0.5 && held.is_none() {
            let mut best: Option<(f64, usize)> = None;
            for b in Self::blocks(&s) {
                let f = s.features(b);
                let d = ((f[0] - nx).powi(2) + (f[1] + bh / 2.0 - ny).powi(2)).sqrt();
                if d <= cfg.eps_grasp && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, b));
                }
            }
            if let Some((_, b)) = best {
                s.set_held(Some(b));
                s.features_mut(b)[3] = 1.0;
                s.features_mut(r)[2] = 0.0;
            }
        } else if a.grip < -0.5 {
            if let Some(b) = held {
                s.set_held(None);
                s.features_mut(b)[3] = 0.0;
                s.features_mut(r)[2] = 1.0;
                let bottom = s.features(b)[1] - bh / 2.0;
                if bottom > 0.0 && bottom <= cfg.snap_dist {
                    let old = s.features(b)[1];
                    s.features_mut(b)[1] = bh / 2.0;
                    let dropped = self.block_rect(&s, b);
                    let collides = Self::blocks(&s).any(|o| o != b && self.block_rect(&s, o).overlaps(&dropped));
                    if collides {
                        s.features_mut(b)[1] = old;
                    }
                }
            }
        }

        let fallback_dir = if mx < 0.0 { -1.0 } else { 1.0 };
        let r = self.robot(&s);
        let (tx, ty) = (s.features(r)[0], s.features(r)[1]);
        let body = Rect { x0: tx - cfg.robot_w / 2.0, x1: tx + cfg.robot_w / 2.0, y0: ty, y1: ty + cfg.robot_h };
        let mut pushers = vec![(body, usize::MAX)];
        if let Some(b) = s.held() {
            pushers.push((self.block_rect(&s, b), b));
        }
        let n_blocks = Self::blocks(&s).count();
        for _pass in 0..4 {
            let mut moved = false;
            for &(p, skip) in &pushers {
                let free: Vec<usize> = Self::blocks(&s).filter(|&b| Some(b) != s.held() && b != skip).collect();
                for b in free {
                    let br = self.block_rect(&s, b);
                    if !p.overlaps(&br) {
                        continue;
                    }
                    let dir = if br.cx() > p.cx() + 1e-12 {
                        1.0
                    } else if br.cx() < p.cx() - 1e-12 {
                        -1.0
                    } else {
                        fallback_dir
                    };
                    let edge = if dir > 0.0 { p.x1 } else { p.x0 };
                    self.push_chain(&mut s, b, dir, edge, n_blocks);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }

        for b in Self::blocks(&s).collect::<Vec<_>>() {
            let cx = s.features(b)[0];
            if cx - bw / 2.0 < -1e-12 || cx + bw / 2.0 > 1.0 + 1e-12 {
                if !clamp_walls {
                    return None;
                }
                s.features_mut(b)[0] = cx.clamp(bw / 2.0, 1.0 - bw / 2.0);
            }
        }
        Some(s)
    }

    fn push_chain(&self, s: &mut State, b: usize, dir: f64, edge: f64, depth: usize) {
        let bw = self.config.block_w;
        let cx = s.features(b)[0];
        let new_cx = if dir > 0.0 { f64::max(cx, edge + bw / 2.0) } else { f64::min(cx, edge - bw / 2.0) };
        if new_cx == cx {
            return;
        }
        s.features_mut(b)[0] = new_cx;
        if depth == 0 {
            return;
        }
        let me = self.block_rect(s, b);
        let next: Vec<usize> = Self::blocks(s)
            .filter(|&o| o != b && Some(o) != s.held())
            .filter(|&o| {
                let r = self.block_rect(s, o);
                r.overlaps(&me) && (r.cx() - me.cx()) * dir >= 0.0
            })
            .collect();
        for o in next {
            let me = self.block_rect(s, b);
            let edge = if dir > 0.0 { me.x1 } else { me.x0 };
            self.push_chain(s, o, dir, edge, depth - 1);
        }
    }

    /// Checks that a state is physically consistent for this environment.
    pub fn validate_state(&self, state: &State) -> Result<()> {
        let robots = state.objects().iter().filter(|o| o.otype == ObjectType::Robot).count();
        if robots != 1 {
            return Err(Error::InvalidTask(format!("expected one robot, found {robots}")));
        }
        let r = self.robot(state);
        let f = state.features(r);
        if !(0.0..=1.0).contains(&f[0]) || f[1] < self.config.block_h - EPS || f[1] > 1.0 {
            return Err(Error::InvalidTask("robot outside the workspace".into()));
        }
        let blocks: Vec<usize> = Self::blocks(state).collect();
        for &b in &blocks {
            let rect = self.block_rect(state, b);
            if rect.x0 < -EPS || rect.x1 > 1.0 + EPS || rect.y0 < -EPS || rect.y1 > 1.0 + EPS {
                return Err(Error::InvalidTask(format!("block {} outside the workspace", state.object(b))));
            }
            let held_flag = state.features(b)[3] > 0.5;
            if held_flag != (state.held() == Some(b)) {
                return Err(Error::InvalidTask(format!("held flag of {} disagrees with the state", state.object(b))));
            }
        }
        for (i, &a) in blocks.iter().enumerate() {
            for &b in &blocks[i + 1..] {
                if self.block_rect(state, a).overlaps(&self.block_rect(state, b)) {
                    return Err(Error::InvalidTask(format!("blocks {} and {} overlap", state.object(a), state.object(b))));
                }
            }
        }
        Ok(())
    }

    /// Samples a task: one target block, obstacle blocks partially covering
    /// the target region, and distractor blocks elsewhere on the bottom line.
    pub fn sample_task(&self, seed: u64) -> Result<Task> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bw, bh) = (cfg.block_w, cfg.block_h);
        let (reg0, reg1) = cfg.region_x();
        let min_overlap = (cfg.eps_overlap + 0.03).min(bw);
        let mut placed: Vec<f64> = Vec::new();
        let fits = |placed: &[f64], cx: f64| placed.iter().all(|&p| (p - cx).abs() >= bw + PLACE_MARGIN);

        let mut obstacles = Vec::new();
        for _ in 0..cfg.n_obstacles {
            let spread = bw - min_overlap;
            let cx = (0..1000)
                .map(|_| 0.5 + rng.random_range(-spread..=spread))
                .find(|&cx| fits(&placed, cx))
                .ok_or_else(|| Error::InvalidConfig("cannot place obstacle blocks".into()))?;
            placed.push(cx);
            obstacles.push(cx);
        }
        let free_block = |placed: &mut Vec<f64>, rng: &mut ChaCha8Rng| -> Result<f64> {
            let cx = (0..1000)
                .map(|_| rng.random_range(bw / 2.0..=1.0 - bw / 2.0))
                .find(|&cx| {
                    let clear_region = cx + bw / 2.0 <= reg0 - cfg.eps_overlap || cx - bw / 2.0 >= reg1 + cfg.eps_overlap;
                    clear_region && fits(placed, cx)
                })
                .ok_or_else(|| Error::InvalidConfig("cannot place blocks on the bottom line".into()))?;
            placed.push(cx);
            Ok(cx)
        };
        let target = free_block(&mut placed, &mut rng)?;
        let rx = rng.random_range(0.3..=0.7);
        let ry = rng.random_range(0.3..=0.5);
        // Drawn last so adding distractors leaves the rest of the task unchanged.
        let distractors = (0..cfg.n_distractors).map(|_| free_block(&mut placed, &mut rng)).collect::<Result<Vec<_>>>()?;

        let mut objects = vec![
            (ObjectId::new(ROBOT, ObjectType::Robot), vec![rx, ry, 1.0]),
            (ObjectId::new(TABLE, ObjectType::Table), vec![0.5, 0.0, 1.0, 0.0]),
            (ObjectId::new(REGION, ObjectType::Region), vec![0.5, bh / 2.0, bw, bh]),
            (ObjectId::new(TARGET, ObjectType::Block), vec![target, bh / 2.0, 1.0, 0.0]),
        ];
        for (i, cx) in obstacles.iter().enumerate() {
            objects.push((ObjectId::new(&format!("obstacle{i}"), ObjectType::Block), vec![*cx, bh / 2.0, 0.0, 0.0]));
        }
        for (i, cx) in distractors.iter().enumerate() {
            objects.push((ObjectId::new(&format!("distractor{i}"), ObjectType::Block), vec![*cx, bh / 2.0, 0.0, 0.0]));
        }
        let state = State::new(objects, None)?;
        self.validate_state(&state)?;
        Ok(Task { goal: self.default_goal(&state), initial_state: state, seed })
    }

    /// `{Overlap(target, region), On(target, table)}`.
    pub fn default_goal(&self, state: &State) -> Goal {
        let obj = |n: &str| state.objects()[state.index_of(n).expect("standard object")].clone();
        Goal::new(vec![
            Atom::new("Overlap", vec![obj(TARGET), obj(REGION)]),
            Atom::new("On", vec![obj(TARGET), obj(TABLE)]),
        ])
    }

    /// Runs a scripted option until the operator's predicted successor is
    /// reached, the abstract state changes to something else, or the step
    /// budget runs out.
    pub fn execute_option(&self, state: &State, option: &ScriptedOption, binding: &[usize]) -> Result<OptionRollout> {
        let op = &option.operator;
        let objs: Vec<ObjectId> = binding.iter().map(|&i| state.object(i).clone()).collect();
        if objs.len() != op.params.len() || op.params.iter().zip(&objs).any(|((_, t), o)| !t.accepts(o.otype)) {
            return Err(Error::Precondition(format!("{} bound to ill-typed objects", op.name)));
        }
        let source = self.abstract_state(state);
        let pre = op.ground_atoms(&op.pre, &objs);
        if !source.contains_all(&pre) {
            return Err(Error::Precondition(format!(
                "{}({})",
                op.name,
                objs.iter().map(|o| o.name.to_string()).collect::<Vec<_>>().join(", ")
            )));
        }
        let predicted = source.apply(&op.ground_atoms(&op.del, &objs), &op.ground_atoms(&op.add, &objs));
        let mut current = state.clone();
        let mut trajectory = Vec::new();
        for _ in 0..option.max_steps {
            let action = self.option_action(&current, option, binding);
            let next = self.step(&current, action);
            trajectory.push((current, action));
            let abs = self.abstract_state(&next);
            current = next;
            if abs == predicted {
                return Ok(OptionRollout { trajectory, final_state: current, success: true });
            }
            if abs != source {
                break;
            }
        }
        Ok(OptionRollout { trajectory, final_state: current, success: false })
    }

    fn toward(&self, from: (f64, f64), to: (f64, f64)) -> (f64, f64, bool) {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let m = dx.abs().max(dy.abs());
        if m <= self.config.a_max {
            (dx, dy, true)
        } else {
            let k = self.config.a_max / m;
            (dx * k, dy * k, false)
        }
    }

    fn option_action(&self, state: &State, option: &ScriptedOption, binding: &[usize]) -> Action {
        let r = self.robot(state);
        let tip = (state.features(r)[0], state.features(r)[1]);
        let b = binding[1];
        let bf = state.features(b);
        match option.controller {
            Controller::Pick => {
                let grasp = (bf[0], bf[1] + self.config.block_h / 2.0);
                let (dx, dy, arrives) = self.toward(tip, grasp);
                Action::new(dx, dy, if arrives { 1.0 } else { 0.0 })
            }
            Controller::Place => {
                let slot = self.free_slot(state, b).unwrap_or(bf[0]);
                self.carry_to(state, tip, b, slot)
            }
            Controller::PlaceInTarget => self.carry_to(state, tip, b, 0.5),
        }
    }

    /// Moves the held block to `slot` on the bottom line and releases it:
    /// straight along the current height when nothing is in the way,
    /// otherwise up to carrying height first.
    fn carry_to(&self, state: &State, tip: (f64, f64), b: usize, slot: f64) -> Action {
        let (bw, bh) = (self.config.block_w, self.config.block_h);
        let bf = state.features(b);
        let (ox, oy) = (bf[0] - tip.0, bf[1] - tip.1);
        if (bf[0] - slot).abs() <= EPS {
            let goal = (slot - ox, bh / 2.0 - oy);
            let (dx, dy, arrives) = self.toward(tip, goal);
            return Action::new(dx, dy, if arrives { -1.0 } else { 0.0 });
        }
        let bottom = bf[1] - bh / 2.0;
        let (lo, hi) = if slot < bf[0] { (slot - bw / 2.0, bf[0] + bw / 2.0) } else { (bf[0] - bw / 2.0, slot + bw / 2.0) };
        let blocking_top = Self::blocks(state)
            .filter(|&o| o != b)
            .map(|o| self.block_rect(state, o))
            .filter(|r| r.x0 < hi - 1e-12 && lo < r.x1 - 1e-12)
            .map(|r| r.y1)
            .fold(f64::NEG_INFINITY, f64::max);
        if blocking_top > bottom + 1e-12 {
            let carry = blocking_top + CARRY_CLEARANCE + bh / 2.0 - oy;
            let (dx, dy, _) = self.toward(tip, (tip.0, carry));
            return Action::new(dx, dy, 0.0);
        }
        let (dx, dy, _) = self.toward(tip, (slot - ox, tip.1));
        Action::new(dx, dy, 0.0)
    }

    /// Leftmost free position on the bottom line for block `b`, outside
    /// the target region.
    pub fn free_slot(&self, state: &State, b: usize) -> Option<f64> {
        let bw = self.config.block_w;
        let (reg0, reg1) = self.config.region_x();
        let others: Vec<Rect> = Self::blocks(state)
            .filter(|&o| o != b)
            .map(|o| self.block_rect(state, o))
            .filter(|r| r.y0 < self.config.block_h)
            .collect();
        let n = ((1.0 - bw) / SLOT_STEP).floor() as usize;
        (0..=n).map(|k| bw / 2.0 + k as f64 * SLOT_STEP).find(|&cx| {
            let (x0, x1) = (cx - bw / 2.0, cx + bw / 2.0);
            let outside_region = x1 <= reg0 - self.config.eps_overlap || x0 >= reg1 + self.config.eps_overlap;
            outside_region && others.iter().all(|r| x1 + PLACE_MARGIN <= r.x0 || x0 >= r.x1 + PLACE_MARGIN)
        })
    }
}

fn clamp_range(v: f64, lo: f64, hi: f64, current: f64) -> f64 {
    if lo > hi {
        current
    } else {
        v.clamp(lo, hi)
    }
}

fn build_predicates(cfg: &EnvConfig) -> Vec<Predicate> {
    use ParamType::*;
    let (bw, bh, eps) = (cfg.block_w, cfg.block_h, cfg.eps_overlap);
    let overlap = move |s: &State, b: usize, g: usize| -> bool {
        if s.held() == Some(b) {
            return false;
        }
        let (bf, gf) = (s.features(b), s.features(g));
        let (b0, b1) = (bf[0] - bw / 2.0, bf[0] + bw / 2.0);
        let (g0, g1) = (gf[0] - gf[2] / 2.0, gf[0] + gf[2] / 2.0);
        let (by0, by1) = (bf[1] - bh / 2.0, bf[1] + bh / 2.0);
        let (gy0, gy1) = (gf[1] - gf[3] / 2.0, gf[1] + gf[3] / 2.0);
        let horizontal = b1.min(g1) - b0.max(g0);
        let vertical = by0 < gy1 - 1e-12 && gy0 < by1;
        vertical && horizontal > eps
    };
    vec![
        Predicate::new("IsBlock", vec![Block], |_, _| true),
        Predicate::new("IsSurface", vec![Surface], |_, _| true),
        Predicate::new("IsRobot", vec![Robot], |_, _| true),
        Predicate::new("On", vec![Block, Table], move |s, a| {
            s.held() != Some(a[0]) && (s.features(a[0])[1] - bh / 2.0 - s.features(a[1])[1]).abs() <= EPS
        }),
        Predicate::new("Overlap", vec![Block, Region], move |s, a| overlap(s, a[0], a[1])),
        Predicate::new("Holding", vec![Robot, Block], |s, a| s.held() == Some(a[1])),
        Predicate::new("GripperEmpty", vec![Robot], |s, _| s.held().is_none()),
        Predicate::new("Clear", vec![Region], move |s, a| {
            !(0..s.num_objects()).any(|b| s.object(b).otype == ObjectType::Block && overlap(s, b, a[0]))
        }),
        Predicate::new("IsTarget", vec![Block], |s, a| s.features(a[0])[2] > 0.5),
        Predicate::new("NotIsTarget", vec![Block], |s, a| s.features(a[0])[2] <= 0.5),
    ]
}

/// Writes one JSON object per transition: `{"state": ..., "action": ...}`.
pub fn write_trajectory_jsonl<W: Write>(mut out: W, trajectory: &[(State, Action)]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        state: &'a State,
        action: &'a Action,
    }
    for (state, action) in trajectory {
        serde_json::to_writer(&mut out, &Line { state, action })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Obstacle2d {
        Obstacle2d::new(EnvConfig::default()).unwrap()
    }

    fn state_with(robot: (f64, f64), blocks: &[(&str, f64, f64)]) -> State {
        let mut objects = vec![
            (ObjectId::new(ROBOT, ObjectType::Robot), vec![robot.0, robot.1, 1.0]),
            (ObjectId::new(TABLE, ObjectType::Table), vec![0.5, 0.0, 1.0, 0.0]),
            (ObjectId::new(REGION, ObjectType::Region), vec![0.5, 0.1, 0.2, 0.2]),
        ];
        for (name, x, y) in blocks {
            let is_target = if *name == TARGET { 1.0 } else { 0.0 };
            objects.push((ObjectId::new(name, ObjectType::Block), vec![*x, *y, is_target, 0.0]));
        }
        State::new(objects, None).unwrap()
    }

    fn has(env: &Obstacle2d, s: &State, text: &str) -> bool {
        env.abstract_state(s).atoms().iter().any(|a| a.to_string() == text)
    }

    #[test]
    fn zero_action_is_identity() {
        let e = env();
        let s = e.sample_task(3).unwrap().initial_state;
        assert_eq!(e.step(&s, Action::ZERO), s);
    }

    #[test]
    fn empty_gripper_atom() {
        let e = env();
        let s = state_with((0.5, 0.5), &[(TARGET, 0.1, 0.1)]);
        assert!(has(&e, &s, "GripperEmpty(robot)"));
    }

    #[test]
    fn overlap_classifier_geometry() {
        let e = env();
        // Region spans [0.4, 0.6]. Block at 0.25 spans [0.15, 0.35]: no overlap.
        // Block at 0.315 spans [0.215, 0.415]: overlap 0.015 > 0.01.
        // Block at 0.305 spans [0.205, 0.405]: overlap 0.005 <= 0.01.
        assert!(!has(&e, &state_with((0.5, 0.5), &[(TARGET, 0.25, 0.1)]), "Overlap(target, region)"));
        assert!(has(&e, &state_with((0.5, 0.5), &[(TARGET, 0.315, 0.1)]), "Overlap(target, region)"));
        assert!(!has(&e, &state_with((0.5, 0.5), &[(TARGET, 0.305, 0.1)]), "Overlap(target, region)"));
        // Floating above the region does not count.
        assert!(!has(&e, &state_with((0.5, 0.8), &[(TARGET, 0.5, 0.45)]), "Overlap(target, region)"));
    }

    #[test]
    fn grasp_engages_nearby_block() {
        let e = env();
        let s = state_with((0.32, 0.22), &[(TARGET, 0.3, 0.1)]);
        let next = e.step(&s, Action::new(0.0, -0.02, 1.0));
        assert!(has(&e, &next, "Holding(robot, target)"));
        let far = state_with((0.36, 0.22), &[(TARGET, 0.3, 0.1)]);
        let next = e.step(&far, Action::new(0.0, -0.02, 1.0));
        assert!(has(&e, &next, "GripperEmpty(robot)"));
    }

    #[test]
    fn held_block_pushes_neighbour_by_overlap_depth() {
        let e = env();
        // Held block spans [0.1, 0.3]; obstacle spans [0.3, 0.5].
        let s = state_with((0.2, 0.2), &[(TARGET, 0.2, 0.1), ("obstacle0", 0.4, 0.1)]);
        let s = e.step(&s, Action::new(0.0, 0.0, 1.0));
        assert_eq!(s.held(), s.index_of(TARGET));
        let before = s.features(s.index_of("obstacle0").unwrap())[0];
        let next = e.step(&s, Action::new(0.03, 0.0, 0.0));
        let after = next.features(next.index_of("obstacle0").unwrap())[0];
        assert!((after - before - 0.03).abs() < 1e-12, "pushed by {}", after - before);
    }

    #[test]
    fn push_propagates_through_chain_and_stops_at_wall() {
        let e = env();
        let s = state_with((0.2, 0.2), &[(TARGET, 0.2, 0.1), ("obstacle0", 0.4, 0.1), ("distractor0", 0.6, 0.1)]);
        let mut s = e.step(&s, Action::new(0.0, 0.0, 1.0));
        for _ in 0..20 {
            s = e.step(&s, Action::new(0.05, 0.0, 0.0));
        }
        let xs: Vec<f64> = [TARGET, "obstacle0", "distractor0"].iter().map(|n| s.features(s.index_of(n).unwrap())[0]).collect();
        assert!((xs[2] - 0.9).abs() < 1e-9);
        assert!((xs[1] - 0.7).abs() < 1e-9);
        assert!((xs[0] - 0.5).abs() < 1e-9);
        e.validate_state(&s).unwrap();
    }

    #[test]
    fn release_snaps_to_bottom_line() {
        let e = env();
        let s = state_with((0.2, 0.2), &[(TARGET, 0.2, 0.1)]);
        let s = e.step(&s, Action::new(0.0, 0.0, 1.0));
        let s = e.step(&s, Action::new(0.0, 0.03, 0.0));
        assert!(!has(&e, &s, "On(target, table)"));
        let s = e.step(&s, Action::new(0.0, 0.0, -1.0));
        assert!(has(&e, &s, "On(target, table)"));
        assert!(has(&e, &s, "GripperEmpty(robot)"));
    }

    #[test]
    fn four_operators_with_expected_effects() {
        let ops = lifted_operators();
        assert_eq!(ops.len(), 4);
        let pick = ops.iter().find(|o| o.name == "Pick").unwrap();
        assert!(pick.pre.contains(&la("GripperEmpty", &[0])));
        assert!(pick.add.contains(&la("Holding", &[0, 1])));
        assert!(pick.del.contains(&la("GripperEmpty", &[0])));
        let pit = ops.iter().find(|o| o.name == "PlaceInTarget").unwrap();
        assert!(pit.pre.contains(&la("Clear", &[3])));
        assert!(pit.add.contains(&la("Overlap", &[1, 3])));
        for op in &ops {
            assert!(op.add.iter().all(|a| !op.del.contains(a)), "{} adds and deletes the same atom", op.name);
            let all = op.pre.iter().chain(&op.add).chain(&op.del);
            assert!(all.flat_map(|a| a.args.iter()).all(|&i| i < op.params.len()));
        }
    }

    #[test]
    fn sampler_is_deterministic_and_blocks_region() {
        let e = env();
        for seed in 0..50 {
            let t = e.sample_task(seed).unwrap();
            assert_eq!(t.to_json(), e.sample_task(seed).unwrap().to_json());
            assert!(has(&e, &t.initial_state, "Overlap(obstacle0, region)"));
            assert!(!has(&e, &t.initial_state, "Overlap(target, region)"));
            assert!(has(&e, &t.initial_state, "IsTarget(target)"));
        }
    }

    #[test]
    fn distractor_variant_adds_clear_block() {
        let e = Obstacle2d::new(EnvConfig { n_distractors: 1, ..EnvConfig::default() }).unwrap();
        for seed in 0..20 {
            let t = e.sample_task(seed).unwrap();
            assert!(has(&e, &t.initial_state, "NotIsTarget(distractor0)"));
            assert!(!has(&e, &t.initial_state, "Overlap(distractor0, region)"));
            let base = env().sample_task(seed).unwrap().initial_state;
            for i in 0..base.num_objects() {
                assert_eq!(base.features(i), t.initial_state.features(i));
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(Obstacle2d::new(EnvConfig { a_max: 0.0, ..EnvConfig::default() }).is_err());
        assert!(Obstacle2d::new(EnvConfig { n_distractors: 5, ..EnvConfig::default() }).is_err());
    }

    #[test]
    fn pick_then_place_in_target_reaches_goal() {
        let e = env();
        let s = state_with((0.5, 0.4), &[(TARGET, 0.15, 0.1), ("obstacle0", 0.8, 0.1)]);
        let (r, t, table, region) = (0, s.index_of(TARGET).unwrap(), 1, 2);
        let pick = e.execute_option(&s, e.option("Pick").unwrap(), &[r, t, table]).unwrap();
        assert!(pick.success);
        assert!(has(&e, &pick.final_state, "Holding(robot, target)"));
        let place = e.execute_option(&pick.final_state, e.option("PlaceInTarget").unwrap(), &[r, t, table, region]).unwrap();
        assert!(place.success);
        let goal = e.default_goal(&s);
        assert!(crate::model::goal_satisfied(&e.abstract_state(&place.final_state), &goal));
    }

    #[test]
    fn pick_of_held_block_violates_precondition() {
        let e = env();
        let s = state_with((0.5, 0.4), &[(TARGET, 0.15, 0.1)]);
        let t = s.index_of(TARGET).unwrap();
        let pick = e.execute_option(&s, e.option("Pick").unwrap(), &[0, t, 1]).unwrap();
        let again = e.execute_option(&pick.final_state, e.option("Pick").unwrap(), &[0, t, 1]);
        assert!(matches!(again, Err(Error::Precondition(_))));
    }

    #[test]
    fn trajectory_dump_is_one_line_per_step() {
        let e = env();
        let s = state_with((0.5, 0.4), &[(TARGET, 0.15, 0.1)]);
        let t = s.index_of(TARGET).unwrap();
        let pick = e.execute_option(&s, e.option("Pick").unwrap(), &[0, t, 1]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &pick.trajectory).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), pick.trajectory.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.get("state").is_some() && first.get("action").is_some());
    }
}
