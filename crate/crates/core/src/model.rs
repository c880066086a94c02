//! Objects, continuous states, predicates, atoms and abstract states.
//!
//! Everything here is an immutable value once built. Names are reference
//! counted so atoms and states clone cheaply inside search loops.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Name = Arc<str>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectType {
    Robot,
    Block,
    Region,
    Table,
}

impl ObjectType {
    /// Length of the feature vector carried by objects of this type.
    pub fn feature_len(self) -> usize {
        match self {
            ObjectType::Robot => 3,
            ObjectType::Block | ObjectType::Region | ObjectType::Table => 4,
        }
    }
}

/// Type constraint on a predicate or operator parameter.
///
/// `Surface` is the only abstract type: it accepts tables and regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Robot,
    Block,
    Region,
    Table,
    Surface,
}

impl ParamType {
    pub fn accepts(self, otype: ObjectType) -> bool {
        match self {
            ParamType::Robot => otype == ObjectType::Robot,
            ParamType::Block => otype == ObjectType::Block,
            ParamType::Region => otype == ObjectType::Region,
            ParamType::Table => otype == ObjectType::Table,
            ParamType::Surface => matches!(otype, ObjectType::Region | ObjectType::Table),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId {
    pub name: Name,
    pub otype: ObjectType,
}

impl ObjectId {
    pub fn new(name: &str, otype: ObjectType) -> Self {
        Self { name: Arc::from(name), otype }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, PartialEq)]
struct Layout {
    objects: Vec<ObjectId>,
    offsets: Vec<usize>,
}

/// Object-centric continuous state: one feature vector per object, in the
/// task's canonical object order, plus the currently grasped object.
#[derive(Clone, Debug)]
pub struct State {
    layout: Arc<Layout>,
    features: Vec<f64>,
    held: Option<usize>,
}

impl State {
    pub fn new(objects: Vec<(ObjectId, Vec<f64>)>, held: Option<&str>) -> Result<Self> {
        let mut layout = Layout { objects: Vec::with_capacity(objects.len()), offsets: Vec::new() };
        let mut features = Vec::new();
        for (obj, feats) in objects {
            if feats.len() != obj.otype.feature_len() {
                return Err(Error::InvalidTask(format!(
                    "object {} has {} features, expected {}",
                    obj.name,
                    feats.len(),
                    obj.otype.feature_len()
                )));
            }
            if feats.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTask(format!("object {} has non-finite features", obj.name)));
            }
            if layout.objects.iter().any(|o| o.name == obj.name) {
                return Err(Error::InvalidTask(format!("duplicate object name {}", obj.name)));
            }
            layout.offsets.push(features.len());
            features.extend(feats);
            layout.objects.push(obj);
        }
        let held = match held {
            None => None,
            Some(name) => Some(
                layout
                    .objects
                    .iter()
                    .position(|o| &*o.name == name)
                    .ok_or_else(|| Error::InvalidTask(format!("held object {name} is not in the state")))?,
            ),
        };
        Ok(Self { layout: Arc::new(layout), features, held })
    }

    pub fn objects(&self) -> &[ObjectId] {
        &self.layout.objects
    }

    pub fn num_objects(&self) -> usize {
        self.layout.objects.len()
    }

    pub fn object(&self, idx: usize) -> &ObjectId {
        &self.layout.objects[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.objects.iter().position(|o| &*o.name == name)
    }

    pub fn index_of_type(&self, otype: ObjectType) -> Option<usize> {
        self.layout.objects.iter().position(|o| o.otype == otype)
    }

    pub fn features(&self, idx: usize) -> &[f64] {
        let start = self.layout.offsets[idx];
        &self.features[start..start + self.layout.objects[idx].otype.feature_len()]
    }

    pub fn features_mut(&mut self, idx: usize) -> &mut [f64] {
        let start = self.layout.offsets[idx];
        let len = self.layout.objects[idx].otype.feature_len();
        &mut self.features[start..start + len]
    }

    /// All features, concatenated in object order.
    pub fn flat_features(&self) -> &[f64] {
        &self.features
    }

    pub fn held(&self) -> Option<usize> {
        self.held
    }

    pub fn set_held(&mut self, held: Option<usize>) {
        self.held = held;
    }

    pub fn same_layout(&self, other: &State) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn to_record(&self) -> StateRecord {
        StateRecord {
            objects: (0..self.num_objects())
                .map(|i| ObjectRecord {
                    name: self.object(i).name.to_string(),
                    otype: self.object(i).otype,
                    features: self.features(i).to_vec(),
                })
                .collect(),
            held: self.held.map(|i| self.object(i).name.to_string()),
        }
    }

    pub fn from_record(rec: &StateRecord) -> Result<Self> {
        let objects = rec
            .objects
            .iter()
            .map(|o| (ObjectId::new(&o.name, o.otype), o.features.clone()))
            .collect();
        State::new(objects, rec.held.as_deref())
    }
}

/// Bitwise equality: two states are equal only if every feature has the
/// same bit pattern.
impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        self.held == other.held
            && self.same_layout(other)
            && self.features.len() == other.features.len()
            && self.features.iter().zip(&other.features).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    pub otype: ObjectType,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub held: Option<String>,
}

impl Serialize for State {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = StateRecord::deserialize(d)?;
        State::from_record(&rec).map_err(serde::de::Error::custom)
    }
}

pub type Classifier = dyn Fn(&State, &[usize]) -> bool + Send + Sync;

/// A typed relation with a boolean classifier over continuous states.
#[derive(Clone)]
pub struct Predicate {
    pub name: Name,
    pub param_types: Vec<ParamType>,
    classifier: Arc<Classifier>,
}

impl Predicate {
    pub fn new<F>(name: &str, param_types: Vec<ParamType>, classifier: F) -> Self
    where
        F: Fn(&State, &[usize]) -> bool + Send + Sync + 'static,
    {
        Self { name: Arc::from(name), param_types, classifier: Arc::new(classifier) }
    }

    pub fn arity(&self) -> usize {
        self.param_types.len()
    }

    pub fn holds(&self, state: &State, args: &[usize]) -> bool {
        (self.classifier)(state, args)
    }
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Predicate").field("name", &self.name).field("param_types", &self.param_types).finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: Name,
    pub args: Vec<ObjectId>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<ObjectId>) -> Self {
        Self { predicate: Arc::from(predicate), args }
    }

    pub fn mentions(&self, obj: &ObjectId) -> bool {
        self.args.iter().any(|a| a == obj)
    }

    pub fn to_record(&self) -> AtomRecord {
        AtomRecord {
            predicate: self.predicate.to_string(),
            args: self.args.iter().map(|a| a.name.to_string()).collect(),
        }
    }

    /// Resolves a name-only record against a known object list.
    pub fn from_record(rec: &AtomRecord, objects: &[ObjectId]) -> Result<Self> {
        let args = rec
            .args
            .iter()
            .map(|n| {
                objects
                    .iter()
                    .find(|o| &*o.name == n.as_str())
                    .cloned()
                    .ok_or_else(|| Error::InvalidTask(format!("atom {}({}) mentions unknown object {n}", rec.predicate, rec.args.join(", "))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Atom::new(&rec.predicate, args))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&a.name)?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub predicate: String,
    pub args: Vec<String>,
}

/// Canonical (sorted, duplicate-free) set of ground atoms.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractState {
    atoms: Vec<Atom>,
}

impl AbstractState {
    pub fn from_atoms<I: IntoIterator<Item = Atom>>(atoms: I) -> Self {
        let mut atoms: Vec<Atom> = atoms.into_iter().collect();
        atoms.sort();
        atoms.dedup();
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.binary_search(atom).is_ok()
    }

    pub fn contains_all<'a, I: IntoIterator<Item = &'a Atom>>(&self, atoms: I) -> bool {
        atoms.into_iter().all(|a| self.contains(a))
    }

    /// `(self \ del) ∪ add`.
    pub fn apply(&self, del: &[Atom], add: &[Atom]) -> AbstractState {
        let kept = self.atoms.iter().filter(|a| !del.contains(a)).cloned();
        AbstractState::from_atoms(kept.chain(add.iter().cloned()))
    }

    /// Atoms in `self` that are absent from `other`.
    pub fn difference(&self, other: &AbstractState) -> Vec<Atom> {
        self.atoms.iter().filter(|a| !other.contains(a)).cloned().collect()
    }

    pub fn objects(&self) -> Vec<ObjectId> {
        let mut objs: Vec<ObjectId> = self.atoms.iter().flat_map(|a| a.args.iter().cloned()).collect();
        objs.sort();
        objs.dedup();
        objs
    }

    pub fn to_records(&self) -> Vec<AtomRecord> {
        self.atoms.iter().map(Atom::to_record).collect()
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Goal {
    atoms: Vec<Atom>,
}

impl Goal {
    pub fn new<I: IntoIterator<Item = Atom>>(atoms: I) -> Self {
        let mut atoms: Vec<Atom> = atoms.into_iter().collect();
        atoms.sort();
        atoms.dedup();
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
}

pub fn goal_satisfied(abstract_state: &AbstractState, goal: &Goal) -> bool {
    abstract_state.contains_all(goal.atoms())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub initial_state: State,
    pub goal: Goal,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    seed: u64,
    objects: Vec<ObjectRecord>,
    goal: Vec<AtomRecord>,
}

impl Task {
    pub fn to_json(&self) -> String {
        let rec = TaskRecord {
            seed: self.seed,
            objects: self.initial_state.to_record().objects,
            goal: self.goal.atoms().iter().map(Atom::to_record).collect(),
        };
        serde_json::to_string(&rec).expect("task serialization is infallible")
    }

    /// Parses a task document. Goals that mention objects absent from the
    /// initial state are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: TaskRecord = serde_json::from_str(text)?;
        let state = State::from_record(&StateRecord { objects: rec.objects, held: None })?;
        let goal = rec
            .goal
            .iter()
            .map(|a| Atom::from_record(a, state.objects()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Task { initial_state: state, goal: Goal::new(goal), seed: rec.seed })
    }
}

/// Every injective tuple of object indices whose types satisfy `params`,
/// in odometer order over the object list.
pub fn typed_tuples(objects: &[ObjectId], params: &[ParamType]) -> Vec<Vec<usize>> {
    let candidates: Vec<Vec<usize>> = params
        .iter()
        .map(|p| (0..objects.len()).filter(|&i| p.accepts(objects[i].otype)).collect())
        .collect();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(params.len());
    fn rec(cands: &[Vec<usize>], current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let depth = current.len();
        if depth == cands.len() {
            out.push(current.clone());
            return;
        }
        for &i in &cands[depth] {
            if current.contains(&i) {
                continue;
            }
            current.push(i);
            rec(cands, current, out);
            current.pop();
        }
    }
    rec(&candidates, &mut current, &mut out);
    out
}

/// The abstract state of `state`: every well-typed ground atom whose
/// classifier holds.
pub fn abstract_state(state: &State, predicates: &[Predicate]) -> AbstractState {
    let objects = state.objects();
    let mut atoms = Vec::new();
    for pred in predicates {
        for tuple in typed_tuples(objects, &pred.param_types) {
            if pred.holds(state, &tuple) {
                atoms.push(Atom { predicate: pred.name.clone(), args: tuple.iter().map(|&i| objects[i].clone()).collect() });
            }
        }
    }
    AbstractState::from_atoms(atoms)
}

/// All well-typed ground atoms over `objects`, in canonical order. The
/// position of an atom is its index in multi-hot encodings.
pub fn atom_vocabulary(objects: &[ObjectId], predicates: &[Predicate]) -> Vec<Atom> {
    let mut atoms: Vec<Atom> = predicates
        .iter()
        .flat_map(|pred| {
            typed_tuples(objects, &pred.param_types)
                .into_iter()
                .map(|t| Atom { predicate: pred.name.clone(), args: t.iter().map(|&i| objects[i].clone()).collect() })
        })
        .collect();
    atoms.sort();
    atoms.dedup();
    atoms
}
