//! Shortcut learning for abstract planning.
//!
//! A planner builds a bilevel graph over abstract states using scripted
//! options, learns reinforcement-learned shortcut policies between abstract
//! states that the options never connect directly, and plans again with
//! those shortcuts available.

pub mod env;
pub mod error;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod policy;
pub mod shortcut;

pub use env::{Action, EnvConfig, Obstacle2d};
pub use error::{Error, Result};
pub use model::{AbstractState, Atom, Goal, ObjectId, ObjectType, ParamType, Predicate, State, Task};
