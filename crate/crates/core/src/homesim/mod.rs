//! Seedable household simulator: apartments, affordance-gated actions,
//! noisy partial observations and scripted expert demonstrations.

pub mod action;
pub mod apartment;
pub mod demo;
pub mod env;
pub mod facts;
pub mod observe;
pub mod tasks;
pub mod world;

pub use action::{apply, check, executable_actions, Action, NotExecutable, Verb};
pub use apartment::{generate_apartment, ApartmentConfig};
pub use demo::{
    generate_demonstrations, read_jsonl, write_jsonl, DemoConfig, DemoSet, DemoStep,
    Demonstration,
};
pub use env::{execute, Sensor};
pub use facts::{graph_changes, graph_snapshot, ChangedFact, Fact, FactKind};
pub use observe::{encode_state, feature_len, render_observation, Observation};
pub use tasks::{Goal, TaskTemplate};
pub use world::{EnvironmentState, ObjectClass, ObjectId, Relation, RelationKind, Room};
