//! Canonical fact sets of an environment graph.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::world::{EnvironmentState, ObjectClass, Relation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateValue {
    Open,
    Closed,
    On,
    Off,
    Clean,
    Dirty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum Fact {
    State { object: ObjectClass, value: StateValue },
    Relation(Relation),
}

/// Which restriction of the F1 metric a fact belongs to.
pub trait FactKind {
    fn is_state(&self) -> bool;
}

impl FactKind for Fact {
    fn is_state(&self) -> bool {
        matches!(self, Fact::State { .. })
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::State { object, value } => write!(f, "{value:?}({object})"),
            Fact::Relation(r) => write!(f, "{:?}({}, {})", r.kind, r.subject, r.target),
        }
    }
}

/// Object-state and relation facts of `state`, sorted. The agent's pose is
/// not part of the graph.
pub fn graph_snapshot(state: &EnvironmentState) -> BTreeSet<Fact> {
    let mut facts = BTreeSet::new();
    for (&object, obj) in &state.objects {
        if let Some(open) = obj.open {
            let value = if open { StateValue::Open } else { StateValue::Closed };
            facts.insert(Fact::State { object, value });
        }
        if let Some(on) = obj.on {
            let value = if on { StateValue::On } else { StateValue::Off };
            facts.insert(Fact::State { object, value });
        }
        if let Some(dirty) = obj.dirty {
            let value = if dirty { StateValue::Dirty } else { StateValue::Clean };
            facts.insert(Fact::State { object, value });
        }
    }
    facts.extend(state.relations.iter().copied().map(Fact::Relation));
    facts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    Added,
    Removed,
}

/// A fact that differs between an initial and a final graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChangedFact {
    pub change: Change,
    pub fact: Fact,
}

impl FactKind for ChangedFact {
    fn is_state(&self) -> bool {
        self.fact.is_state()
    }
}

/// Facts added and removed going from `before` to `after`.
pub fn graph_changes(before: &BTreeSet<Fact>, after: &BTreeSet<Fact>) -> BTreeSet<ChangedFact> {
    let added = after.difference(before).map(|&fact| ChangedFact {
        change: Change::Added,
        fact,
    });
    let removed = before.difference(after).map(|&fact| ChangedFact {
        change: Change::Removed,
        fact,
    });
    added.chain(removed).collect()
}
