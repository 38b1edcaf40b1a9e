//! High-level actions with affordance-gated preconditions.
//!
//! | verb      | requires                                              |
//! |-----------|-------------------------------------------------------|
//! | WALK      | the room exists                                       |
//! | GRAB      | portable, visible, not held, a free hand              |
//! | PUTBACK   | object held, target is a visible surface              |
//! | PUTIN     | object held, target is a visible, open container      |
//! | OPEN      | openable, visible, closed (CLOSE: open)               |
//! | SWITCHON  | switchable, visible, off (SWITCHOFF: on)              |
//!
//! Switching a faucet on cleans everything inside the sink.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::world::{
    Entity, EnvironmentState, ObjectClass, ObjectId, Relation, RelationKind, Room,
    INVENTORY_CAPACITY,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verb {
    Walk,
    Grab,
    Putback,
    Putin,
    Open,
    Close,
    Switchon,
    Switchoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "verb", content = "args", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Walk(Room),
    Grab(ObjectId),
    Putback(ObjectId, ObjectId),
    Putin(ObjectId, ObjectId),
    Open(ObjectId),
    Close(ObjectId),
    Switchon(ObjectId),
    Switchoff(ObjectId),
}

impl Action {
    pub fn verb(&self) -> Verb {
        match self {
            Action::Walk(_) => Verb::Walk,
            Action::Grab(_) => Verb::Grab,
            Action::Putback(..) => Verb::Putback,
            Action::Putin(..) => Verb::Putin,
            Action::Open(_) => Verb::Open,
            Action::Close(_) => Verb::Close,
            Action::Switchon(_) => Verb::Switchon,
            Action::Switchoff(_) => Verb::Switchoff,
        }
    }

    /// Every grounded action over the room and object vocabularies that is
    /// well-typed (e.g. only portable objects can be grabbed).
    pub fn all() -> Vec<Action> {
        let mut out: Vec<Action> = Room::ALL.iter().map(|&r| Action::Walk(r)).collect();
        for g in ObjectClass::grabbables() {
            out.push(Action::Grab(g));
        }
        for g in ObjectClass::grabbables() {
            for s in ObjectClass::ALL.into_iter().filter(|c| c.surface()) {
                out.push(Action::Putback(g, s));
            }
        }
        for g in ObjectClass::grabbables() {
            for c in ObjectClass::ALL.into_iter().filter(|c| c.container()) {
                out.push(Action::Putin(g, c));
            }
        }
        for o in ObjectClass::ALL.into_iter().filter(|c| c.openable()) {
            out.push(Action::Open(o));
            out.push(Action::Close(o));
        }
        for o in ObjectClass::ALL.into_iter().filter(|c| c.switchable()) {
            out.push(Action::Switchon(o));
            out.push(Action::Switchoff(o));
        }
        out
    }

    /// Position in [`Action::all`]; `None` for ill-typed actions.
    pub fn index(&self) -> Option<usize> {
        static INDEX: OnceLock<BTreeMap<Action, usize>> = OnceLock::new();
        INDEX
            .get_or_init(|| Action::all().into_iter().enumerate().map(|(i, a)| (a, i)).collect())
            .get(self)
            .copied()
    }

    pub fn from_index(i: usize) -> Option<Action> {
        static ALL: OnceLock<Vec<Action>> = OnceLock::new();
        ALL.get_or_init(Action::all).get(i).copied()
    }

    pub fn is_well_typed(&self) -> bool {
        match *self {
            Action::Walk(_) => true,
            Action::Grab(o) => o.grabbable(),
            Action::Putback(o, t) => o.grabbable() && t.surface(),
            Action::Putin(o, t) => o.grabbable() && t.container(),
            Action::Open(o) | Action::Close(o) => o.openable(),
            Action::Switchon(o) | Action::Switchoff(o) => o.switchable(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Walk(r) => write!(f, "[WALK] <{r}>"),
            Action::Grab(o) => write!(f, "[GRAB] <{o}>"),
            Action::Putback(o, t) => write!(f, "[PUTBACK] <{o}> <{t}>"),
            Action::Putin(o, t) => write!(f, "[PUTIN] <{o}> <{t}>"),
            Action::Open(o) => write!(f, "[OPEN] <{o}>"),
            Action::Close(o) => write!(f, "[CLOSE] <{o}>"),
            Action::Switchon(o) => write!(f, "[SWITCHON] <{o}>"),
            Action::Switchoff(o) => write!(f, "[SWITCHOFF] <{o}>"),
        }
    }
}

/// Name of the precondition that failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotExecutable {
    UnknownRoom,
    UnknownObject,
    NotVisible,
    NotGrabbable,
    HandsFull,
    NotHeld,
    NotSurface,
    NotContainer,
    ContainerClosed,
    NotOpenable,
    NotSwitchable,
    AlreadyOpen,
    AlreadyClosed,
    AlreadyOn,
    AlreadyOff,
}

impl fmt::Display for NotExecutable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum to json");
        f.write_str(s.as_str().unwrap_or("not_executable"))
    }
}

impl std::error::Error for NotExecutable {}

fn require_visible(state: &EnvironmentState, o: ObjectId) -> Result<(), NotExecutable> {
    if !state.objects.contains_key(&o) {
        return Err(NotExecutable::UnknownObject);
    }
    if !state.visible(o) {
        return Err(NotExecutable::NotVisible);
    }
    Ok(())
}

fn require_held(state: &EnvironmentState, o: ObjectId) -> Result<(), NotExecutable> {
    if !state.objects.contains_key(&o) {
        return Err(NotExecutable::UnknownObject);
    }
    if !state.holding(o) {
        return Err(NotExecutable::NotHeld);
    }
    Ok(())
}

/// Checks every precondition of `action` in `state`.
pub fn check(state: &EnvironmentState, action: Action) -> Result<(), NotExecutable> {
    match action {
        Action::Walk(r) => {
            if state.rooms.contains(&r) {
                Ok(())
            } else {
                Err(NotExecutable::UnknownRoom)
            }
        }
        Action::Grab(o) => {
            if !o.grabbable() {
                return Err(NotExecutable::NotGrabbable);
            }
            require_visible(state, o)?;
            if state.agent.inventory.len() >= INVENTORY_CAPACITY {
                return Err(NotExecutable::HandsFull);
            }
            Ok(())
        }
        Action::Putback(o, t) => {
            require_held(state, o)?;
            if !t.surface() {
                return Err(NotExecutable::NotSurface);
            }
            require_visible(state, t)
        }
        Action::Putin(o, t) => {
            require_held(state, o)?;
            if !t.container() {
                return Err(NotExecutable::NotContainer);
            }
            require_visible(state, t)?;
            if state.objects[&t].open == Some(false) {
                return Err(NotExecutable::ContainerClosed);
            }
            Ok(())
        }
        Action::Open(o) | Action::Close(o) => {
            if !o.openable() {
                return Err(NotExecutable::NotOpenable);
            }
            require_visible(state, o)?;
            let open = state.objects[&o].open.unwrap_or(false);
            match (action, open) {
                (Action::Open(_), true) => Err(NotExecutable::AlreadyOpen),
                (Action::Close(_), false) => Err(NotExecutable::AlreadyClosed),
                _ => Ok(()),
            }
        }
        Action::Switchon(o) | Action::Switchoff(o) => {
            if !o.switchable() {
                return Err(NotExecutable::NotSwitchable);
            }
            require_visible(state, o)?;
            let on = state.objects[&o].on.unwrap_or(false);
            match (action, on) {
                (Action::Switchon(_), true) => Err(NotExecutable::AlreadyOn),
                (Action::Switchoff(_), false) => Err(NotExecutable::AlreadyOff),
                _ => Ok(()),
            }
        }
    }
}

fn release(state: &mut EnvironmentState, o: ObjectId, kind: RelationKind, target: ObjectId) {
    let room = state.agent.room;
    state.agent.inventory.retain(|&x| x != o);
    state.relations.remove(&Relation {
        subject: o,
        kind: RelationKind::Held,
        target: Entity::Character,
    });
    state.relations.insert(Relation {
        subject: o,
        kind,
        target: Entity::Object(target),
    });
    let obj = state.objects.get_mut(&o).expect("held object exists");
    obj.held = false;
    obj.room = Some(room);
}

/// Applies `action` in place. On failure the state is untouched.
pub fn apply(state: &mut EnvironmentState, action: Action) -> Result<(), NotExecutable> {
    check(state, action)?;
    match action {
        Action::Walk(r) => state.agent.room = r,
        Action::Grab(o) => {
            state.relations.retain(|r| r.subject != o);
            state.relations.insert(Relation {
                subject: o,
                kind: RelationKind::Held,
                target: Entity::Character,
            });
            let obj = state.objects.get_mut(&o).expect("checked");
            obj.held = true;
            obj.room = None;
            state.agent.inventory.push(o);
        }
        Action::Putback(o, t) => release(state, o, RelationKind::On, t),
        Action::Putin(o, t) => release(state, o, RelationKind::Inside, t),
        Action::Open(o) => state.objects.get_mut(&o).expect("checked").open = Some(true),
        Action::Close(o) => state.objects.get_mut(&o).expect("checked").open = Some(false),
        Action::Switchon(o) => {
            state.objects.get_mut(&o).expect("checked").on = Some(true);
            if o == ObjectClass::Faucet {
                let in_sink: Vec<ObjectId> = state
                    .relations
                    .iter()
                    .filter(|r| {
                        r.kind == RelationKind::Inside
                            && r.target == Entity::Object(ObjectClass::Sink)
                    })
                    .map(|r| r.subject)
                    .collect();
                for id in in_sink {
                    let obj = state.objects.get_mut(&id).expect("relation subject exists");
                    if obj.dirty.is_some() {
                        obj.dirty = Some(false);
                    }
                }
            }
        }
        Action::Switchoff(o) => state.objects.get_mut(&o).expect("checked").on = Some(false),
    }
    Ok(())
}

/// Exactly the well-typed actions whose preconditions hold. Includes a WALK
/// to every room of the apartment.
pub fn executable_actions(state: &EnvironmentState) -> Vec<Action> {
    Action::all()
        .into_iter()
        .filter(|&a| check(state, a).is_ok())
        .collect()
}
