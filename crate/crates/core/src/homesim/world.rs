//! Scene vocabulary and the ground-truth environment state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Room {
    Kitchen,
    LivingRoom,
    Bedroom,
    Bathroom,
    DiningRoom,
    Office,
}

impl Room {
    pub const ALL: [Room; 6] = [
        Room::Kitchen,
        Room::LivingRoom,
        Room::Bedroom,
        Room::Bathroom,
        Room::DiningRoom,
        Room::Office,
    ];

    /// Rooms the character can be spawned in.
    pub const SPAWN: [Room; 4] = [Room::Kitchen, Room::LivingRoom, Room::Bedroom, Room::Bathroom];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Room::Kitchen => "kitchen",
            Room::LivingRoom => "living_room",
            Room::Bedroom => "bedroom",
            Room::Bathroom => "bathroom",
            Room::DiningRoom => "dining_room",
            Room::Office => "office",
        }
    }
}

impl fmt::Display for Room {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    // portable
    Plate,
    Cup,
    Remote,
    Book,
    Groceries,
    Sponge,
    Towel,
    // fixtures
    Counter,
    Table,
    Sofa,
    Bed,
    Desk,
    Shelf,
    Bathtub,
    TowelRack,
    CoffeeMaker,
    Sink,
    Cabinet,
    Fridge,
    Faucet,
    Tv,
    Computer,
    Lamp,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 23] = [
        ObjectClass::Plate,
        ObjectClass::Cup,
        ObjectClass::Remote,
        ObjectClass::Book,
        ObjectClass::Groceries,
        ObjectClass::Sponge,
        ObjectClass::Towel,
        ObjectClass::Counter,
        ObjectClass::Table,
        ObjectClass::Sofa,
        ObjectClass::Bed,
        ObjectClass::Desk,
        ObjectClass::Shelf,
        ObjectClass::Bathtub,
        ObjectClass::TowelRack,
        ObjectClass::CoffeeMaker,
        ObjectClass::Sink,
        ObjectClass::Cabinet,
        ObjectClass::Fridge,
        ObjectClass::Faucet,
        ObjectClass::Tv,
        ObjectClass::Computer,
        ObjectClass::Lamp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Plate => "plate",
            ObjectClass::Cup => "cup",
            ObjectClass::Remote => "remote",
            ObjectClass::Book => "book",
            ObjectClass::Groceries => "groceries",
            ObjectClass::Sponge => "sponge",
            ObjectClass::Towel => "towel",
            ObjectClass::Counter => "counter",
            ObjectClass::Table => "table",
            ObjectClass::Sofa => "sofa",
            ObjectClass::Bed => "bed",
            ObjectClass::Desk => "desk",
            ObjectClass::Shelf => "shelf",
            ObjectClass::Bathtub => "bathtub",
            ObjectClass::TowelRack => "towel_rack",
            ObjectClass::CoffeeMaker => "coffee_maker",
            ObjectClass::Sink => "sink",
            ObjectClass::Cabinet => "cabinet",
            ObjectClass::Fridge => "fridge",
            ObjectClass::Faucet => "faucet",
            ObjectClass::Tv => "tv",
            ObjectClass::Computer => "computer",
            ObjectClass::Lamp => "lamp",
        }
    }

    pub fn grabbable(self) -> bool {
        self.index() <= ObjectClass::Towel.index()
    }

    /// Objects can be put on top of it.
    pub fn surface(self) -> bool {
        matches!(
            self,
            ObjectClass::Counter
                | ObjectClass::Table
                | ObjectClass::Sofa
                | ObjectClass::Bed
                | ObjectClass::Desk
                | ObjectClass::Shelf
                | ObjectClass::Bathtub
                | ObjectClass::TowelRack
                | ObjectClass::CoffeeMaker
        )
    }

    /// Objects can be put inside it.
    pub fn container(self) -> bool {
        matches!(self, ObjectClass::Sink | ObjectClass::Cabinet | ObjectClass::Fridge)
    }

    pub fn openable(self) -> bool {
        matches!(self, ObjectClass::Cabinet | ObjectClass::Fridge)
    }

    pub fn switchable(self) -> bool {
        matches!(
            self,
            ObjectClass::Faucet
                | ObjectClass::CoffeeMaker
                | ObjectClass::Tv
                | ObjectClass::Computer
                | ObjectClass::Lamp
        )
    }

    pub fn cleanable(self) -> bool {
        matches!(self, ObjectClass::Plate | ObjectClass::Cup)
    }

    pub fn grabbables() -> impl Iterator<Item = ObjectClass> {
        Self::ALL.into_iter().filter(|c| c.grabbable())
    }

    pub fn receptacles() -> impl Iterator<Item = ObjectClass> {
        Self::ALL.into_iter().filter(|c| c.surface() || c.container())
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One instance per class lives in an apartment, so the class doubles as
/// the object id.
pub type ObjectId = ObjectClass;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    /// `None` while held.
    pub room: Option<Room>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirty: Option<bool>,
    pub held: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    On,
    Inside,
    Near,
    Held,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Object(ObjectClass),
    Character,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Object(o) => o.fmt(f),
            Entity::Character => f.write_str("character"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub subject: ObjectClass,
    pub kind: RelationKind,
    pub target: Entity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub room: Room,
    /// Held objects in pick-up order; at most [`INVENTORY_CAPACITY`].
    pub inventory: Vec<ObjectId>,
}

pub const INVENTORY_CAPACITY: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub rooms: BTreeSet<Room>,
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub relations: BTreeSet<Relation>,
    pub agent: Agent,
}

impl EnvironmentState {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectState> {
        self.objects.get(&id)
    }

    pub fn holding(&self, id: ObjectId) -> bool {
        self.agent.inventory.contains(&id)
    }

    /// Where a portable object currently rests, if placed.
    pub fn placement(&self, id: ObjectId) -> Option<(RelationKind, ObjectClass)> {
        self.relations
            .range(
                Relation {
                    subject: id,
                    kind: RelationKind::On,
                    target: Entity::Object(ObjectClass::Plate),
                }..,
            )
            .take_while(|r| r.subject == id)
            .find_map(|r| match (r.kind, r.target) {
                (RelationKind::On | RelationKind::Inside, Entity::Object(t)) => Some((r.kind, t)),
                _ => None,
            })
    }

    /// In the agent's room and not shut inside a closed container.
    pub fn visible(&self, id: ObjectId) -> bool {
        let Some(obj) = self.objects.get(&id) else {
            return false;
        };
        if obj.held || obj.room != Some(self.agent.room) {
            return false;
        }
        match self.placement(id) {
            Some((RelationKind::Inside, container)) => self
                .objects
                .get(&container)
                .and_then(|c| c.open)
                .unwrap_or(true),
            _ => true,
        }
    }

    pub fn visible_objects(&self) -> BTreeSet<ObjectId> {
        self.objects
            .keys()
            .copied()
            .filter(|&id| self.visible(id))
            .collect()
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.agent.inventory.len() > INVENTORY_CAPACITY {
            return Err(format!("inventory holds {}", self.agent.inventory.len()));
        }
        if !self.rooms.contains(&self.agent.room) {
            return Err(format!("agent in missing room {}", self.agent.room));
        }
        for (&id, obj) in &self.objects {
            let in_inv = self.agent.inventory.contains(&id);
            if obj.held != in_inv {
                return Err(format!("{id}: held flag disagrees with inventory"));
            }
            match (obj.room, obj.held) {
                (Some(_), true) | (None, false) => {
                    return Err(format!("{id}: must be in exactly one room or held"))
                }
                (Some(r), false) if !self.rooms.contains(&r) => {
                    return Err(format!("{id}: in missing room {r}"))
                }
                _ => {}
            }
        }
        for &id in &self.agent.inventory {
            if !self.objects.contains_key(&id) {
                return Err(format!("inventory holds unknown object {id}"));
            }
        }
        for rel in &self.relations {
            if !self.objects.contains_key(&rel.subject) {
                return Err(format!("relation subject {} missing", rel.subject));
            }
            if let Entity::Object(t) = rel.target {
                if !self.objects.contains_key(&t) {
                    return Err(format!("relation target {t} missing"));
                }
            }
        }
        Ok(())
    }
}
