//! Seeded apartment generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{
    Agent, Entity, EnvironmentState, ObjectClass, ObjectState, Relation, RelationKind, Room,
};
use crate::error::{Result, TamError};

/// Where a portable object may start out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Home {
    pub room: Room,
    pub receptacle: ObjectClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub class: ObjectClass,
    /// Candidate rooms; one present room is picked uniformly.
    pub rooms: Vec<Room>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortableSpec {
    pub class: ObjectClass,
    pub homes: Vec<Home>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateProbabilities {
    pub open: f64,
    pub on: f64,
    pub dirty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApartmentConfig {
    /// Inclusive range of the room count.
    pub min_rooms: usize,
    pub max_rooms: usize,
    /// Rooms present in every apartment (when the count allows).
    pub required_rooms: Vec<Room>,
    pub optional_rooms: Vec<Room>,
    pub fixtures: Vec<FixtureSpec>,
    pub portables: Vec<PortableSpec>,
    pub state_probabilities: StateProbabilities,
}

impl Default for ApartmentConfig {
    fn default() -> Self {
        use ObjectClass::*;
        use Room::*;
        let fx = |class, rooms: &[Room]| FixtureSpec {
            class,
            rooms: rooms.to_vec(),
        };
        let home = |room, receptacle| Home { room, receptacle };
        ApartmentConfig {
            min_rooms: 4,
            max_rooms: 6,
            required_rooms: Room::SPAWN.to_vec(),
            optional_rooms: vec![DiningRoom, Office],
            fixtures: vec![
                fx(Counter, &[Kitchen]),
                fx(Sink, &[Kitchen]),
                fx(Faucet, &[Kitchen]),
                fx(Fridge, &[Kitchen]),
                fx(CoffeeMaker, &[Kitchen]),
                fx(Cabinet, &[Kitchen, DiningRoom]),
                fx(Table, &[DiningRoom, Kitchen]),
                fx(Sofa, &[LivingRoom]),
                fx(Tv, &[LivingRoom, Bedroom]),
                fx(Lamp, &[LivingRoom, Bedroom]),
                fx(Shelf, &[LivingRoom, Office, Bedroom]),
                fx(Bed, &[Bedroom]),
                fx(Desk, &[Office, Bedroom]),
                fx(Computer, &[Office, Bedroom]),
                fx(Bathtub, &[Bathroom]),
                fx(TowelRack, &[Bathroom]),
            ],
            portables: vec![
                PortableSpec {
                    class: Plate,
                    homes: vec![
                        home(Kitchen, Cabinet),
                        home(Kitchen, Counter),
                        home(DiningRoom, Cabinet),
                    ],
                },
                PortableSpec {
                    class: Cup,
                    homes: vec![
                        home(Kitchen, Cabinet),
                        home(Kitchen, Counter),
                        home(DiningRoom, Cabinet),
                    ],
                },
                PortableSpec {
                    class: Remote,
                    homes: vec![home(LivingRoom, Sofa), home(LivingRoom, Shelf), home(Bedroom, Bed)],
                },
                PortableSpec {
                    class: Book,
                    homes: vec![
                        home(LivingRoom, Shelf),
                        home(Bedroom, Shelf),
                        home(Office, Shelf),
                        home(Bedroom, Bed),
                    ],
                },
                PortableSpec {
                    class: Groceries,
                    homes: vec![
                        home(Kitchen, Counter),
                        home(LivingRoom, Sofa),
                        home(DiningRoom, Table),
                    ],
                },
                PortableSpec {
                    class: Sponge,
                    homes: vec![home(Kitchen, Counter), home(Bathroom, Bathtub)],
                },
                PortableSpec {
                    class: Towel,
                    homes: vec![home(Bathroom, TowelRack), home(Bedroom, Bed)],
                },
            ],
            state_probabilities: StateProbabilities {
                open: 0.3,
                on: 0.3,
                dirty: 0.5,
            },
        }
    }
}

impl ApartmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rooms == 0 {
            return Err(TamError::Config("apartment needs at least one room".into()));
        }
        if self.min_rooms > self.max_rooms {
            return Err(TamError::Config(format!(
                "room range {}..={} is empty",
                self.min_rooms, self.max_rooms
            )));
        }
        let mut pool: BTreeSet<Room> = self.required_rooms.iter().copied().collect();
        pool.extend(self.optional_rooms.iter().copied());
        if pool.len() < self.min_rooms {
            return Err(TamError::Config(format!(
                "only {} distinct rooms available for at least {}",
                pool.len(),
                self.min_rooms
            )));
        }
        for p in [
            self.state_probabilities.open,
            self.state_probabilities.on,
            self.state_probabilities.dirty,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TamError::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        for spec in &self.portables {
            if !spec.class.grabbable() {
                return Err(TamError::Config(format!("{} is not portable", spec.class)));
            }
            for h in &spec.homes {
                if !(h.receptacle.surface() || h.receptacle.container()) {
                    return Err(TamError::Config(format!(
                        "{} cannot hold {}",
                        h.receptacle, spec.class
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic apartment for `seed`. The agent starts in the first room.
pub fn generate_apartment(seed: u64, config: &ApartmentConfig) -> Result<EnvironmentState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a9a7_0000_0000);

    let n_rooms = rng.random_range(config.min_rooms..=config.max_rooms);
    let mut rooms: Vec<Room> = Vec::new();
    for &r in &config.required_rooms {
        if rooms.len() < n_rooms && !rooms.contains(&r) {
            rooms.push(r);
        }
    }
    let mut extra: Vec<Room> = config
        .optional_rooms
        .iter()
        .copied()
        .filter(|r| !rooms.contains(r))
        .collect();
    extra.shuffle(&mut rng);
    rooms.extend(extra.into_iter().take(n_rooms.saturating_sub(rooms.len())));
    let room_set: BTreeSet<Room> = rooms.iter().copied().collect();

    let probs = &config.state_probabilities;
    let mut objects = BTreeMap::new();
    for spec in &config.fixtures {
        let present: Vec<Room> = spec
            .rooms
            .iter()
            .copied()
            .filter(|r| room_set.contains(r))
            .collect();
        let Some(&room) = present.choose(&mut rng) else {
            continue;
        };
        let c = spec.class;
        objects.insert(
            c,
            ObjectState {
                room: Some(room),
                open: c.openable().then(|| rng.random_bool(probs.open)),
                on: c.switchable().then(|| rng.random_bool(probs.on)),
                dirty: None,
                held: false,
            },
        );
    }

    let mut relations = BTreeSet::new();
    for spec in &config.portables {
        let homes: Vec<&Home> = spec
            .homes
            .iter()
            .filter(|h| {
                objects
                    .get(&h.receptacle)
                    .is_some_and(|o: &ObjectState| o.room == Some(h.room))
            })
            .collect();
        let Some(home) = homes.choose(&mut rng) else {
            continue;
        };
        let c = spec.class;
        objects.insert(
            c,
            ObjectState {
                room: Some(home.room),
                open: None,
                on: None,
                dirty: c.cleanable().then(|| rng.random_bool(probs.dirty)),
                held: false,
            },
        );
        let kind = if home.receptacle.container() {
            RelationKind::Inside
        } else {
            RelationKind::On
        };
        relations.insert(Relation {
            subject: c,
            kind,
            target: Entity::Object(home.receptacle),
        });
    }

    // Static furniture adjacency inside each room.
    for &room in &rooms {
        let fixtures: Vec<ObjectClass> = objects
            .iter()
            .filter(|(c, o)| !c.grabbable() && o.room == Some(room))
            .map(|(&c, _)| c)
            .collect();
        for pair in fixtures.windows(2) {
            relations.insert(Relation {
                subject: pair[0],
                kind: RelationKind::Near,
                target: Entity::Object(pair[1]),
            });
        }
    }

    let state = EnvironmentState {
        rooms: room_set,
        objects,
        relations,
        agent: Agent {
            room: rooms[0],
            inventory: Vec::new(),
        },
    };
    debug_assert!(state.check_invariants().is_ok());
    Ok(state)
}
