//! Household task templates and the scripted expert.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::action::{apply, Action, NotExecutable};
use super::world::{EnvironmentState, ObjectClass, RelationKind, Room};

/// Index into the goal vocabulary plus display text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Goal {
    pub id: usize,
    pub text: String,
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    SetUpTable,
    MakeCoffee,
    WatchTv,
    WriteEmail,
    WashPlate,
    StoreGroceries,
    ReadBook,
    CleanKitchen,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 8] = [
        TaskTemplate::SetUpTable,
        TaskTemplate::MakeCoffee,
        TaskTemplate::WatchTv,
        TaskTemplate::WriteEmail,
        TaskTemplate::WashPlate,
        TaskTemplate::StoreGroceries,
        TaskTemplate::ReadBook,
        TaskTemplate::CleanKitchen,
    ];

    pub fn text(self) -> &'static str {
        match self {
            TaskTemplate::SetUpTable => "set up table",
            TaskTemplate::MakeCoffee => "make coffee",
            TaskTemplate::WatchTv => "watch tv",
            TaskTemplate::WriteEmail => "write email",
            TaskTemplate::WashPlate => "wash plate",
            TaskTemplate::StoreGroceries => "store groceries",
            TaskTemplate::ReadBook => "read book",
            TaskTemplate::CleanKitchen => "clean kitchen",
        }
    }

    pub fn goal(self) -> Goal {
        Goal {
            id: self as usize,
            text: self.text().to_owned(),
        }
    }

    pub fn from_goal_id(id: usize) -> Option<TaskTemplate> {
        Self::ALL.get(id).copied()
    }

    /// Start-state adjustments so the task is not already half done (the
    /// plate to wash is dirty, the device to use starts off).
    pub fn prepare(self, state: &mut EnvironmentState) {
        let off = |s: &mut EnvironmentState, o: ObjectClass| {
            if let Some(x) = s.objects.get_mut(&o) {
                x.on = Some(false);
            }
        };
        match self {
            TaskTemplate::WashPlate => {
                if let Some(p) = state.objects.get_mut(&ObjectClass::Plate) {
                    p.dirty = Some(true);
                }
                off(state, ObjectClass::Faucet);
            }
            TaskTemplate::CleanKitchen => off(state, ObjectClass::Faucet),
            TaskTemplate::MakeCoffee => off(state, ObjectClass::CoffeeMaker),
            TaskTemplate::WatchTv => off(state, ObjectClass::Tv),
            TaskTemplate::WriteEmail => off(state, ObjectClass::Computer),
            TaskTemplate::ReadBook => off(state, ObjectClass::Lamp),
            _ => {}
        }
    }

    /// Runs the expert from `state`, returning its action sequence.
    pub fn expert(self, state: &EnvironmentState) -> Result<Vec<Action>, Unsatisfiable> {
        use ObjectClass::*;
        let mut e = Expert::new(state);
        match self {
            TaskTemplate::SetUpTable => {
                e.fetch(Plate)?;
                e.fetch(Cup)?;
                e.place_on(Plate, Table)?;
                e.place_on(Cup, Table)?;
            }
            TaskTemplate::MakeCoffee => {
                e.fetch(Cup)?;
                e.place_on(Cup, CoffeeMaker)?;
                e.switch(CoffeeMaker, true)?;
                e.fetch(Cup)?;
                e.place_on(Cup, Table)?;
            }
            TaskTemplate::WatchTv => {
                e.fetch(Remote)?;
                let room = e.room_of(Tv)?;
                e.switch(Tv, true)?;
                if e.room_of(Lamp).ok() == Some(room) && e.is_on(Lamp) {
                    e.switch(Lamp, false)?;
                }
                let seat = if e.room_of(Sofa).ok() == Some(room) { Sofa } else { Bed };
                e.place_on(Remote, seat)?;
            }
            TaskTemplate::WriteEmail => {
                e.fetch(Book)?;
                e.place_on(Book, Desk)?;
                e.switch(Computer, true)?;
            }
            TaskTemplate::WashPlate => {
                e.fetch(Plate)?;
                e.place_in(Plate, Sink)?;
                e.switch(Faucet, true)?;
                e.switch(Faucet, false)?;
                e.fetch(Plate)?;
                e.place_on(Plate, Counter)?;
            }
            TaskTemplate::StoreGroceries => {
                e.fetch(Groceries)?;
                e.place_in(Groceries, Fridge)?;
                e.close(Fridge)?;
            }
            TaskTemplate::ReadBook => {
                e.fetch(Book)?;
                e.goto(Room::LivingRoom)?;
                if e.room_of(Lamp).ok() == Some(Room::LivingRoom) && !e.is_on(Lamp) {
                    e.switch(Lamp, true)?;
                }
                e.place_on(Book, Sofa)?;
            }
            TaskTemplate::CleanKitchen => {
                e.fetch(Sponge)?;
                e.place_in(Sponge, Sink)?;
                e.switch(Faucet, true)?;
                e.switch(Faucet, false)?;
                for c in [Cabinet, Fridge] {
                    if e.room_of(c).ok() == Some(Room::Kitchen) && e.is_open(c) {
                        e.close(c)?;
                    }
                }
            }
        }
        Ok(e.actions)
    }
}

/// The template needs an object or room the apartment lacks, or a scripted
/// step was rejected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Unsatisfiable {
    Missing(ObjectClass),
    MissingRoom(Room),
    Rejected(Action, NotExecutable),
}

impl fmt::Display for Unsatisfiable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unsatisfiable::Missing(o) => write!(f, "no {o} in apartment"),
            Unsatisfiable::MissingRoom(r) => write!(f, "no {r} in apartment"),
            Unsatisfiable::Rejected(a, why) => write!(f, "{a} rejected: {why}"),
        }
    }
}

impl std::error::Error for Unsatisfiable {}

/// Macro executor: each helper emits only the steps the current state still
/// needs.
struct Expert {
    state: EnvironmentState,
    actions: Vec<Action>,
}

impl Expert {
    fn new(state: &EnvironmentState) -> Self {
        Expert {
            state: state.clone(),
            actions: Vec::new(),
        }
    }

    fn act(&mut self, a: Action) -> Result<(), Unsatisfiable> {
        apply(&mut self.state, a).map_err(|why| Unsatisfiable::Rejected(a, why))?;
        self.actions.push(a);
        Ok(())
    }

    fn room_of(&self, o: ObjectClass) -> Result<Room, Unsatisfiable> {
        let obj = self.state.object(o).ok_or(Unsatisfiable::Missing(o))?;
        Ok(obj.room.unwrap_or(self.state.agent.room))
    }

    fn is_on(&self, o: ObjectClass) -> bool {
        self.state.object(o).and_then(|x| x.on) == Some(true)
    }

    fn is_open(&self, o: ObjectClass) -> bool {
        self.state.object(o).and_then(|x| x.open) == Some(true)
    }

    fn goto(&mut self, room: Room) -> Result<(), Unsatisfiable> {
        if !self.state.rooms.contains(&room) {
            return Err(Unsatisfiable::MissingRoom(room));
        }
        if self.state.agent.room != room {
            self.act(Action::Walk(room))?;
        }
        Ok(())
    }

    fn fetch(&mut self, o: ObjectClass) -> Result<(), Unsatisfiable> {
        if self.state.holding(o) {
            return Ok(());
        }
        let room = self.room_of(o)?;
        self.goto(room)?;
        if let Some((RelationKind::Inside, c)) = self.state.placement(o) {
            if c.openable() && !self.is_open(c) {
                self.act(Action::Open(c))?;
            }
        }
        self.act(Action::Grab(o))
    }

    fn place_on(&mut self, o: ObjectClass, target: ObjectClass) -> Result<(), Unsatisfiable> {
        let room = self.room_of(target)?;
        self.goto(room)?;
        self.act(Action::Putback(o, target))
    }

    fn place_in(&mut self, o: ObjectClass, target: ObjectClass) -> Result<(), Unsatisfiable> {
        let room = self.room_of(target)?;
        self.goto(room)?;
        if target.openable() && !self.is_open(target) {
            self.act(Action::Open(target))?;
        }
        self.act(Action::Putin(o, target))
    }

    fn switch(&mut self, o: ObjectClass, on: bool) -> Result<(), Unsatisfiable> {
        let room = self.room_of(o)?;
        if self.is_on(o) == on {
            return Ok(());
        }
        self.goto(room)?;
        self.act(if on { Action::Switchon(o) } else { Action::Switchoff(o) })
    }

    fn close(&mut self, o: ObjectClass) -> Result<(), Unsatisfiable> {
        let room = self.room_of(o)?;
        if !self.is_open(o) {
            return Ok(());
        }
        self.goto(room)?;
        self.act(Action::Close(o))
    }
}
