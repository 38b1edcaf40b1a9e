//! Partial egocentric observations.
//!
//! A frame is a multi-hot vector over
//! `[current room | visible classes | visible open/on/dirty bits | inventory |
//! visible placements (portable × receptacle)]` plus Gaussian noise.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{EnvironmentState, ObjectClass, ObjectId, Room};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub start_features: Vec<f64>,
    pub end_features: Vec<f64>,
    /// Objects in view at the end of the action. Never fed to networks.
    pub visible_objects: BTreeSet<ObjectId>,
}

impl Observation {
    /// `[start | end]`, the stacked input of the observation encoder.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.start_features.len() * 2);
        v.extend_from_slice(&self.start_features);
        v.extend_from_slice(&self.end_features);
        v
    }
}

struct Layout {
    room: usize,
    visible: usize,
    open: usize,
    on: usize,
    dirty: usize,
    inventory: usize,
    placement: usize,
    openables: Vec<ObjectClass>,
    switchables: Vec<ObjectClass>,
    cleanables: Vec<ObjectClass>,
    grabbables: Vec<ObjectClass>,
    receptacles: Vec<ObjectClass>,
    len: usize,
}

fn layout() -> &'static Layout {
    static LAYOUT: OnceLock<Layout> = OnceLock::new();
    LAYOUT.get_or_init(|| {
        let all = ObjectClass::ALL;
        let openables: Vec<_> = all.into_iter().filter(|c| c.openable()).collect();
        let switchables: Vec<_> = all.into_iter().filter(|c| c.switchable()).collect();
        let cleanables: Vec<_> = all.into_iter().filter(|c| c.cleanable()).collect();
        let grabbables: Vec<_> = ObjectClass::grabbables().collect();
        let receptacles: Vec<_> = ObjectClass::receptacles().collect();
        let room = 0;
        let visible = room + Room::ALL.len();
        let open = visible + all.len();
        let on = open + openables.len();
        let dirty = on + switchables.len();
        let inventory = dirty + cleanables.len();
        let placement = inventory + grabbables.len();
        let len = placement + grabbables.len() * receptacles.len();
        Layout {
            room,
            visible,
            open,
            on,
            dirty,
            inventory,
            placement,
            openables,
            switchables,
            cleanables,
            grabbables,
            receptacles,
            len,
        }
    })
}

/// Length of one frame's feature vector.
pub fn feature_len() -> usize {
    layout().len
}

fn pos<T: PartialEq>(list: &[T], x: &T) -> usize {
    list.iter().position(|y| y == x).expect("class in layout")
}

/// Noiseless multi-hot encoding of what the agent perceives in `state`.
pub fn encode_state(state: &EnvironmentState) -> Vec<f64> {
    let l = layout();
    let mut f = vec![0.0; l.len];
    f[l.room + state.agent.room.index()] = 1.0;
    for id in state.visible_objects() {
        f[l.visible + id.index()] = 1.0;
        let obj = &state.objects[&id];
        if obj.open == Some(true) {
            f[l.open + pos(&l.openables, &id)] = 1.0;
        }
        if obj.on == Some(true) {
            f[l.on + pos(&l.switchables, &id)] = 1.0;
        }
        if obj.dirty == Some(true) {
            f[l.dirty + pos(&l.cleanables, &id)] = 1.0;
        }
        if id.grabbable() {
            if let Some((_, target)) = state.placement(id) {
                let g = pos(&l.grabbables, &id);
                let r = pos(&l.receptacles, &target);
                f[l.placement + g * l.receptacles.len() + r] = 1.0;
            }
        }
    }
    for &id in &state.agent.inventory {
        f[l.inventory + pos(&l.grabbables, &id)] = 1.0;
        let obj = &state.objects[&id];
        if obj.dirty == Some(true) {
            f[l.dirty + pos(&l.cleanables, &id)] = 1.0;
        }
    }
    f
}

fn noisy(clean: Vec<f64>, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma <= 0.0 {
        return clean;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    clean.into_iter().map(|v| v + normal.sample(rng)).collect()
}

/// Start frame from `before`, end frame from `after`, each with independent
/// `N(0, σ²)` noise drawn from `rng`.
pub fn render_observation(
    before: &EnvironmentState,
    after: &EnvironmentState,
    sigma: f64,
    rng: &mut impl Rng,
) -> Observation {
    let start_features = noisy(encode_state(before), sigma, rng);
    let end_features = noisy(encode_state(after), sigma, rng);
    Observation {
        start_features,
        end_features,
        visible_objects: after.visible_objects(),
    }
}
