//! Expert demonstrations and the JSON-lines dataset format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{apply, Action, NotExecutable};
use super::apartment::{generate_apartment, ApartmentConfig};
use super::env::{execute, Sensor};
use super::facts::{graph_snapshot, Fact};
use super::observe::Observation;
use super::tasks::{Goal, TaskTemplate};
use super::world::{EnvironmentState, Room};
use crate::error::{Result, TamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub observation: Observation,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub episode_id: usize,
    pub goal: Goal,
    pub apartment_seed: u64,
    pub spawn_room: Room,
    /// State after spawning and task preparation, before the first action.
    pub initial_state: EnvironmentState,
    pub steps: Vec<DemoStep>,
    pub final_state: EnvironmentState,
    pub final_facts: BTreeSet<Fact>,
}

impl Demonstration {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Re-executes the recorded actions from the initial state.
    pub fn replay(&self) -> std::result::Result<EnvironmentState, (usize, NotExecutable)> {
        let mut state = self.initial_state.clone();
        for (i, step) in self.steps.iter().enumerate() {
            apply(&mut state, step.action).map_err(|e| (i, e))?;
        }
        Ok(state)
    }

    pub fn template(&self) -> Option<TaskTemplate> {
        TaskTemplate::from_goal_id(self.goal.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub apartment: ApartmentConfig,
    /// Inclusive range of apartment seeds episodes are drawn from.
    pub apartment_seeds: (u64, u64),
    pub sigma: f64,
    /// Resample budget per episode when a template cannot be satisfied.
    pub max_resamples: usize,
}

impl DemoConfig {
    pub fn train() -> Self {
        DemoConfig {
            apartment: ApartmentConfig::default(),
            apartment_seeds: (100, 199),
            sigma: 0.05,
            max_resamples: 20,
        }
    }

    pub fn test() -> Self {
        DemoConfig {
            apartment_seeds: (0, 9),
            ..Self::train()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
    /// Episodes regenerated because the template was unsatisfiable.
    pub resampled: usize,
}

fn episode_rng(seed: u64, episode: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32) ^ episode as u64);
    rng
}

/// Episode `i` uses template `templates[i % len]` and spawns in
/// `Room::SPAWN[(i / len) % 4]`, so every template sees all four spawn rooms.
pub fn generate_demonstrations(
    templates: &[TaskTemplate],
    n_episodes: usize,
    seed: u64,
    config: &DemoConfig,
) -> Result<DemoSet> {
    if n_episodes > 0 && templates.is_empty() {
        return Err(TamError::Config("no task templates".into()));
    }
    let (lo, hi) = config.apartment_seeds;
    if lo > hi {
        return Err(TamError::Config(format!("apartment seed range {lo}..={hi} is empty")));
    }
    config.apartment.validate()?;
    let mut demos = Vec::with_capacity(n_episodes);
    let mut resampled = 0;
    for episode_id in 0..n_episodes {
        let template = templates[episode_id % templates.len()];
        let spawn_room = Room::SPAWN[(episode_id / templates.len()) % Room::SPAWN.len()];
        let mut rng = episode_rng(seed, episode_id, 1);
        let mut attempt = 0;
        let demo = loop {
            let apartment_seed = rng.random_range(lo..=hi);
            match demonstrate(template, apartment_seed, spawn_room, config, seed, episode_id)? {
                Some(d) => break d,
                None if attempt < config.max_resamples => {
                    attempt += 1;
                    resampled += 1;
                }
                None => {
                    return Err(TamError::Config(format!(
                        "template '{}' unsatisfiable after {} resamples",
                        template.text(),
                        config.max_resamples
                    )))
                }
            }
        };
        demos.push(demo);
    }
    if resampled > 0 {
        warn!("{resampled} episodes resampled");
    }
    Ok(DemoSet { demos, resampled })
}

/// One expert episode in a fixed apartment, or `None` if the template
/// cannot be carried out there.
pub fn demonstrate(
    template: TaskTemplate,
    apartment_seed: u64,
    spawn_room: Room,
    config: &DemoConfig,
    seed: u64,
    episode_id: usize,
) -> Result<Option<Demonstration>> {
    let mut state = generate_apartment(apartment_seed, &config.apartment)?;
    if !state.rooms.contains(&spawn_room) {
        return Ok(None);
    }
    state.agent.room = spawn_room;
    template.prepare(&mut state);
    let Ok(actions) = template.expert(&state) else {
        return Ok(None);
    };
    let mut sensor = Sensor::new(config.sigma, episode_rng(seed, episode_id, 2).random());
    let initial_state = state.clone();
    let mut steps = Vec::with_capacity(actions.len());
    for action in actions {
        let (next, observation) = execute(&state, action, &mut sensor).map_err(|e| {
            TamError::Contract(format!("expert step {action} failed on replay: {e}"))
        })?;
        steps.push(DemoStep { observation, action });
        state = next;
    }
    Ok(Some(Demonstration {
        episode_id,
        goal: template.goal(),
        apartment_seed,
        spawn_room,
        initial_state,
        steps,
        final_facts: graph_snapshot(&state),
        final_state: state,
    }))
}

pub fn write_jsonl<W: Write>(demos: &[Demonstration], mut w: W) -> Result<()> {
    for d in demos {
        serde_json::to_writer(&mut w, d).map_err(|e| TamError::format("demonstration", e))?;
        w.write_all(b"\n").map_err(|e| TamError::io("<dataset>", e))?;
    }
    w.flush().map_err(|e| TamError::io("<dataset>", e))
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Demonstration>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TamError::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d = serde_json::from_str(&line)
            .map_err(|e| TamError::format(format!("dataset line {}", i + 1), e))?;
        out.push(d);
    }
    Ok(out)
}
