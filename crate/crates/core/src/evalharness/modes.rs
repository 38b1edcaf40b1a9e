//! Evaluation modes and the episode interfaces behind them.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actiongen::{PlanInterface, Submission};
use crate::error::{Result, TamError};
use crate::homesim::{apply, executable_actions, execute, Action, Demonstration, EnvironmentState, Sensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalMode {
    PureText,
    VisStatic,
    VisInteractive,
    VisInteractiveAttack,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::PureText,
        EvalMode::VisStatic,
        EvalMode::VisInteractive,
        EvalMode::VisInteractiveAttack,
    ];

    pub fn interactive(self) -> bool {
        matches!(self, EvalMode::VisInteractive | EvalMode::VisInteractiveAttack)
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::PureText => "PURE_TEXT",
            EvalMode::VisStatic => "VIS_STATIC",
            EvalMode::VisInteractive => "VIS_INTERACTIVE",
            EvalMode::VisInteractiveAttack => "VIS_INTERACTIVE_ATTACK",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = TamError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        EvalMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| TamError::Config(format!("unknown evaluation mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Per-step replacement probability.
    pub p: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { p: 0.15, seed: 0 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(TamError::Config(format!("attack probability {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Goal only. Actions are checked against a shadow simulation that the
/// planner never sees.
#[derive(Clone, Debug)]
pub struct PureTextInterface {
    pub shadow: EnvironmentState,
}

impl PlanInterface for PureTextInterface {
    fn observation(&self) -> Option<Vec<f64>> {
        None
    }

    fn submit(&mut self, action: Action) -> Submission {
        shadow_submit(&mut self.shadow, action)
    }
}

fn shadow_submit(state: &mut EnvironmentState, action: Action) -> Submission {
    match apply(state, action) {
        Ok(()) => Submission {
            executed: Some(action),
            failure: None,
            attacked: false,
        },
        Err(e) => Submission {
            executed: None,
            failure: Some(e),
            attacked: false,
        },
    }
}

/// Replays the recorded observation stream whatever the planner does.
#[derive(Clone, Debug)]
pub struct StaticInterface {
    frames: Vec<Vec<f64>>,
    t: usize,
    pub shadow: EnvironmentState,
}

impl StaticInterface {
    pub fn new(demo: &Demonstration) -> Self {
        let mut frames = Vec::with_capacity(demo.steps.len() + 1);
        if let Some(first) = demo.steps.first() {
            frames.push(first.observation.start_features.clone());
        }
        frames.extend(demo.steps.iter().map(|s| s.observation.end_features.clone()));
        StaticInterface {
            frames,
            t: 0,
            shadow: demo.initial_state.clone(),
        }
    }
}

impl PlanInterface for StaticInterface {
    fn observation(&self) -> Option<Vec<f64>> {
        let last = self.frames.len().checked_sub(1)?;
        Some(self.frames[self.t.min(last)].clone())
    }

    fn submit(&mut self, action: Action) -> Submission {
        self.t += 1;
        shadow_submit(&mut self.shadow, action)
    }
}

/// Live simulator: executed actions determine the next observation. With
/// an attack, each submitted action is replaced with probability `p` by a
/// uniformly drawn executable action.
#[derive(Clone, Debug)]
pub struct InteractiveInterface {
    pub state: EnvironmentState,
    frame: Vec<f64>,
    sensor: Sensor,
    attack: Option<(f64, ChaCha8Rng)>,
}

impl InteractiveInterface {
    pub fn new(initial: &EnvironmentState, sigma: f64, sensor_seed: u64, attack: Option<(f64, u64)>) -> Self {
        let mut sensor = Sensor::new(sigma, sensor_seed);
        let frame = sensor.observe(initial, initial).end_features;
        InteractiveInterface {
            state: initial.clone(),
            frame,
            sensor,
            attack: attack.map(|(p, seed)| (p, ChaCha8Rng::seed_from_u64(seed))),
        }
    }
}

impl PlanInterface for InteractiveInterface {
    fn observation(&self) -> Option<Vec<f64>> {
        Some(self.frame.clone())
    }

    fn submit(&mut self, action: Action) -> Submission {
        let mut run = action;
        let mut attacked = false;
        if let Some((p, rng)) = &mut self.attack {
            if *p > 0.0 && rng.random::<f64>() < *p {
                let options = executable_actions(&self.state);
                if let Some(&a) = options.choose(rng) {
                    run = a;
                    attacked = true;
                }
            }
        }
        match execute(&self.state, run, &mut self.sensor) {
            Ok((next, obs)) => {
                self.state = next;
                self.frame = obs.end_features;
                Submission {
                    executed: Some(run),
                    failure: None,
                    attacked,
                }
            }
            Err(e) => Submission {
                executed: None,
                failure: Some(e),
                attacked,
            },
        }
    }
}
