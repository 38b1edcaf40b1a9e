use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::action::{apply, Action, NotExecutable};
use super::observe::{render_observation, Observation};
use super::world::EnvironmentState;

/// Seeded source of observation noise.
#[derive(Clone, Debug)]
pub struct Sensor {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Sensor {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn observe(&mut self, before: &EnvironmentState, after: &EnvironmentState) -> Observation {
        render_observation(before, after, self.sigma, &mut self.rng)
    }
}

/// Runs `action` on a copy of `state`. On success returns the successor and
/// the observation of the transition; on failure nothing is observed and no
/// noise is drawn.
pub fn execute(
    state: &EnvironmentState,
    action: Action,
    sensor: &mut Sensor,
) -> Result<(EnvironmentState, Observation), NotExecutable> {
    let mut next = state.clone();
    apply(&mut next, action)?;
    let obs = sensor.observe(state, &next);
    Ok((next, obs))
}
