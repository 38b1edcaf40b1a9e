//! Iterative sign-gradient replanning.
//!
//! ```text
//! while score(m) < T and trials < K:
//!     m ← clip(m − α·sign(∇ loss(m)), low, high)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Result, TamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplanConfig {
    /// Step size α.
    pub alpha: f64,
    /// Acceptance threshold T on the goal-association score.
    pub threshold: f64,
    /// Maximum number of gradient steps K.
    pub max_trials: usize,
    pub clip_low: f64,
    pub clip_high: f64,
    /// Weight λ of `λ‖m − m₀‖²`.
    pub lambda: f64,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        ReplanConfig {
            alpha: 0.05,
            threshold: 0.5,
            max_trials: 10,
            clip_low: -3.0,
            clip_high: 3.0,
            lambda: 0.0,
        }
    }
}

impl ReplanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_low < self.clip_high) {
            return Err(TamError::Config(format!(
                "clip bounds [{}, {}] are not ordered",
                self.clip_low, self.clip_high
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(TamError::Config(format!("step size {} must be positive", self.alpha)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TamError::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignDescent {
    pub embedding: Vec<f64>,
    /// Gradient steps taken.
    pub trials: usize,
    pub accepted: bool,
}

/// One clipped sign step.
pub fn sign_step(x: &mut [f64], grad: &[f64], config: &ReplanConfig) {
    for (xi, &g) in x.iter_mut().zip(grad) {
        let s = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        *xi = (*xi - config.alpha * s).clamp(config.clip_low, config.clip_high);
    }
}

/// Runs the replan loop on `x0`. `score` decides acceptance (compared with
/// `T`), `grad` is the gradient of the objective at the current point.
pub fn sign_descent(
    x0: &[f64],
    config: &ReplanConfig,
    mut score: impl FnMut(&[f64]) -> Result<f64>,
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<SignDescent> {
    let mut x = x0.to_vec();
    let mut trials = 0;
    loop {
        if score(&x)? >= config.threshold {
            return Ok(SignDescent {
                embedding: x,
                trials,
                accepted: true,
            });
        }
        if trials >= config.max_trials {
            return Ok(SignDescent {
                embedding: x,
                trials,
                accepted: false,
            });
        }
        let g = grad(&x)?;
        if config.lambda != 0.0 {
            let g: Vec<f64> = g
                .iter()
                .zip(x.iter().zip(x0))
                .map(|(gi, (xi, x0i))| gi + 2.0 * config.lambda * (xi - x0i))
                .collect();
            sign_step(&mut x, &g, config);
        } else {
            sign_step(&mut x, &g, config);
        }
        trials += 1;
    }
}
