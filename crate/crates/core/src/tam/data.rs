//! Per-step training samples flattened out of demonstrations.

use crate::homesim::Demonstration;

#[derive(Clone, Debug, PartialEq)]
pub struct StepSample {
    /// `[start | end]` features.
    pub stacked: Vec<f64>,
    pub action: usize,
    pub goal: usize,
    pub episode: usize,
    pub step: usize,
}

impl StepSample {
    pub fn start(&self) -> &[f64] {
        &self.stacked[..self.stacked.len() / 2]
    }

    pub fn end(&self) -> &[f64] {
        &self.stacked[self.stacked.len() / 2..]
    }
}

pub fn step_samples(demos: &[Demonstration]) -> Vec<StepSample> {
    let mut out = Vec::new();
    for d in demos {
        for (i, s) in d.steps.iter().enumerate() {
            out.push(StepSample {
                stacked: s.observation.stacked(),
                action: s.action.index().expect("demonstrations hold well-typed actions"),
                goal: d.goal.id,
                episode: d.episode_id,
                step: i,
            });
        }
    }
    out
}

/// About one episode in eleven is held out for the reported metrics. The
/// modulus is coprime with the template cycle, so every goal is represented.
pub fn is_held_out(episode: usize) -> bool {
    episode % 11 == 10
}

pub fn split_samples(samples: &[StepSample]) -> (Vec<&StepSample>, Vec<&StepSample>) {
    samples.iter().partition(|s| !is_held_out(s.episode))
}
