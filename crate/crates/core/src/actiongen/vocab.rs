use serde::{Deserialize, Serialize};

use crate::homesim::Action;

/// A decoder token: a grounded action, end of plan, or padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionToken {
    Act(Action),
    Stop,
    Pad,
}

/// Bijection between tokens and ids: actions in [`Action::all`] order,
/// then STOP, then PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionVocabulary {
    actions: Vec<Action>,
}

impl Default for ActionVocabulary {
    fn default() -> Self {
        ActionVocabulary {
            actions: Action::all(),
        }
    }
}

impl ActionVocabulary {
    pub fn len(&self) -> usize {
        self.actions.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stop(&self) -> usize {
        self.actions.len()
    }

    pub fn pad(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn encode(&self, token: ActionToken) -> Option<usize> {
        match token {
            ActionToken::Act(a) => a.index(),
            ActionToken::Stop => Some(self.stop()),
            ActionToken::Pad => Some(self.pad()),
        }
    }

    pub fn encode_action(&self, a: Action) -> Option<usize> {
        a.index()
    }

    pub fn decode(&self, id: usize) -> Option<ActionToken> {
        if id < self.actions.len() {
            Some(ActionToken::Act(self.actions[id]))
        } else if id == self.stop() {
            Some(ActionToken::Stop)
        } else if id == self.pad() {
            Some(ActionToken::Pad)
        } else {
            None
        }
    }

    /// Content hash used to detect mismatched artifacts.
    pub fn fingerprint(&self) -> String {
        let text: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        crate::tam::memory::sha256_hex(text.join("\n").as_bytes())
    }
}
