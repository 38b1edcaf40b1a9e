//! Action generation: a causal transformer decoder conditioned on the goal,
//! the action history and retrieved memory, and the closed-loop planner
//! around it.

pub mod classifier;
pub mod context;
pub mod decoder;
pub mod plan;
pub mod train;
pub mod vocab;

pub use classifier::{ClassifierConfig, LinearPolicy};
pub use context::{MemoryAccess, MemoryLookup, MemoryOptions};
pub use decoder::{cross_entropy, sinusoid, softmax, Decoder, DecoderConfig, SeqInput};
pub use plan::{greedy_decode, Plan, PlanInterface, PlanStep, Planner, Policy, Submission};
pub use train::{
    argmax_token, classifier_accuracy, decoder_accuracy, decoder_examples, train_classifier,
    train_decoder, DecoderExample, DecoderReport, DecoderSchedule,
};
pub use vocab::{ActionToken, ActionVocabulary};
