//! Interactive action planning with a topological affordance memory.
//!
//! [`homesim`] generates apartments and expert demonstrations, [`tam`]
//! learns the memory networks and builds the memory graph, [`actiongen`]
//! trains the decoder and plans closed loop, [`evalharness`] scores plans
//! under the four evaluation protocols, and [`pipeline`] ties them together
//! over files.

pub mod actiongen;
pub mod error;
pub mod evalharness;
pub mod homesim;
pub mod pipeline;
pub mod tam;

pub use error::{Result, TamError};
