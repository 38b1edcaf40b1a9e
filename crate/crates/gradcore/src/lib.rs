//! Minimal dense tensors with tape-based reverse-mode automatic
//! differentiation, a couple of optimizers and the layers needed by the
//! planning networks.
//!
//! ```
//! use gradcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
//! let loss = tape.dot(x, x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{GradError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use tape::{Axis, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
