//! Minimal reverse-mode differentiation and first-order optimization for the
//! fixed layer vocabulary of the metric and up-sampling networks.
//!
//! There is no graph compiler: the architecture family is closed, so each
//! layer is a forward function returning the tape state its hand-derived
//! backward needs. All backwards are verified against central finite
//! differences.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use ops::Mode;
pub use optim::{adam_update, LrSchedule, OptimizerState};
pub use tensor::Tensor;
