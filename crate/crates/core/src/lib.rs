//! Learned realism metric for LiDAR point clouds.
//!
//! The crate bundles everything needed to train and apply a tri-category
//! (Real / Syn / Misc) realism classifier over local point-cloud
//! neighborhoods: cylindrical projection geometry, exact spatial search,
//! a small reverse-mode differentiation engine, the metric network with
//! per-category adversaries trained through gradient reversal, synthetic
//! scene generators, reconstruction-error baselines, and range-image
//! up-sampling models.

pub mod baselines;
pub mod datagen;
pub mod diff;
pub mod error;
pub mod geom;
pub mod metric;
pub mod spatial;
pub mod upsample;

pub use error::{Error, Result};
