//! Keyflow: state-conditioned keyframe trajectory synthesis.
//!
//! A flow-matching generator produces short-horizon residual keyframe
//! trajectories conditioned on the current robot state and a reference
//! command. A closed-loop harness replans at a fixed interval, densifies
//! keyframes to the tracker rate, and measures tracking quality. The crate
//! also carries the motion tokenizer, the adaptive temporal-bin sampler,
//! the kinematics-aware training pipeline, and a synthetic corpus
//! generator so everything runs end to end without external data.

pub mod dataset;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod nn;
pub mod state;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
