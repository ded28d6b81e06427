//! Multisensor continuous-control training with Sensor Dropout.

pub mod analysis;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rl;
pub mod sensor_dropout;

pub use error::{Error, Result};
