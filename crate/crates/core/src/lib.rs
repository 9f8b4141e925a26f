//! Exemplar-free class-incremental learning with one variational auto-encoder per class.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod learner;
pub mod losses;
pub mod numcore;
pub mod vae;

pub use error::{Error, Result};
