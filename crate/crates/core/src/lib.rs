//! Intent classification with a continuous space of intents.
//!
//! Intents are points over a small set of shared recurrent bases. A model
//! trained on seen intents can take on new intents later by learning only
//! their coordinates (and optionally per-intent expansion matrices), leaving
//! every previously trained tensor untouched.

pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod training;
pub mod unseen;

pub use error::{Error, ErrorCategory, Result};
