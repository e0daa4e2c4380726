//! Novelty-driven one-shot architecture search at desk scale.
//!
//! The engine trains a single-path weight-sharing supernet over a micro
//! cell space, sampling the architectures to train either uniformly at
//! random or by evolving a fixed-capacity archive of continuous
//! architecture vectors toward higher novelty (optionally blended with a
//! performance reward). After training, a random-search or evolutionary
//! selector picks the most promising architecture by its accuracy under
//! inherited weights, and the winner is retrained from scratch.

pub mod arch;
pub mod error;
pub mod novelty;
pub mod oracle;
pub mod search;
pub mod stats;
pub mod supernet;

pub use error::{Error, Result};
