//! Multi-task Q-learning with a shared low-rank (CP) tensor model, the
//! environments it is evaluated on, brute-force oracles and an experiment
//! harness.

pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod oracle;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, FactorInit, FactorSet, FactorSnapshot};
