//! Bilevel training of accuracy and fairness players on a shared network.

pub mod cli;
pub mod data;
pub mod error;
pub mod lipschitz;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
