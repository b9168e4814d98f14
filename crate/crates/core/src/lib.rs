//! Soft (KL-regularized) Bayesian updates, posterior identification of
//! rewards from a joint table, order-independence checks and truncation
//! certificates for countable outcome spaces.

pub mod cli;
pub mod coherence;
pub mod countable;
pub mod dist;
pub mod error;
pub mod fixtures;
pub mod identification;
pub mod io;
pub mod numeric;
pub mod report;
pub mod soft_update;

pub use error::{Error, Result};
