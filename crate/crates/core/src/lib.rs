//! Analysis, certification and simulation of stochastic local search under
//! a mixture of principal and noise dynamics.

pub mod analyzer;
pub mod certifier;
pub mod error;
pub mod exact;
pub mod forensics;
pub mod instances;
pub mod model;
mod serde_util;
pub mod simulator;

pub use error::{Error, Result};
