//! Clustering of positive semi-definite matrices by eigenstructure.

pub mod baselines;
pub mod cpc;
pub mod error;
pub mod evalbench;
pub mod ktensors;
mod linalg;
pub mod projection;
pub mod psd;
pub mod seeding;
pub mod simgen;

pub use error::{Error, Result};
