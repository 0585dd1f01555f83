//! Predator–prey two-agent optimization for accelerating grokking.

pub mod agents;
pub mod data;
pub mod error;
pub mod harness;
pub mod landscapes;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod paramvec;

pub use error::{Error, Result};
pub use paramvec::ParamVector;
