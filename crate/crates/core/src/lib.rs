//! Differentiable architecture search over chains of complete DAGs whose
//! nodes are wired at channel-block granularity.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod discretize;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod optim;
pub mod search;
pub mod supergraph;
pub mod tensor;

pub use error::{Error, Result};
