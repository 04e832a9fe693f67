//! Diagonal Kronecker-factored empirical Fisher preconditioning (AdaFisher)
//! for small dense/conv networks, with baselines, a simulated multi-worker
//! mode and curvature diagnostics.

pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod kfactor;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
