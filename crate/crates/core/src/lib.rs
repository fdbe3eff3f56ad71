//! Active learning of the structural functions of a causal model whose graph
//! is known.
//!
//! Each structural function gets an independent Gaussian-process belief. The
//! expected total risk of the posterior-mean estimate drives the choice of the
//! next intervention, scored by Monte Carlo over the belief predictive or, on
//! chains, by dynamic programming over discretized node values.

pub mod belief;
pub mod config;
pub mod error;
pub mod expr;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod scm;
pub mod strategy;

pub use error::{Error, Result};
