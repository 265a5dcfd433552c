//! Monte Carlo and closed-form tools for hypoelliptic Brownian motion on
//! Heisenberg-like groups `R^N x R^d`.
//!
//! The crate is `no_std` and only needs `alloc`. Parallel execution, file
//! formats and the command line live in the `heiskern` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod battery;
pub mod cameron_martin;
pub mod error;
pub mod group;
pub mod heat_kernel;
pub mod linalg;
pub mod mc;
pub mod oracles;
pub mod path;
pub mod polynomial;
pub mod quadratics;
pub mod rng;
pub mod stats;
pub mod tails;

pub use error::{Error, Result};
