//! Pseudo-spectral simulator and statistics harness for the stochastic
//! Ladyzhenskaya–Smagorinsky equations on the periodic box `[0, ℓ)³`.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod integrate;
pub mod noise;
pub mod stats;

pub use error::{Error, Result};
