//! Numerics for one-dimensional Bose-Einstein condensates in a random
//! potential of Poisson-distributed delta scatterers.

pub mod aux_interval;
pub mod disorder;
pub mod error;
pub mod gp_solver;
pub mod harness;
pub mod minimize;
pub mod model;
pub mod spectral;
pub mod thermo;
pub mod tridiag;

pub use error::{Error, Result};
pub use model::{GridFunction, ModelParams, ScattererConfig, Strength};
