//! Simulation of sequential-measurement statistics for a two-level system
//! coupled to a damped bosonic mode, with exact joint distributions on the
//! enlarged space, regression-type predictions from the reduced map alone,
//! a second-order correction kernel, and memory quantifiers.

pub mod error;
pub mod instruments;
pub mod linops;
pub mod model;
pub mod multitime;
pub mod perturbation;
pub mod quantifiers;

pub use error::Error;
