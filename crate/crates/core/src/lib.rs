//! Quasi-stationary mean field games of controls on the unit torus.
//!
//! Each time slice solves a stationary HJB equation with the population
//! measure frozen, the state density evolves by a Fokker-Planck equation,
//! and the joint state-control measure closes the loop as the pushforward
//! of the density by the optimal feedback.

pub mod error;
pub mod grid;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod hjb;
pub mod fp;
pub mod coupling;

pub use error::{Error, Result};
