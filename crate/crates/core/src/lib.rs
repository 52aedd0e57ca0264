//! Discrete Ginzburg–Landau bifurcation from the normal phase on closed
//! surfaces.

pub mod bundle;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod reduction;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
