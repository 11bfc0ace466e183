//! Coupled shape-Newton solver for two-dimensional free-boundary potential
//! flow, discretized with linear finite elements on a moving mesh.

pub mod assembly;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod linsolve;
pub mod newton;
pub mod problem;
pub mod surface;

pub use error::{Error, Result};
