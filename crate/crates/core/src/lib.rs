pub mod averaging;
pub mod error;
pub mod harness;
pub mod kinetic;
pub mod model;
pub mod paths;
pub mod quadrature;
pub mod solvers;
pub mod torus_field;

pub use error::{Error, Result};
