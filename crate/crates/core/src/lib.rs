//! Membrane limits of non-Euclidean elastic bodies.

pub mod density;
pub mod discretization;
pub mod experiment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod optimize;
pub mod relaxation;

pub use error::{Error, Result};
