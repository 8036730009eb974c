//! Numerical toolkit for the prescribed scalar curvature problem on the upper
//! half of the 4-sphere with Neumann boundary data.

pub mod bubbles;
pub mod cli;
pub mod criterion;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod greenfn;
pub mod kfield;
pub mod validate;

pub use error::{Error, Result};
