//! Flat covers of graphs of bivariate polynomials, their certification, and
//! numerical decoupling and discrete restriction experiments.

pub mod cli;
pub mod cover;
pub mod error;
pub mod flatness;
pub mod geometry;
pub mod lattice;
pub mod norms;
pub mod poly2;
pub mod rescale;

pub use error::{Error, Result};
