//! Discontinuous Petrov-Galerkin discretization of b·∇u + cu = f on polygonal
//! domains in two dimensions.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod linalg;
pub mod localdpg;
pub mod mesh;
pub mod poly;
pub mod polyspace;
pub mod problem;
pub mod quadrature;

pub use error::{DpgError, Result};
pub use geometry::{pt, Point2};
