//! Effective Hamiltonians of planar mechanical systems `½|p|² + V(x)` with a
//! periodic potential, and the geometry of their minimal level set `F₀`.

pub mod acceptance;
pub mod cell_pde;
pub mod error;
pub mod geometry;
pub mod metric;
pub mod onedim;
pub mod orbits;
pub mod potential;
pub mod quadrature;

pub use error::{Error, Result};
pub use potential::{Point, PotentialSpec};
