//! Numerical laboratory for the discrete bilaplacian on lattice squares and
//! cubes with clamped (zero-exterior) boundary data.
//!
//! The crate computes the clamped Green's function and its discrete
//! derivatives, the full-space asymptotic Green's function, B-spline
//! interpolation operators, and the membrane Gaussian field, and it measures
//! empirical constants for the decay and regularity estimates these objects
//! satisfy.

pub mod error;
pub mod fullspace;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod membrane;
pub mod operators;
pub mod solver;
pub mod splines;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{CubeRegion, GridFunction, Idx, LatticeDomain, Lp, Region};
