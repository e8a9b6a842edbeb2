//! Dual variational solvers.
//!
//! A primal problem (an algebraic system `A(x) = 0`, or a first-order system of
//! PDE with initial and boundary conditions) is paired with dual fields and a
//! convex auxiliary potential. The primal unknowns are eliminated through a
//! pointwise Legendre-type inversion, leaving a functional of the dual fields
//! alone whose critical points reproduce primal solutions.
//!
//! - [`optcore`]: Newton critical-point search, symmetric solves, finite differences.
//! - [`algdual`]: the finite-dimensional construction and its least-squares comparison.
//! - [`spacetime`]: multilinear space-time discretization shared by the field problems.
//! - [`ibvpdual`]: one-dimensional initial-boundary-value problems (heat, transport, ...).
//! - [`dislocdual`]: linear anti-plane dislocation mechanics with prescribed velocity.
//! - [`fdmpoint`]: pointwise inversion for the nonlinear dislocation system.

pub mod algdual;
pub mod dislocdual;
mod error;
pub mod fdmpoint;
pub mod ibvpdual;
pub mod optcore;
pub mod spacetime;

pub use error::{DualError, Result};
