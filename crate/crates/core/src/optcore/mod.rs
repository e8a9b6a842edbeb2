//! Shared numerical machinery: critical-point search on possibly indefinite
//! objectives, symmetric linear solves and finite-difference checks.

mod fd;
mod linsolve;
mod newton;

pub use fd::{fd_gradient, fd_jacobian};
pub use linsolve::{minres, solve_symmetric, solve_symmetric_detailed, LinearSolve, MinresOptions, SymmetricMatrix, DENSE_LIMIT};
pub use newton::{newton_critical, CriticalPointResult, IterationRecord, NewtonConfig};

pub type DenseVector = nalgebra::DVector<f64>;
