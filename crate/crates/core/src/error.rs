use thiserror::Error;

pub type Result<T> = std::result::Result<T, DualError>;

#[derive(Debug, Error)]
pub enum DualError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("linear solve broke down: residual {residual:.3e} exceeds target {target:.3e} (system inconsistent or singular)")]
    Inconsistent { residual: f64, target: f64 },
    #[error("inner stationarity solve diverged (residual {residual:.3e} after {iterations} iterations); increase the potential coefficient")]
    InnerDivergence { residual: f64, iterations: usize },
    #[error("potential is not convex at this point (curvature {min_curvature:.3e}); increase the potential coefficient")]
    NotConvex { min_curvature: f64 },
    #[error("CFL condition violated: Courant number {courant:.3} > 1")]
    Cfl { courant: f64 },
    #[error("system is inconsistent: residual {residual:.3e}")]
    InconsistentSystem { residual: f64 },
}

impl DualError {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        DualError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
