use nalgebra::DVector;

use super::linsolve::{solve_symmetric_detailed, SymmetricMatrix};
use crate::{DualError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute tolerance on the gradient norm.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Step reduction factor in the backtracking line search.
    pub shrink: f64,
    /// Armijo constant for the merit function ½‖grad‖².
    pub sufficient_decrease: f64,
    /// Smallest diagonal shift tried when the Newton system cannot be solved.
    pub levenberg_shift: f64,
    /// Relative step for finite-difference checks.
    pub fd_step: f64,
    /// Relative residual demanded of each Newton linear solve.
    pub linear_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iter: 50,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            levenberg_shift: 1e-10,
            fd_step: 1e-6,
            linear_tol: 1e-11,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(DualError::invalid("grad_tol", "must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(DualError::invalid("shrink", "must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 0.5) {
            return Err(DualError::invalid("sufficient_decrease", "must lie in (0, 0.5)"));
        }
        if !(self.levenberg_shift >= 0.0) {
            return Err(DualError::invalid("levenberg_shift", "must be non-negative"));
        }
        if !(self.fd_step > 0.0) {
            return Err(DualError::invalid("fd_step", "must be positive"));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return Err(DualError::invalid("linear_tol", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub grad_norm: f64,
    /// Length of the accepted step, zero for the initial record.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct CriticalPointResult {
    pub point: DVector<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

fn is_soft_failure(e: &DualError) -> bool {
    matches!(
        e,
        DualError::NotConvex { .. } | DualError::InnerDivergence { .. } | DualError::Inconsistent { .. }
    )
}

fn checked(g: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(DualError::NonFinite(what))
    }
}

/// Newton direction for `H d = −g`, falling back to increasingly shifted
/// systems. Returns the best least-squares candidate when none converges.
fn newton_direction(h: &SymmetricMatrix, g: &DVector<f64>, cfg: &NewtonConfig) -> DVector<f64> {
    let rhs = -g;
    let first = solve_symmetric_detailed(h, &rhs, cfg.linear_tol);
    if first.converged {
        return first.x;
    }
    let scale = h.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs())).max(1.0);
    let mut best = first;
    let mut shift = cfg.levenberg_shift.max(1e-14 * scale);
    for _ in 0..6 {
        let mut shifted = h.clone();
        shifted.add_diagonal(shift);
        let sol = solve_symmetric_detailed(&shifted, &rhs, cfg.linear_tol);
        if sol.converged {
            log::debug!("newton: Levenberg shift {shift:.2e} applied");
            return sol.x;
        }
        if sol.residual < best.residual {
            best = sol;
        }
        shift *= 100.0;
    }
    best.x
}

/// Search for a critical point of an objective given its gradient and
/// symmetric Hessian, by damped Newton on the merit ½‖grad‖².
///
/// The objective may be indefinite. Trial points where `grad` reports a
/// non-convex or diverging inner problem are treated as rejected steps.
/// Failing to converge is reported through `converged = false`; non-finite
/// values are errors.
pub fn newton_critical<G, H>(
    mut grad: G,
    mut hess: H,
    start: &DVector<f64>,
    cfg: &NewtonConfig,
) -> Result<CriticalPointResult>
where
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    H: FnMut(&DVector<f64>) -> Result<SymmetricMatrix>,
{
    cfg.validate()?;
    let n = start.len();
    let mut x = start.clone();
    let mut g = checked(grad(&x)?, "gradient")?;
    if g.len() != n {
        return Err(DualError::Dimension { context: "newton_critical gradient", expected: n, got: g.len() });
    }
    let mut gn = g.norm();
    let mut trace = vec![IterationRecord { iteration: 0, grad_norm: gn, step: 0.0 }];
    let mut iterations = 0;

    while gn > cfg.grad_tol && iterations < cfg.max_iter {
        let h = hess(&x)?;
        if h.dim() != n {
            return Err(DualError::Dimension { context: "newton_critical Hessian", expected: n, got: h.dim() });
        }
        let merit_grad = h.matvec(&g);
        let m0 = 0.5 * gn * gn;

        let newton = newton_direction(&h, &g, cfg);
        let mut candidates = Vec::with_capacity(2);
        if newton.iter().all(|v| v.is_finite()) && merit_grad.dot(&newton) < 0.0 {
            candidates.push(newton);
        }
        if merit_grad.norm() > 0.0 {
            // Steepest descent on the merit, scaled to a Gauss-Newton length.
            let hg = h.matvec(&merit_grad);
            let denom = hg.norm_squared();
            let alpha = if denom > 0.0 { merit_grad.norm_squared() / denom } else { 1.0 };
            candidates.push(-alpha * merit_grad.clone());
        }

        let mut accepted = None;
        'directions: for d in &candidates {
            let slope = merit_grad.dot(d);
            let mut t = 1.0;
            while t > 1e-12 {
                let trial = &x + t * d;
                match grad(&trial) {
                    Ok(gt) => {
                        let gt = checked(gt, "gradient")?;
                        let mt = 0.5 * gt.norm_squared();
                        if mt <= m0 + cfg.sufficient_decrease * t * slope {
                            accepted = Some((trial, gt, t * d.norm()));
                            break 'directions;
                        }
                    }
                    Err(e) if is_soft_failure(&e) => {
                        log::debug!("newton: trial point rejected ({e})");
                    }
                    Err(e) => return Err(e),
                }
                t *= cfg.shrink;
            }
        }

        iterations += 1;
        match accepted {
            Some((xt, gt, step)) => {
                x = xt;
                g = gt;
                gn = g.norm();
                trace.push(IterationRecord { iteration: iterations, grad_norm: gn, step });
                log::debug!("newton: iter {iterations} |grad| = {gn:.3e} step = {step:.3e}");
            }
            None => {
                trace.push(IterationRecord { iteration: iterations, grad_norm: gn, step: 0.0 });
                log::debug!("newton: line search stagnated at |grad| = {gn:.3e}");
                break;
            }
        }
    }

    Ok(CriticalPointResult {
        point: x,
        grad_norm: gn,
        iterations,
        converged: gn <= cfg.grad_tol,
        trace,
    })
}
