//! Dual objective for finite-dimensional systems `A(x) = 0`, `A: Rⁿ → Rᴺ`.
//!
//! For a multiplier `z ∈ Rᴺ` and a convex potential `H`, the inner problem
//! `Jᵀ(x) z + ∇H(x) = 0` defines `x_H(z)`, and
//!
//! ```text
//! S_H(z) = z · A(x_H(z)) + H(x_H(z)),      ∇S_H(z) = A(x_H(z)).
//! ```
//!
//! A critical point of `S_H` is therefore a primal solution. With the shifted
//! quadratic `H(x) = ½ c ‖x − x̄‖²` and linear `A(x) = Āx − b`, the dual system
//! is `ĀĀᵀ z = c (Āx̄ − b)`; the recovered `x̄ − Āᵀz / c` is the solution closest
//! to `x̄`, and the dual has no critical point when `b` leaves the column space.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::optcore::{newton_critical, CriticalPointResult, NewtonConfig, SymmetricMatrix};
use crate::{DualError, Result};

/// A map `A: Rⁿ → Rᴺ` with first and contracted second derivatives.
pub trait ResidualSystem {
    /// Primal dimension `n`.
    fn primal_dim(&self) -> usize;
    /// Residual dimension `N`.
    fn residual_dim(&self) -> usize;
    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∂A_α/∂xⁱ`, an `N × n` matrix.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `z^α ∂²A_α/∂x∂x`, symmetric `n × n`.
    fn weighted_hessian(&self, x: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64>;
}

/// `A(x) = Āx − b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearSystem {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() {
            return Err(DualError::Dimension { context: "LinearSystem rhs", expected: matrix.nrows(), got: rhs.len() });
        }
        Ok(Self { matrix, rhs })
    }
}

impl ResidualSystem for LinearSystem {
    fn primal_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn residual_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x - &self.rhs
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
    fn weighted_hessian(&self, _x: &DVector<f64>, _z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.primal_dim();
        DMatrix::zeros(n, n)
    }
}

/// Unit circle intersected with the diagonal: `(x₁² + x₂² − 1, x₁ − x₂)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CircleLine;

impl ResidualSystem for CircleLine {
    fn primal_dim(&self) -> usize {
        2
    }
    fn residual_dim(&self) -> usize {
        2
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - x[1]])
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 1.0, -1.0])
    }
    fn weighted_hessian(&self, _x: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (2.0 * z[0])
    }
}

/// Scalar `x² − r`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarQuadratic {
    pub target: f64,
}

impl Default for ScalarQuadratic {
    fn default() -> Self {
        Self { target: 1.0 }
    }
}

impl ResidualSystem for ScalarQuadratic {
    fn primal_dim(&self) -> usize {
        1
    }
    fn residual_dim(&self) -> usize {
        1
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] * x[0] - self.target)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * x[0])
    }
    fn weighted_hessian(&self, _x: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * z[0])
    }
}

/// Auxiliary potential `H` on the primal space.
pub trait Potential {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Point where `∇H` vanishes; the inner solve starts here.
    fn base_point(&self) -> DVector<f64>;
}

/// `H(x) = ½ Σ cᵢ (xᵢ − x̄ᵢ)²` with every `cᵢ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedQuadratic {
    pub base: DVector<f64>,
    pub coef: DVector<f64>,
}

impl ShiftedQuadratic {
    pub fn new(base: DVector<f64>, coef: DVector<f64>) -> Result<Self> {
        if base.len() != coef.len() {
            return Err(DualError::Dimension { context: "ShiftedQuadratic coef", expected: base.len(), got: coef.len() });
        }
        if let Some(c) = coef.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(DualError::invalid("c", format!("coefficients must be positive and finite, got {c}")));
        }
        Ok(Self { base, coef })
    }

    pub fn uniform(base: DVector<f64>, c: f64) -> Result<Self> {
        let n = base.len();
        Self::new(base, DVector::from_element(n, c))
    }

    /// Same base point, coefficients multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.base.clone(), &self.coef * k)
    }
}

impl Potential for ShiftedQuadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x - &self.base).zip_map(&self.coef, |d, c| c * d * d).sum()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.base).component_mul(&self.coef)
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.coef)
    }
    fn base_point(&self) -> DVector<f64> {
        self.base.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgDualConfig {
    /// Outer critical-point search on `S_H`.
    pub newton: NewtonConfig,
    /// Absolute tolerance on the inner stationarity residual.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Bound on `‖A(x*)‖` demanded of a converged dual solve.
    pub tol_primal: f64,
}

impl Default for AlgDualConfig {
    fn default() -> Self {
        Self {
            newton: NewtonConfig::default(),
            inner_tol: 1e-12,
            inner_max_iter: 100,
            tol_primal: 1e-8,
        }
    }
}

/// Dual point with its inner solution and the value and gradient of `S_H`.
#[derive(Debug, Clone)]
pub struct DualState {
    pub z: DVector<f64>,
    pub x_h: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
}

fn check_dims<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(sys: &S, h: &H, z: &DVector<f64>) -> Result<()> {
    if z.len() != sys.residual_dim() {
        return Err(DualError::Dimension { context: "dual variable z", expected: sys.residual_dim(), got: z.len() });
    }
    let nb = h.base_point().len();
    if nb != sys.primal_dim() {
        return Err(DualError::Dimension { context: "potential base point", expected: sys.primal_dim(), got: nb });
    }
    Ok(())
}

fn inner_from<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z: &DVector<f64>,
    start: &DVector<f64>,
    cfg: &AlgDualConfig,
) -> Result<DVector<f64>> {
    let inner_cfg = NewtonConfig { grad_tol: cfg.inner_tol, max_iter: cfg.inner_max_iter, ..cfg.newton };
    let res = newton_critical(
        |x| Ok(sys.jacobian(x).tr_mul(z) + h.gradient(x)),
        |x| SymmetricMatrix::from_dense(&symmetrize(sys.weighted_hessian(x, z) + h.hessian(x))),
        start,
        &inner_cfg,
    )?;
    if res.converged {
        Ok(res.point)
    } else {
        Err(DualError::InnerDivergence { residual: res.grad_norm, iterations: res.iterations })
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Solve `z^α ∂A_α/∂x + ∂H/∂x = 0` for `x`, starting from the base point of `H`.
pub fn solve_inner<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z: &DVector<f64>,
    cfg: &AlgDualConfig,
) -> Result<DVector<f64>> {
    check_dims(sys, h, z)?;
    inner_from(sys, h, z, &h.base_point(), cfg)
}

fn state_at<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z: &DVector<f64>,
    x_h: DVector<f64>,
) -> DualState {
    let grad = sys.residual(&x_h);
    let value = z.dot(&grad) + h.value(&x_h);
    DualState { z: z.clone(), x_h, value, grad }
}

/// `S_H(z)` and its gradient `A(x_H(z))`.
pub fn dual_value_grad<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z: &DVector<f64>,
    cfg: &AlgDualConfig,
) -> Result<DualState> {
    let x = solve_inner(sys, h, z, cfg)?;
    Ok(state_at(sys, h, z, x))
}

/// `∇²S_H = −J K⁻¹ Jᵀ` with `K = z·∇²A + ∇²H`, from implicit differentiation
/// of the inner problem.
pub fn dual_hessian<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z: &DVector<f64>,
    x_h: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let k = symmetrize(sys.weighted_hessian(x_h, z) + h.hessian(x_h));
    let j = sys.jacobian(x_h);
    let kinv_jt = k
        .clone()
        .lu()
        .solve(&j.transpose())
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| DualError::NotConvex { min_curvature: k.symmetric_eigenvalues().min() })?;
    Ok(symmetrize(-(&j * kinv_jt)))
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub critical: CriticalPointResult,
    /// Recovered primal point `x_H(z*)`.
    pub x: DVector<f64>,
    /// `‖A(x)‖` at the recovered point.
    pub primal_residual: f64,
    /// Smallest `‖A(x_H(z))‖` over the accepted iterates.
    pub min_primal_residual: f64,
    /// Dual converged and `‖A(x)‖ ≤ tol_primal`.
    pub converged: bool,
}

/// Critical point of `S_H` from `z0` and the primal point it recovers.
///
/// Non-convergence is reported, not raised: a persistent `‖∇S_H‖ = ‖A(x_H)‖`
/// bounded away from zero means the primal system has no solution reachable
/// from this start.
pub fn solve_dual<S: ResidualSystem + ?Sized, H: Potential + ?Sized>(
    sys: &S,
    h: &H,
    z0: &DVector<f64>,
    cfg: &AlgDualConfig,
) -> Result<DualSolution> {
    check_dims(sys, h, z0)?;
    // Warm start each inner solve from the most recent inner solution.
    let warm = RefCell::new(h.base_point());
    let inner = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let start = warm.borrow().clone();
        let x = inner_from(sys, h, z, &start, cfg).or_else(|_| inner_from(sys, h, z, &h.base_point(), cfg))?;
        *warm.borrow_mut() = x.clone();
        Ok(x)
    };
    let critical = newton_critical(
        |z| Ok(sys.residual(&inner(z)?)),
        |z| {
            let x = inner(z)?;
            SymmetricMatrix::from_dense(&dual_hessian(sys, h, z, &x)?)
        },
        z0,
        &cfg.newton,
    )?;
    let x = solve_inner(sys, h, &critical.point, cfg)?;
    let primal_residual = sys.residual(&x).norm();
    let min_primal_residual = critical.trace.iter().map(|r| r.grad_norm).fold(f64::INFINITY, f64::min);
    let converged = critical.converged && primal_residual <= cfg.tol_primal;
    Ok(DualSolution { critical, x, primal_residual, min_primal_residual, converged })
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub x1: Option<DVector<f64>>,
    pub x2: Option<DVector<f64>>,
    /// `‖x*₁ − x*₂‖` when both solves converged.
    pub difference: Option<f64>,
    pub pass: bool,
    /// Why the comparison is partial, if it is.
    pub note: Option<String>,
}

/// Solve the dual with two potentials and compare the recovered primal points.
///
/// Equal points are expected when the primal solution is unique; different
/// base points may legitimately select different roots.
pub fn h_invariance_check<S: ResidualSystem + ?Sized, H1: Potential + ?Sized, H2: Potential + ?Sized>(
    sys: &S,
    h1: &H1,
    h2: &H2,
    z0: &DVector<f64>,
    cfg: &AlgDualConfig,
) -> InvarianceReport {
    let run = |r: Result<DualSolution>, label: &str| match r {
        Ok(s) if s.converged => (Some(s.x), None),
        Ok(s) => (None, Some(format!("{label}: dual did not converge (|A| = {:.3e})", s.primal_residual))),
        Err(e) => (None, Some(format!("{label}: {e}"))),
    };
    let (x1, n1) = run(solve_dual(sys, h1, z0, cfg), "first potential");
    let (x2, n2) = run(solve_dual(sys, h2, z0, cfg), "second potential");
    let difference = match (&x1, &x2) {
        (Some(a), Some(b)) => Some((a - b).norm()),
        _ => None,
    };
    let note = match (n1, n2) {
        (None, None) => None,
        (a, b) => Some(a.into_iter().chain(b).collect::<Vec<_>>().join("; ")),
    };
    InvarianceReport { pass: difference.is_some_and(|d| d <= 1e-6), x1, x2, difference, note }
}

/// Moore–Penrose pseudo-inverse solve with a relative singular-value cutoff.
fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax.max(f64::MIN_POSITIVE) * (a.nrows().max(a.ncols()) as f64);
    let rank_deficient = svd.singular_values.len() < a.ncols() || svd.singular_values.iter().any(|&s| s <= cutoff);
    let x = svd.solve(b, cutoff).expect("SVD computed with both factors");
    (x, rank_deficient)
}

#[derive(Debug, Clone)]
pub struct LeastSquaresReport {
    /// Solution of `ĀᵀĀ x = Āᵀb`, minimum-norm when that system is singular.
    pub x_ls: DVector<f64>,
    /// The normal equations were singular and a pseudo-inverse was used.
    pub ls_regularized: bool,
    pub x_dual: DVector<f64>,
    pub dual_converged: bool,
    /// `‖A(x_dual)‖`.
    pub dual_residual: f64,
    /// Distance of `x_dual` from the row space of `Ā`.
    pub row_space_residual: f64,
}

/// Compare least squares against the dual with `H = ½ c ‖x‖²`.
pub fn least_squares_compare(abar: &DMatrix<f64>, b: &DVector<f64>, c: f64, cfg: &AlgDualConfig) -> Result<LeastSquaresReport> {
    let sys = LinearSystem::new(abar.clone(), b.clone())?;
    let n = abar.ncols();
    let normal = abar.tr_mul(abar);
    let nrhs = abar.tr_mul(b);
    let (x_ls, ls_regularized) = pinv_solve(&normal, &nrhs);
    let h = ShiftedQuadratic::uniform(DVector::zeros(n), c)?;
    let dual = solve_dual(&sys, &h, &DVector::zeros(abar.nrows()), cfg)?;
    let (proj, _) = pinv_solve(abar, &(abar * &dual.x));
    let row_space_residual = (&dual.x - proj).norm();
    Ok(LeastSquaresReport {
        x_ls,
        ls_regularized,
        dual_residual: dual.primal_residual,
        dual_converged: dual.converged,
        x_dual: dual.x,
        row_space_residual,
    })
}

/// Minimum-norm solution of `Āx = b` via `ĀĀᵀ w = b`, `x = Āᵀw`, with
/// rank-deficient `ĀĀᵀ` handled by eigenvalue truncation.
pub fn minnorm_oracle(abar: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if abar.nrows() != b.len() {
        return Err(DualError::Dimension { context: "minnorm_oracle rhs", expected: abar.nrows(), got: b.len() });
    }
    let gram = abar * abar.transpose();
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-13 * lmax.max(f64::MIN_POSITIVE) * b.len() as f64;
    let coords = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        coords.len(),
        coords.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| if *l > cutoff { c / l } else { 0.0 }),
    );
    let w = &eig.eigenvectors * scaled;
    let x = abar.tr_mul(&w);
    let residual = (abar * &x - b).norm();
    if residual > 1e-10 * b.norm().max(1.0) {
        return Err(DualError::InconsistentSystem { residual });
    }
    Ok(x)
}
