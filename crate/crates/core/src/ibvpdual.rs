//! Dual functionals for first-order systems in one space dimension:
//!
//! ```text
//! ∂_t u = 𝔸 u + 𝔹 ∂_x u + ℂ ∂_x B + 𝔣(u, B, C) + ∂_x 𝔄(u, B, C)
//! ∂_x u = B
//! ∂_x B = C
//! ```
//!
//! with initial data and, at each endpoint, any of a flux (`τ̄`), value (`ū`)
//! or gradient (`B̄`) condition. The cascade is truncated at `order` 0, 1 or 2.
//!
//! The dual fields `(λ, γ, ρ)` enter through
//!
//! ```text
//! P = (∂_tλ + ∂_xγ + 𝔸ᵀλ − 𝔹ᵀ∂_xλ,  γ + ∂_xρ − ℂᵀ∂_xλ,  ρ),   L = (λ, −∂_xλ),
//! ```
//!
//! and `U_H(P, L)` solves `∂_U M = P` for `M = H − L·F`, `F = (𝔣, 𝔄)`. The
//! discrete action is
//!
//! ```text
//! S = −∫ M*(P, L) − ∫ λ(x,0) ū⁽ⁱ⁾ − ∫_τ λ τ̄ + ∫_u γ ū n + ∫_∇u ρ B̄ n,
//! ```
//!
//! with `λ` prescribed at `t = T` and, for `t > 0`, at endpoints without a flux
//! condition; `γ` at endpoints without a value condition; `ρ` at endpoints
//! without a gradient condition.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::optcore::{CriticalPointResult, NewtonConfig};
use crate::spacetime::{
    face_load, face_product, for_each_gauss_point, ConjugateEval, DualProblem, LinearMap, Op, PointConjugate, Side, TensorGrid, Term,
};
use crate::{DualError, Result};

/// A real function of one variable (position or time).
pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn profile(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Profile {
    Arc::new(f)
}

/// Uniform grid on `[x_min, x_max] × [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
}

impl SpaceTimeGrid {
    pub fn new(nx: usize, nt: usize, x_min: f64, x_max: f64, t_final: f64) -> Result<Self> {
        if nx < 3 {
            return Err(DualError::invalid("nx", "need at least 3 nodes"));
        }
        if nt < 3 {
            return Err(DualError::invalid("nt", "need at least 3 nodes"));
        }
        if !(x_max > x_min) {
            return Err(DualError::invalid("x_max", "must exceed x_min"));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(DualError::invalid("T", "must be positive"));
        }
        Ok(Self { nx, nt, x_min, x_max, t_final })
    }
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }
    pub fn dt(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }
    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.t_final
        } else {
            k as f64 * self.dt()
        }
    }
    pub fn num_nodes(&self) -> usize {
        self.nx * self.nt
    }
    /// Flat node index; time varies fastest.
    pub fn node(&self, i: usize, k: usize) -> usize {
        i * self.nt + k
    }
    pub fn tensor(&self) -> TensorGrid {
        TensorGrid::new(&[self.nx, self.nt], &[self.x_min, 0.0], &[self.x_max, self.t_final]).expect("validated grid")
    }
}

/// The nonlinear terms `𝔣` and `𝔄` of the first cascade line, as functions of
/// `U = (u, B, C)` truncated to the active order.
pub trait Nonlinearity: Send + Sync {
    /// Writes `𝔣(U)` and `𝔄(U)`, each of length `n`.
    fn eval(&self, u: &[f64], f: &mut [f64], a: &mut [f64]);
    /// Jacobian of `F = (𝔣, 𝔄)`, `2n × dim U`, row-major.
    fn jacobian(&self, u: &[f64], jac: &mut [f64]);
    /// `Σ_k w_k ∇²F_k`, `dim U × dim U`, row-major.
    fn weighted_hessian(&self, u: &[f64], w: &[f64], out: &mut [f64]);
}

/// Scalar flux `𝔄 = −½ s u²`, so the first line reads `∂_t u + s u ∂_x u = …`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersFlux {
    pub strength: f64,
}

impl Nonlinearity for BurgersFlux {
    fn eval(&self, u: &[f64], f: &mut [f64], a: &mut [f64]) {
        f[0] = 0.0;
        a[0] = -0.5 * self.strength * u[0] * u[0];
    }
    fn jacobian(&self, u: &[f64], jac: &mut [f64]) {
        let m = u.len();
        jac.iter_mut().for_each(|v| *v = 0.0);
        jac[m] = -self.strength * u[0];
    }
    fn weighted_hessian(&self, u: &[f64], w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let _ = u;
        out[0] = -self.strength * w[1];
    }
}

/// Prescribed data at one endpoint; every function is of time.
#[derive(Clone, Default)]
pub struct EndpointConditions {
    /// `(𝔄 + 𝔹u + ℂB)·n = τ̄`.
    pub flux: Option<Vec<Profile>>,
    /// `u = ū⁽ᵇ⁾`.
    pub value: Option<Vec<Profile>>,
    /// `B = B̄`.
    pub gradient: Option<Vec<Profile>>,
}

impl EndpointConditions {
    pub fn value(v: Vec<Profile>) -> Self {
        Self { value: Some(v), ..Default::default() }
    }
    pub fn flux(v: Vec<Profile>) -> Self {
        Self { flux: Some(v), ..Default::default() }
    }
    pub fn free() -> Self {
        Self::default()
    }
}

impl std::fmt::Debug for EndpointConditions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointConditions")
            .field("flux", &self.flux.is_some())
            .field("value", &self.value.is_some())
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Problem data for the cascade system.
#[derive(Clone)]
pub struct IbvpSpec {
    pub n: usize,
    pub order: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub nonlinearity: Option<Arc<dyn Nonlinearity>>,
    pub initial: Vec<Profile>,
    pub left: EndpointConditions,
    pub right: EndpointConditions,
}

impl std::fmt::Debug for IbvpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IbvpSpec")
            .field("n", &self.n)
            .field("order", &self.order)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("c", &self.c)
            .field("nonlinear", &self.nonlinearity.is_some())
            .field("left", &self.left)
            .field("right", &self.right)
            .finish()
    }
}

impl IbvpSpec {
    /// Number of primal components `(u, B, C)` at the active order.
    pub fn primal_dim(&self) -> usize {
        self.n * (self.order + 1)
    }

    pub fn endpoint(&self, side: Side) -> &EndpointConditions {
        match side {
            Side::Lower => &self.left,
            Side::Upper => &self.right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(DualError::invalid("n", "system needs at least one component"));
        }
        if self.order > 2 {
            return Err(DualError::invalid("order", "must be 0, 1 or 2"));
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(DualError::invalid(name, format!("must be {n}×{n}")));
            }
        }
        if self.order == 0 && self.c.iter().any(|v| *v != 0.0) {
            return Err(DualError::invalid("C", "the ∂B term needs order ≥ 1"));
        }
        if self.initial.len() != n {
            return Err(DualError::invalid("initial", format!("need {n} profiles")));
        }
        for (label, ep) in [("left", &self.left), ("right", &self.right)] {
            for (slot, data, min_order) in [("flux", &ep.flux, 0), ("value", &ep.value, 1), ("gradient", &ep.gradient, 2)] {
                if let Some(v) = data {
                    if v.len() != n {
                        return Err(DualError::invalid(format!("{label}.{slot}"), format!("need {n} profiles")));
                    }
                    if self.order < min_order {
                        return Err(DualError::invalid(
                            format!("{label}.{slot}"),
                            format!("needs order ≥ {min_order}, spec has order {}", self.order),
                        ));
                    }
                }
            }
        }
        if let Some(nl) = &self.nonlinearity {
            // 𝔣 and 𝔄 may not contain terms linear in (u, B, C).
            let m = self.primal_dim();
            let mut jac = vec![0.0; 2 * n * m];
            nl.jacobian(&vec![0.0; m], &mut jac);
            if jac.iter().any(|v| v.abs() > 1e-12) {
                return Err(DualError::invalid("nonlinearity", "has a linear part; move it into A, B or C"));
            }
        }
        Ok(())
    }
}

/// `H(U, x, t) = ½ Σ c_k (U_k − base_k(x, t))²` with one coefficient per block
/// `(u, B, C)`.
#[derive(Clone)]
pub struct SpacetimePotential {
    pub c_u: f64,
    pub c_b: f64,
    pub c_c: f64,
    pub base: Option<Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>>,
}

impl std::fmt::Debug for SpacetimePotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpacetimePotential")
            .field("c_u", &self.c_u)
            .field("c_b", &self.c_b)
            .field("c_c", &self.c_c)
            .field("base", &self.base.is_some())
            .finish()
    }
}

impl Default for SpacetimePotential {
    fn default() -> Self {
        Self { c_u: 1.0, c_b: 1.0, c_c: 1.0, base: None }
    }
}

impl SpacetimePotential {
    pub fn uniform(c_u: f64, c_b: f64, c_c: f64) -> Self {
        Self { c_u, c_b, c_c, base: None }
    }

    /// Base `u` equal to the initial condition extended constantly in time.
    pub fn with_initial_base(mut self, spec: &IbvpSpec) -> Self {
        let ic = spec.initial.clone();
        self.base = Some(Arc::new(move |x, _t, out: &mut [f64]| {
            for (o, f) in out.iter_mut().zip(&ic) {
                *o = f(x);
            }
        }));
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, c) in [("c_u", self.c_u), ("c_B", self.c_b), ("c_C", self.c_c)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DualError::invalid(name, format!("must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Pointwise conjugate of `M(U, L, x, t) = H(U, x, t) − L·F(U)`.
#[derive(Clone)]
pub struct IbvpConjugate {
    n: usize,
    coef: Vec<f64>,
    base: Option<Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>>,
    nonlinearity: Option<Arc<dyn Nonlinearity>>,
}

impl IbvpConjugate {
    pub fn new(spec: &IbvpSpec, potential: &SpacetimePotential) -> Result<Self> {
        potential.validate()?;
        let n = spec.n;
        let blocks = [potential.c_u, potential.c_b, potential.c_c];
        let coef = (0..=spec.order).flat_map(|b| std::iter::repeat(blocks[b]).take(n)).collect();
        Ok(Self { n, coef, base: potential.base.clone(), nonlinearity: spec.nonlinearity.clone() })
    }

    fn dim(&self) -> usize {
        self.coef.len()
    }

    fn base_at(&self, x: f64, t: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.dim()];
        if let Some(f) = &self.base {
            // The base function fills as many leading blocks as it knows about.
            f(x, t, &mut b);
        }
        b
    }

    /// `M(U, L, x, t)` and `F(U)`.
    pub fn m_value(&self, u: &[f64], l: &[f64], x: f64, t: f64) -> (f64, Vec<f64>) {
        let base = self.base_at(x, t);
        let h: f64 = u.iter().zip(&base).zip(&self.coef).map(|((u, b), c)| 0.5 * c * (u - b).powi(2)).sum();
        let f = self.flux(u);
        let lf: f64 = l.iter().zip(&f).map(|(a, b)| a * b).sum();
        (h - lf, f)
    }

    fn flux(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut f = vec![0.0; 2 * n];
        if let Some(nl) = &self.nonlinearity {
            let (ff, aa) = f.split_at_mut(n);
            nl.eval(u, ff, aa);
        }
        f
    }

    /// Curvature `K = ∂²M/∂U²` and `∂F/∂U` at `U`.
    fn curvature(&self, u: &[f64], l: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.dim();
        let mut k = DMatrix::from_diagonal(&DVector::from_column_slice(&self.coef));
        let mut jf = DMatrix::zeros(2 * self.n, m);
        if let Some(nl) = &self.nonlinearity {
            let mut buf = vec![0.0; m * m];
            nl.weighted_hessian(u, l, &mut buf);
            k -= DMatrix::from_row_slice(m, m, &buf);
            let mut jac = vec![0.0; 2 * self.n * m];
            nl.jacobian(u, &mut jac);
            jf = DMatrix::from_row_slice(2 * self.n, m, &jac);
        }
        (k, jf)
    }

    /// Solve `∂_U M(U, L, x, t) = P` for `U`.
    pub fn legendre_inverse(&self, p: &[f64], l: &[f64], x: f64, t: f64) -> Result<Vec<f64>> {
        let base = self.base_at(x, t);
        let mut u: Vec<f64> = p.iter().zip(&base).zip(&self.coef).map(|((p, b), c)| b + p / c).collect();
        if self.nonlinearity.is_none() {
            return Ok(u);
        }
        let m = self.dim();
        let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tol = 1e-13 * pnorm.max(1.0);
        let mut last = f64::INFINITY;
        for it in 0..60 {
            let (k, jf) = self.curvature(&u, l);
            let lv = DVector::from_column_slice(l);
            let grad_lf = jf.tr_mul(&lv);
            let r = DVector::from_fn(m, |i, _| self.coef[i] * (u[i] - base[i]) - grad_lf[i] - p[i]);
            let rn = r.norm();
            if rn <= tol {
                return Ok(u);
            }
            if !rn.is_finite() || (it > 20 && rn > 0.5 * last) {
                return Err(DualError::InnerDivergence { residual: rn, iterations: it });
            }
            last = rn;
            let chol = k.clone().cholesky().ok_or_else(|| DualError::NotConvex {
                min_curvature: k.symmetric_eigenvalues().min(),
            })?;
            let du = chol.solve(&r);
            for i in 0..m {
                u[i] -= du[i];
            }
        }
        Err(DualError::InnerDivergence { residual: last, iterations: 60 })
    }
}

impl PointConjugate for IbvpConjugate {
    fn p_dim(&self) -> usize {
        self.dim()
    }
    fn l_dim(&self) -> usize {
        2 * self.n
    }
    fn conjugate(&self, p: &[f64], l: &[f64], x: &[f64]) -> Result<ConjugateEval> {
        let u = self.legendre_inverse(p, l, x[0], x[1])?;
        let (m, f) = self.m_value(&u, l, x[0], x[1]);
        let value = u.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() - m;
        Ok(ConjugateEval { u, f, value })
    }
    fn hessian(&self, _p: &[f64], l: &[f64], _x: &[f64], e: &ConjugateEval) -> Result<Vec<f64>> {
        // Hess M* = Gᵀ K⁻¹ G with G = [I, (∂F/∂U)ᵀ].
        let m = self.dim();
        let nl = 2 * self.n;
        let (k, jf) = self.curvature(&e.u, l);
        let mut g = DMatrix::zeros(m, m + nl);
        g.view_mut((0, 0), (m, m)).copy_from(&DMatrix::identity(m, m));
        g.view_mut((0, m), (m, nl)).copy_from(&jf.transpose());
        let chol = k
            .clone()
            .cholesky()
            .ok_or_else(|| DualError::NotConvex { min_curvature: k.symmetric_eigenvalues().min() })?;
        let kg = chol.solve(&g);
        let h = g.tr_mul(&kg);
        Ok(h.transpose().as_slice().to_vec())
    }
}

/// Dual unknowns as stored by [`IbvpProblem`]: field-major, `λ`, then `γ`, then `ρ`.
#[derive(Debug, Clone)]
pub struct DualFieldSet {
    pub values: DVector<f64>,
    pub free: Vec<bool>,
    pub n: usize,
    pub order: usize,
    pub num_nodes: usize,
}

impl DualFieldSet {
    /// Nodal values of dual field `field` (`λ_I = I`, `γ_I = n + I`, `ρ_I = 2n + I`).
    pub fn field(&self, field: usize) -> &[f64] {
        &self.values.as_slice()[field * self.num_nodes..(field + 1) * self.num_nodes]
    }
    pub fn names(&self) -> Vec<String> {
        field_names(&["lambda", "gamma", "rho"], self.n, self.order + 1)
    }
}

fn field_names(blocks: &[&str], n: usize, count: usize) -> Vec<String> {
    blocks[..count]
        .iter()
        .flat_map(|b| (0..n).map(move |i| if n == 1 { b.to_string() } else { format!("{b}{}", i + 1) }))
        .collect()
}

/// Nodal primal fields `[component][node]`; components are `u`, then `B`, then `C`.
#[derive(Debug, Clone)]
pub struct PrimalFields {
    pub n: usize,
    pub order: usize,
    pub values: Vec<Vec<f64>>,
}

impl PrimalFields {
    pub fn zeros(n: usize, order: usize, num_nodes: usize) -> Self {
        Self { n, order, values: vec![vec![0.0; num_nodes]; n * (order + 1)] }
    }
    pub fn names(&self) -> Vec<String> {
        field_names(&["u", "B", "C"], self.n, self.order + 1)
    }
    pub fn u(&self, i: usize) -> &[f64] {
        &self.values[i]
    }
    fn at(&self, node: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[node]).collect()
    }
}

/// Nodal `P` and `L` arrays, `[node][component]`.
#[derive(Debug, Clone)]
pub struct PlFields {
    pub p: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
}

/// Solver settings for the space-time dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbvpSolverConfig {
    pub newton: NewtonConfig,
    /// Value held by every prescribed dual entry.
    pub dual_prescription: f64,
}

impl Default for IbvpSolverConfig {
    fn default() -> Self {
        Self { newton: NewtonConfig::default(), dual_prescription: 0.0 }
    }
}

/// The discrete dual functional of one problem instance.
pub struct IbvpProblem {
    pub spec: IbvpSpec,
    pub grid: SpaceTimeGrid,
    inner: DualProblem<IbvpConjugate>,
    conj: IbvpConjugate,
}

impl IbvpProblem {
    pub fn new(spec: IbvpSpec, grid: SpaceTimeGrid, potential: &SpacetimePotential, dual_prescription: f64) -> Result<Self> {
        spec.validate()?;
        let conj = IbvpConjugate::new(&spec, potential)?;
        let n = spec.n;
        let nf = n * (spec.order + 1);
        let (lam, gam, rho) = (|i: usize| i, |i: usize| n + i, |i: usize| 2 * n + i);
        let (dx, dt) = (Op::Deriv(0), Op::Deriv(1));

        let mut prow = Vec::new();
        for i in 0..n {
            let mut r = vec![Term::new(lam(i), dt, 1.0)];
            if spec.order >= 1 {
                r.push(Term::new(gam(i), dx, 1.0));
            }
            for j in 0..n {
                if spec.a[(j, i)] != 0.0 {
                    r.push(Term::new(lam(j), Op::Value, spec.a[(j, i)]));
                }
                if spec.b[(j, i)] != 0.0 {
                    r.push(Term::new(lam(j), dx, -spec.b[(j, i)]));
                }
            }
            prow.push(r);
        }
        if spec.order >= 1 {
            for i in 0..n {
                let mut r = vec![Term::new(gam(i), Op::Value, 1.0)];
                if spec.order >= 2 {
                    r.push(Term::new(rho(i), dx, 1.0));
                }
                for j in 0..n {
                    if spec.c[(j, i)] != 0.0 {
                        r.push(Term::new(lam(j), dx, -spec.c[(j, i)]));
                    }
                }
                prow.push(r);
            }
        }
        if spec.order >= 2 {
            for i in 0..n {
                prow.push(vec![Term::new(rho(i), Op::Value, 1.0)]);
            }
        }
        let mut lrow: Vec<Vec<Term>> = (0..n).map(|i| vec![Term::new(lam(i), Op::Value, 1.0)]).collect();
        lrow.extend((0..n).map(|i| vec![Term::new(lam(i), dx, -1.0)]));

        let mut inner = DualProblem::new(grid.tensor(), nf, LinearMap::new(prow), LinearMap::new(lrow), conj.clone(), -1.0)?;
        let tg = grid.tensor();

        for i in 0..n {
            let ic = spec.initial[i].clone();
            let load: Vec<f64> = face_load(&tg, 1, Side::Lower, |x| -ic(x[0]));
            inner.add_load(lam(i), &load);
        }
        for side in [Side::Lower, Side::Upper] {
            let ep = spec.endpoint(side);
            let nrm = side.normal();
            let slots: [(&Option<Vec<Profile>>, usize, f64); 3] =
                [(&ep.flux, 0, -1.0), (&ep.value, 1, nrm), (&ep.gradient, 2, nrm)];
            for (data, block, factor) in slots {
                if let Some(fs) = data {
                    for (i, f) in fs.iter().enumerate() {
                        let f = f.clone();
                        let load = face_load(&tg, 0, side, |x| factor * f(x[1]));
                        inner.add_load(block * n + i, &load);
                    }
                }
            }
        }

        let p0 = dual_prescription;
        for xi in 0..grid.nx {
            for i in 0..n {
                inner.fix(lam(i), grid.node(xi, grid.nt - 1), p0);
            }
        }
        for side in [Side::Lower, Side::Upper] {
            let ep = spec.endpoint(side);
            let xi = if side == Side::Lower { 0 } else { grid.nx - 1 };
            for k in 1..grid.nt {
                let node = grid.node(xi, k);
                for i in 0..n {
                    if ep.flux.is_none() {
                        inner.fix(lam(i), node, p0);
                    }
                    if spec.order >= 1 && ep.value.is_none() {
                        inner.fix(gam(i), node, p0);
                    }
                    if spec.order >= 2 && ep.gradient.is_none() {
                        inner.fix(rho(i), node, p0);
                    }
                }
            }
        }
        Ok(Self { spec, grid, inner, conj })
    }

    pub fn conjugate(&self) -> &IbvpConjugate {
        &self.conj
    }
    pub fn engine(&self) -> &DualProblem<IbvpConjugate> {
        &self.inner
    }
    pub fn num_dofs(&self) -> usize {
        self.inner.num_dofs()
    }

    fn wrap(&self, values: DVector<f64>) -> DualFieldSet {
        DualFieldSet {
            values,
            free: self.inner.free_mask().to_vec(),
            n: self.spec.n,
            order: self.spec.order,
            num_nodes: self.grid.num_nodes(),
        }
    }

    /// Dual fields equal to zero except for the prescriptions.
    pub fn initial_dual(&self) -> DualFieldSet {
        self.wrap(self.inner.expand(&DVector::zeros(self.inner.free_indices().len())))
    }

    /// Dual fields from a full vector, masked entries reset to their prescriptions.
    pub fn dual_from(&self, values: &DVector<f64>) -> Result<DualFieldSet> {
        if values.len() != self.num_dofs() {
            return Err(DualError::Dimension { context: "dual fields", expected: self.num_dofs(), got: values.len() });
        }
        Ok(self.wrap(self.inner.with_prescriptions(values)))
    }

    pub fn action(&self, dual: &DualFieldSet) -> Result<f64> {
        self.inner.action(&dual.values)
    }

    /// Gradient of the action with respect to every dual entry.
    pub fn gradient(&self, dual: &DualFieldSet) -> Result<DVector<f64>> {
        self.inner.gradient(&dual.values)
    }

    pub fn assemble_p(&self, dual: &DualFieldSet) -> Result<PlFields> {
        let nodal = self.inner.nodal_fields(&dual.values)?;
        Ok(PlFields { p: nodal.p, l: nodal.l })
    }

    /// `U_H` at every node from the nodal `P` and `L`.
    pub fn recover_primal(&self, dual: &DualFieldSet) -> Result<PrimalFields> {
        let nodal = self.inner.nodal_fields(&dual.values)?;
        let m = self.spec.primal_dim();
        let mut out = PrimalFields::zeros(self.spec.n, self.spec.order, self.grid.num_nodes());
        for (node, u) in nodal.u.iter().enumerate() {
            for c in 0..m {
                out.values[c][node] = u[c];
            }
        }
        Ok(out)
    }

    pub fn solve(&self, cfg: &IbvpSolverConfig) -> Result<IbvpSolution> {
        self.solve_from(&self.initial_dual(), cfg)
    }

    pub fn solve_from(&self, start: &DualFieldSet, cfg: &IbvpSolverConfig) -> Result<IbvpSolution> {
        let (full, critical) = self.inner.solve(&start.values, &cfg.newton)?;
        let dual = self.wrap(full);
        let primal = self.recover_primal(&dual)?;
        Ok(IbvpSolution { dual, primal, critical })
    }

    /// Weak residual of each primal equation tested against the nodal basis,
    /// for primal values `u` and fluxes `f = F(u)` given at the Gauss points
    /// (in the order of [`DualProblem::point_fields`]), plus the data terms.
    pub fn weak_residual(&self, u: &[Vec<f64>], f: &[Vec<f64>]) -> DVector<f64> {
        let n = self.spec.n;
        let nn = self.grid.num_nodes();
        let mut r = DVector::zeros(self.num_dofs());
        let spec = &self.spec;
        let mut q = 0;
        for_each_gauss_point(&self.grid.tensor(), |gp| {
            let (uq, fq) = (&u[q], &f[q]);
            q += 1;
            for (k, &node) in gp.nodes.iter().enumerate() {
                let (phi, phx, pht) = (gp.phi[k], gp.dphi[0][k], gp.dphi[1][k]);
                for j in 0..n {
                    // λ_j: ∫ φ (∂_t u − 𝔸u − 𝔹∂_x u − ℂ∂_x B − 𝔣 − ∂_x 𝔄), integrated by parts.
                    let mut v = -uq[j] * pht + fq[j] * (-phi) + fq[n + j] * phx;
                    for i in 0..n {
                        v -= spec.a[(j, i)] * uq[i] * phi;
                        v += spec.b[(j, i)] * uq[i] * phx;
                        if spec.order >= 1 {
                            v += spec.c[(j, i)] * uq[n + i] * phx;
                        }
                    }
                    r[j * nn + node] += gp.weight * v;
                    if spec.order >= 1 {
                        // γ_j: ∫ φ (∂_x u − B).
                        r[(n + j) * nn + node] += gp.weight * (-uq[j] * phx - uq[n + j] * phi);
                    }
                    if spec.order >= 2 {
                        // ρ_j: ∫ φ (∂_x B − C).
                        r[(2 * n + j) * nn + node] += gp.weight * (-uq[n + j] * phx - uq[2 * n + j] * phi);
                    }
                }
            }
        });
        r + self.inner.load()
    }

    /// Weak residual at the primal fields recovered pointwise from `dual`.
    pub fn recovered_weak_residual(&self, dual: &DualFieldSet) -> Result<DVector<f64>> {
        let pts = self.inner.point_fields(&dual.values)?;
        Ok(self.weak_residual(&pts.u, &pts.f))
    }

    /// The duality pairing of `dual` with the linear part of the primal
    /// equations at nodal primal fields (multilinear interpolation), minus its
    /// space-time boundary terms. Its derivative with respect to the primal
    /// nodal values is `−∫ P φ_n`.
    pub fn pairing(&self, dual: &DualFieldSet, primal: &PrimalFields) -> f64 {
        let spec = &self.spec;
        let n = spec.n;
        let nn = self.grid.num_nodes();
        let tg = self.grid.tensor();
        let dual_at = |gp: &crate::spacetime::GaussPoint, field: usize, deriv: Option<usize>| -> f64 {
            let w = match deriv {
                None => &gp.phi,
                Some(a) => &gp.dphi[a],
            };
            gp.nodes.iter().zip(w).map(|(&nd, s)| dual.values[field * nn + nd] * s).sum()
        };
        let prim_at = |gp: &crate::spacetime::GaussPoint, comp: usize, deriv: Option<usize>| -> f64 {
            let w = match deriv {
                None => &gp.phi,
                Some(a) => &gp.dphi[a],
            };
            gp.nodes.iter().zip(w).map(|(&nd, s)| primal.values[comp][nd] * s).sum()
        };
        let mut total = 0.0;
        for_each_gauss_point(&tg, |gp| {
            let mut s = 0.0;
            for j in 0..n {
                let mut e = prim_at(gp, j, Some(1));
                for i in 0..n {
                    e -= spec.a[(j, i)] * prim_at(gp, i, None) + spec.b[(j, i)] * prim_at(gp, i, Some(0));
                    if spec.order >= 1 {
                        e -= spec.c[(j, i)] * prim_at(gp, n + i, Some(0));
                    }
                }
                s += dual_at(gp, j, None) * e;
                if spec.order >= 1 {
                    s += dual_at(gp, n + j, None) * (prim_at(gp, j, Some(0)) - prim_at(gp, n + j, None));
                }
                if spec.order >= 2 {
                    s += dual_at(gp, 2 * n + j, None) * (prim_at(gp, n + j, Some(0)) - prim_at(gp, 2 * n + j, None));
                }
            }
            total += gp.weight * s;
        });
        // Boundary terms from integrating by parts: ∮ (λ u n_t + flux terms n_x).
        for (axis, side) in [(1, Side::Lower), (1, Side::Upper), (0, Side::Lower), (0, Side::Upper)] {
            let nrm = side.normal();
            let face = |a: &[f64], b: &[f64]| face_product(&tg, axis, side, a, b);
            for j in 0..n {
                let lam = dual.field(j);
                if axis == 1 {
                    total -= nrm * face(lam, &primal.values[j]);
                    continue;
                }
                let flux: Vec<f64> = (0..nn)
                    .map(|node| {
                        let mut v = 0.0;
                        for i in 0..n {
                            v -= spec.b[(j, i)] * primal.values[i][node];
                            if spec.order >= 1 {
                                v -= spec.c[(j, i)] * primal.values[n + i][node];
                            }
                        }
                        v
                    })
                    .collect();
                total -= nrm * face(lam, &flux);
                if spec.order >= 1 {
                    total -= nrm * face(dual.field(n + j), &primal.values[j]);
                }
                if spec.order >= 2 {
                    total -= nrm * face(dual.field(2 * n + j), &primal.values[n + j]);
                }
            }
        }
        total
    }
}

/// Result of a space-time dual solve.
#[derive(Debug, Clone)]
pub struct IbvpSolution {
    pub dual: DualFieldSet,
    pub primal: PrimalFields,
    pub critical: CriticalPointResult,
}

/// Nodal `P` and `L` of `dual`.
pub fn assemble_p(problem: &IbvpProblem, dual: &DualFieldSet) -> Result<PlFields> {
    problem.assemble_p(dual)
}

/// `U_H(P, L, x, t)`.
pub fn legendre_inverse(conj: &IbvpConjugate, p: &[f64], l: &[f64], x: f64, t: f64) -> Result<Vec<f64>> {
    conj.legendre_inverse(p, l, x, t)
}

pub fn dual_action(problem: &IbvpProblem, dual: &DualFieldSet) -> Result<f64> {
    problem.action(dual)
}

pub fn solve_dual_ibvp(problem: &IbvpProblem, cfg: &IbvpSolverConfig) -> Result<IbvpSolution> {
    problem.solve(cfg)
}

pub fn recover_primal(problem: &IbvpProblem, dual: &DualFieldSet) -> Result<PrimalFields> {
    problem.recover_primal(dual)
}

/// L2 (root mean square over the entries) and max norm of one residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNorm {
    pub name: String,
    pub l2: f64,
    pub max: f64,
    pub count: usize,
}

impl ResidualNorm {
    fn from_values(name: impl Into<String>, v: &[f64]) -> Self {
        let count = v.len();
        let l2 = if count == 0 { 0.0 } else { (v.iter().map(|x| x * x).sum::<f64>() / count as f64).sqrt() };
        let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Self { name: name.into(), l2, max, count }
    }
}

/// Nodal derivative along x (`axis = 0`) or t (`axis = 1`): central in the
/// interior, second-order one-sided at the ends.
pub fn nodal_derivative(grid: &SpaceTimeGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let (len, h) = if axis == 0 { (grid.nx, grid.dx()) } else { (grid.nt, grid.dt()) };
    let at = |i: usize, k: usize, s: usize| if axis == 0 { values[grid.node(s, k)] } else { values[grid.node(i, s)] };
    let mut out = vec![0.0; values.len()];
    for i in 0..grid.nx {
        for k in 0..grid.nt {
            let s = if axis == 0 { i } else { k };
            let d = if s == 0 {
                (-3.0 * at(i, k, 0) + 4.0 * at(i, k, 1) - at(i, k, 2)) / (2.0 * h)
            } else if s + 1 == len {
                (3.0 * at(i, k, s) - 4.0 * at(i, k, s - 1) + at(i, k, s - 2)) / (2.0 * h)
            } else {
                (at(i, k, s + 1) - at(i, k, s - 1)) / (2.0 * h)
            };
            out[grid.node(i, k)] = d;
        }
    }
    out
}

/// Discrete residual of every cascade line and every condition, by nodal
/// finite differences.
pub fn primal_residual(primal: &PrimalFields, spec: &IbvpSpec, grid: &SpaceTimeGrid) -> Vec<ResidualNorm> {
    let n = spec.n;
    let nn = grid.num_nodes();
    let m = spec.primal_dim();
    let mut fl = vec![vec![0.0; nn]; 2 * n];
    if let Some(nl) = &spec.nonlinearity {
        let mut f = vec![0.0; n];
        let mut a = vec![0.0; n];
        for node in 0..nn {
            nl.eval(&primal.at(node), &mut f, &mut a);
            for i in 0..n {
                fl[i][node] = f[i];
                fl[n + i][node] = a[i];
            }
        }
    }
    let dx: Vec<Vec<f64>> = primal.values.iter().map(|v| nodal_derivative(grid, v, 0)).collect();
    let dt: Vec<Vec<f64>> = primal.values.iter().take(n).map(|v| nodal_derivative(grid, v, 1)).collect();
    let dflux: Vec<Vec<f64>> = (0..n).map(|i| nodal_derivative(grid, &fl[n + i], 0)).collect();
    let suffix = |i: usize| if n == 1 { String::new() } else { format!("[{}]", i + 1) };
    let mut out = Vec::new();
    for j in 0..n {
        let r: Vec<f64> = (0..nn)
            .map(|node| {
                let mut e = dt[j][node] - fl[j][node] - dflux[j][node];
                for i in 0..n {
                    e -= spec.a[(j, i)] * primal.values[i][node] + spec.b[(j, i)] * dx[i][node];
                    if spec.order >= 1 {
                        e -= spec.c[(j, i)] * dx[n + i][node];
                    }
                }
                e
            })
            .collect();
        out.push(ResidualNorm::from_values(format!("evolution{}", suffix(j)), &r));
    }
    for j in 0..n {
        if spec.order >= 1 {
            let r: Vec<f64> = (0..nn).map(|node| dx[j][node] - primal.values[n + j][node]).collect();
            out.push(ResidualNorm::from_values(format!("gradient{}", suffix(j)), &r));
        }
        if spec.order >= 2 {
            let r: Vec<f64> = (0..nn).map(|node| dx[n + j][node] - primal.values[2 * n + j][node]).collect();
            out.push(ResidualNorm::from_values(format!("second_gradient{}", suffix(j)), &r));
        }
    }
    for j in 0..n {
        let r: Vec<f64> = (0..grid.nx).map(|i| primal.values[j][grid.node(i, 0)] - (spec.initial[j])(grid.x(i))).collect();
        out.push(ResidualNorm::from_values(format!("initial{}", suffix(j)), &r));
    }
    for side in [Side::Lower, Side::Upper] {
        let ep = spec.endpoint(side);
        let xi = if side == Side::Lower { 0 } else { grid.nx - 1 };
        let label = if side == Side::Lower { "left" } else { "right" };
        let nodes: Vec<(usize, f64)> = (1..grid.nt).map(|k| (grid.node(xi, k), grid.t(k))).collect();
        for j in 0..n {
            if let Some(f) = &ep.value {
                let r: Vec<f64> = nodes.iter().map(|&(nd, t)| primal.values[j][nd] - f[j](t)).collect();
                out.push(ResidualNorm::from_values(format!("{label}_value{}", suffix(j)), &r));
            }
            if let Some(f) = &ep.gradient {
                let r: Vec<f64> = nodes.iter().map(|&(nd, t)| primal.values[n + j][nd] - f[j](t)).collect();
                out.push(ResidualNorm::from_values(format!("{label}_gradient{}", suffix(j)), &r));
            }
            if let Some(f) = &ep.flux {
                let nrm = side.normal();
                let r: Vec<f64> = nodes
                    .iter()
                    .map(|&(nd, t)| {
                        let mut q = fl[n + j][nd];
                        for i in 0..n {
                            q += spec.b[(j, i)] * primal.values[i][nd];
                            if spec.order >= 1 && m > n {
                                q += spec.c[(j, i)] * primal.values[n + i][nd];
                            }
                        }
                        q * nrm - f[j](t)
                    })
                    .collect();
                out.push(ResidualNorm::from_values(format!("{label}_flux{}", suffix(j)), &r));
            }
        }
    }
    out
}

/// Composite Simpson rule with `2m` intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Heat equation `u_t = κ u_xx` on `[x_min, x_max]` with zero Dirichlet data,
/// by Fourier sine series; nodal values in grid order.
pub fn heat_reference(ic: &Profile, kappa: f64, grid: &SpaceTimeGrid) -> Vec<f64> {
    let len = grid.x_max - grid.x_min;
    let t_min = grid.dt();
    // Modes beyond K carry weight below e^{−K²π²κ t_min / L²} ≤ 1e−13.
    let kmax = ((30.0 / (std::f64::consts::PI.powi(2) * kappa * t_min / (len * len))).sqrt().ceil() as usize).clamp(8, 4000);
    let quad = (8 * kmax).max(4000);
    let coeffs: Vec<f64> = (1..=kmax)
        .map(|k| {
            let w = k as f64 * std::f64::consts::PI / len;
            2.0 / len * simpson(|x| ic(x) * (w * (x - grid.x_min)).sin(), grid.x_min, grid.x_max, quad)
        })
        .collect();
    let mut out = vec![0.0; grid.num_nodes()];
    for i in 0..grid.nx {
        let x = grid.x(i);
        for k in 0..grid.nt {
            let t = grid.t(k);
            out[grid.node(i, k)] = if k == 0 {
                ic(x)
            } else {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, b)| {
                        let w = (m + 1) as f64 * std::f64::consts::PI / len;
                        b * (-kappa * w * w * t).exp() * (w * (x - grid.x_min)).sin()
                    })
                    .sum()
            };
        }
    }
    out
}

/// Transport `u_t + c u_x = 0` by characteristics. `inflow(t)` gives the
/// value entering at the upstream endpoint; `None` extends the initial
/// profile, `u(x_in, t) = u0(x_in − c t)`.
pub fn transport_reference(u0: &Profile, inflow: Option<&Profile>, c_adv: f64, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    if c_adv == 0.0 || !c_adv.is_finite() {
        return Err(DualError::invalid("c_adv", "must be nonzero"));
    }
    let x_in = if c_adv > 0.0 { grid.x_min } else { grid.x_max };
    let mut out = vec![0.0; grid.num_nodes()];
    for i in 0..grid.nx {
        let x = grid.x(i);
        for k in 0..grid.nt {
            let t = grid.t(k);
            let foot = x - c_adv * t;
            let upstream = if c_adv > 0.0 { foot < grid.x_min } else { foot > grid.x_max };
            out[grid.node(i, k)] = match (upstream, inflow) {
                (true, Some(g)) => g(t - (x - x_in) / c_adv),
                _ => u0(foot),
            };
        }
    }
    Ok(out)
}

/// `u_t = κ ∂_x B`, `∂_x u = B`, zero Dirichlet data on both ends.
pub fn heat_spec(kappa: f64, ic: Profile) -> Result<IbvpSpec> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(DualError::invalid("kappa", format!("must be positive, got {kappa}")));
    }
    let zero = profile(|_| 0.0);
    Ok(IbvpSpec {
        n: 1,
        order: 1,
        a: DMatrix::zeros(1, 1),
        b: DMatrix::zeros(1, 1),
        c: DMatrix::from_element(1, 1, kappa),
        nonlinearity: None,
        initial: vec![ic],
        left: EndpointConditions::value(vec![zero.clone()]),
        right: EndpointConditions::value(vec![zero]),
    })
}

/// `u_t + c u_x = 0` with inflow data entering as a flux at the upstream end.
pub fn transport_spec(c_adv: f64, ic: Profile, inflow: Option<Profile>) -> Result<IbvpSpec> {
    if c_adv == 0.0 || !c_adv.is_finite() {
        return Err(DualError::invalid("c_adv", "must be nonzero"));
    }
    let x_in_ic = ic.clone();
    let g: Profile = match inflow {
        Some(g) => g,
        None => {
            // Placeholder: the upstream endpoint is filled in by `with_domain`.
            profile(move |t| x_in_ic(-c_adv * t))
        }
    };
    // 𝔹 = −c; the flux condition 𝔹 u n = τ̄ at the inflow end gives τ̄ = c g since n = −sign(c).
    let tau = profile(move |t| c_adv.abs() * g(t));
    let (left, right) = if c_adv > 0.0 {
        (EndpointConditions::flux(vec![tau]), EndpointConditions::free())
    } else {
        (EndpointConditions::free(), EndpointConditions::flux(vec![tau]))
    };
    Ok(IbvpSpec {
        n: 1,
        order: 0,
        a: DMatrix::zeros(1, 1),
        b: DMatrix::from_element(1, 1, -c_adv),
        c: DMatrix::zeros(1, 1),
        nonlinearity: None,
        initial: vec![ic],
        left,
        right,
    })
}

/// Viscous Burgers `u_t = κ ∂_x B − ∂_x(½ s u²)`, `∂_x u = B`, with the
/// boundary values held at the initial endpoint values.
pub fn burgers_spec(kappa: f64, strength: f64, ic: Profile, grid: &SpaceTimeGrid) -> Result<IbvpSpec> {
    let mut spec = heat_spec(kappa, ic.clone())?;
    let (ul, ur) = (ic(grid.x_min), ic(grid.x_max));
    spec.left = EndpointConditions::value(vec![profile(move |_| ul)]);
    spec.right = EndpointConditions::value(vec![profile(move |_| ur)]);
    spec.nonlinearity = Some(Arc::new(BurgersFlux { strength }));
    Ok(spec)
}

/// Order-2 heat problem with exact solution `u = x² + 2κt`, `B = 2x`, `C = 2`,
/// with value and gradient data on both ends. An end without gradient data
/// holds `ρ` and hence the recovered `C` at zero there.
pub fn manufactured_spec(kappa: f64, grid: &SpaceTimeGrid) -> Result<IbvpSpec> {
    let mut spec = heat_spec(kappa, profile(|x| x * x))?;
    spec.order = 2;
    let end = |x: f64| EndpointConditions {
        value: Some(vec![profile(move |t| x * x + 2.0 * kappa * t)]),
        gradient: Some(vec![profile(move |_| 2.0 * x)]),
        flux: None,
    };
    spec.left = end(grid.x_min);
    spec.right = end(grid.x_max);
    Ok(spec)
}

/// Exact fields of [`manufactured_spec`].
pub fn manufactured_exact(kappa: f64, grid: &SpaceTimeGrid) -> PrimalFields {
    let mut out = PrimalFields::zeros(1, 2, grid.num_nodes());
    for i in 0..grid.nx {
        for k in 0..grid.nt {
            let (x, t) = (grid.x(i), grid.t(k));
            let nd = grid.node(i, k);
            out.values[0][nd] = x * x + 2.0 * kappa * t;
            out.values[1][nd] = 2.0 * x;
            out.values[2][nd] = 2.0;
        }
    }
    out
}

/// Root mean square of `a − b`.
pub fn rms_difference(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sine() -> Profile {
        profile(|x| (PI * x).sin())
    }

    #[test]
    fn zero_dual_gives_zero_p() {
        let grid = SpaceTimeGrid::new(5, 4, 0.0, 1.0, 0.1).unwrap();
        let prob = IbvpProblem::new(heat_spec(1.0, sine()).unwrap(), grid, &SpacetimePotential::default(), 0.0).unwrap();
        let pl = prob.assemble_p(&prob.initial_dual()).unwrap();
        assert!(pl.p.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn heat_p_for_lambda_equal_time() {
        let grid = SpaceTimeGrid::new(5, 4, 0.0, 1.0, 0.1).unwrap();
        let prob = IbvpProblem::new(heat_spec(1.0, sine()).unwrap(), grid, &SpacetimePotential::default(), 0.0).unwrap();
        let mut d = DVector::zeros(prob.num_dofs());
        for i in 0..grid.nx {
            for k in 0..grid.nt {
                d[grid.node(i, k)] = grid.t(k);
            }
        }
        // Evaluate P from the raw fields, prescriptions not applied.
        let dual = DualFieldSet { values: d, free: vec![true; prob.num_dofs()], n: 1, order: 1, num_nodes: grid.num_nodes() };
        let pl = prob.assemble_p(&dual).unwrap();
        for p in &pl.p {
            assert_relative_eq!(p[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn legendre_inverse_examples() {
        let spec = heat_spec(1.0, sine()).unwrap();
        let conj = IbvpConjugate::new(&spec, &SpacetimePotential::default()).unwrap();
        assert_eq!(legendre_inverse(&conj, &[0.0, 0.0], &[0.0, 0.0], 0.3, 0.1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(legendre_inverse(&conj, &[2.0, -3.0], &[0.0, 0.0], 0.3, 0.1).unwrap(), vec![2.0, -3.0]);

        // 𝔄 = −½u², ∂_xλ = 1 so L = (λ, −1); M = 5u² + ½B² − ½u², hence 9u = 1.
        let grid = SpaceTimeGrid::new(5, 4, 0.0, 1.0, 0.1).unwrap();
        let burgers = burgers_spec(1.0, 1.0, profile(|_| 0.0), &grid).unwrap();
        let conj = IbvpConjugate::new(&burgers, &SpacetimePotential::uniform(10.0, 1.0, 1.0)).unwrap();
        let u = legendre_inverse(&conj, &[1.0, 0.0], &[0.0, -1.0], 0.5, 0.05).unwrap();
        assert_relative_eq!(u[0], 1.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_data_action_is_zero() {
        let grid = SpaceTimeGrid::new(6, 5, 0.0, 1.0, 0.1).unwrap();
        let prob = IbvpProblem::new(heat_spec(1.0, profile(|_| 0.0)).unwrap(), grid, &SpacetimePotential::default(), 0.0)
            .unwrap();
        let d = prob.initial_dual();
        assert_eq!(prob.action(&d).unwrap(), 0.0);
        let sol = prob.solve(&IbvpSolverConfig::default()).unwrap();
        assert!(sol.critical.converged);
        assert_eq!(sol.critical.iterations, 0);
        assert!(sol.primal.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn initial_data_enters_linearly() {
        // With every dual field zero except λ(x,0) = ε, the action is −ε ∫ ū φ.
        let grid = SpaceTimeGrid::new(6, 5, 0.0, 1.0, 0.1).unwrap();
        let prob = IbvpProblem::new(heat_spec(1.0, profile(|_| 1.0)).unwrap(), grid, &SpacetimePotential::default(), 0.0)
            .unwrap();
        assert_eq!(prob.action(&prob.initial_dual()).unwrap(), 0.0);
        let eps = 1e-3;
        let mut d = prob.initial_dual().values;
        for i in 0..grid.nx {
            d[grid.node(i, 0)] = eps;
        }
        let dual = prob.dual_from(&d).unwrap();
        let s = prob.action(&dual).unwrap();
        // The volume term is O(ε²/dt); the linear term is −ε · ∫ 1 dx = −ε.
        assert!((s + eps).abs() < 100.0 * eps * eps, "{s}");
    }

    #[test]
    fn base_fields_are_recovered_at_zero_dual() {
        let grid = SpaceTimeGrid::new(6, 5, 0.0, 1.0, 0.1).unwrap();
        let spec = heat_spec(1.0, sine()).unwrap();
        let pot = SpacetimePotential::default().with_initial_base(&spec);
        let prob = IbvpProblem::new(spec, grid, &pot, 0.0).unwrap();
        let primal = prob.recover_primal(&prob.initial_dual()).unwrap();
        for i in 0..grid.nx {
            for k in 0..grid.nt {
                assert_relative_eq!(primal.values[0][grid.node(i, k)], (PI * grid.x(i)).sin(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn heat_reference_single_modes() {
        let grid = SpaceTimeGrid::new(11, 6, 0.0, 1.0, 0.1).unwrap();
        for m in [1.0, 2.0] {
            let u = heat_reference(&profile(move |x| (m * PI * x).sin()), 1.0, &grid);
            for i in 0..grid.nx {
                for k in 0..grid.nt {
                    let (x, t) = (grid.x(i), grid.t(k));
                    let exact = (-m * m * PI * PI * t).exp() * (m * PI * x).sin();
                    assert!((u[grid.node(i, k)] - exact).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn transport_reference_examples() {
        let grid = SpaceTimeGrid::new(11, 6, 0.0, 1.0, 0.25).unwrap();
        let u = transport_reference(&profile(|x| (2.0 * PI * x).sin()), None, 1.0, &grid).unwrap();
        for i in 0..grid.nx {
            let x = grid.x(i);
            assert!((u[grid.node(i, 5)] - (2.0 * PI * (x - 0.25)).sin()).abs() < 1e-14);
        }
        let u = transport_reference(&profile(|_| 1.0), Some(&profile(|_| 1.0)), 1.0, &grid).unwrap();
        assert!(u.iter().all(|v| *v == 1.0));
        // Hat centred at 0.3 with half-width 0.1.
        let hat = profile(|x| (1.0 - ((x - 0.3) / 0.1).abs()).max(0.0));
        let u = transport_reference(&hat, Some(&profile(|_| 0.0)), 1.0, &grid).unwrap();
        for i in 0..grid.nx {
            for k in 0..grid.nt {
                let (x, t) = (grid.x(i), grid.t(k));
                let expected = if x - t < 0.0 { 0.0 } else { (1.0 - ((x - t - 0.3) / 0.1).abs()).max(0.0) };
                assert_eq!(u[grid.node(i, k)], expected);
            }
        }
        assert!(transport_reference(&hat, None, 0.0, &grid).is_err());
    }

    #[test]
    fn manufactured_solution_has_zero_residual() {
        let grid = SpaceTimeGrid::new(7, 5, 0.0, 1.0, 0.2).unwrap();
        let spec = manufactured_spec(0.7, &grid).unwrap();
        let exact = manufactured_exact(0.7, &grid);
        for r in primal_residual(&exact, &spec, &grid) {
            assert!(r.max <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn zero_fields_with_zero_data_have_zero_residual() {
        let grid = SpaceTimeGrid::new(7, 5, 0.0, 1.0, 0.2).unwrap();
        let spec = heat_spec(1.0, profile(|_| 0.0)).unwrap();
        let primal = PrimalFields::zeros(1, 1, grid.num_nodes());
        assert!(primal_residual(&primal, &spec, &grid).iter().all(|r| r.max == 0.0));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(heat_spec(-1.0, sine()).is_err());
        let mut spec = heat_spec(1.0, sine()).unwrap();
        spec.order = 0;
        assert!(spec.validate().is_err());
        assert!(SpaceTimeGrid::new(2, 5, 0.0, 1.0, 1.0).is_err());
    }
}
