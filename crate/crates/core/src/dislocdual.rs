//! Linear dislocation mechanics in the anti-plane (screw) reduction with a
//! prescribed dislocation velocity `V`:
//!
//! ```text
//! ρ ∂_t v = μ (∂₁U₁ + ∂₂U₂)
//! ∂_t U₁ = ∂₁v + α V₂
//! ∂_t U₂ = ∂₂v − α V₁
//! α = ∂₁U₂ − ∂₂U₁
//! ```
//!
//! The dual fields `(λ, A₁, A₂, B)` give
//!
//! ```text
//! p_v  = −ρ ∂_tλ − ∂₁A₁ − ∂₂A₂
//! p_U₁ = μ ∂₁λ + ∂_tA₁ + ∂₂B
//! p_U₂ = μ ∂₂λ + ∂_tA₂ − ∂₁B
//! p_α  = V₂ A₁ − V₁ A₂ − B
//! ```
//!
//! and, for a quadratic `M`, the action
//! `S = ∫ M*(p) + ∫ U₀·A(·,0) − ∫ ρ v₀ λ(·,0) + ∮ A·n v̄ + ∮ B (Ū₂n₁ − Ū₁n₂)`.
//! `λ` is prescribed on the spatial boundary and `λ, A` at the final time.

use std::sync::Arc;

use nalgebra::DVector;

use crate::optcore::{CriticalPointResult, NewtonConfig};
use crate::spacetime::{
    face_load, face_product, for_each_gauss_point, lumped_mass, DualProblem, LinearMap, Op,
    QuadraticConjugate, Side, TensorGrid, Term,
};
use crate::{DualError, Result};

/// A scalar function of `(x, y)`.
pub type PlaneField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// A function of `(x, y, t)` with values in `R²`.
pub type VectorField = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

pub fn plane_field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> PlaneField {
    Arc::new(f)
}

/// Uniform grid on `[x_min, x_max] × [y_min, y_max] × [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DislocGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub t_final: f64,
}

impl DislocGrid {
    pub fn new(nx: usize, ny: usize, nt: usize, t_final: f64) -> Result<Self> {
        Self::on_box(nx, ny, nt, [0.0, 1.0], [0.0, 1.0], t_final)
    }

    pub fn on_box(nx: usize, ny: usize, nt: usize, xr: [f64; 2], yr: [f64; 2], t_final: f64) -> Result<Self> {
        for (name, n) in [("nx", nx), ("ny", ny), ("nt", nt)] {
            if n < 3 {
                return Err(DualError::invalid(name, "need at least 3 nodes"));
            }
        }
        if !(xr[1] > xr[0]) || !(yr[1] > yr[0]) {
            return Err(DualError::invalid("domain", "upper bounds must exceed lower bounds"));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(DualError::invalid("T", "must be positive"));
        }
        Ok(Self { nx, ny, nt, x_min: xr[0], x_max: xr[1], y_min: yr[0], y_max: yr[1], t_final })
    }

    pub fn tensor(&self) -> TensorGrid {
        TensorGrid::new(
            &[self.nx, self.ny, self.nt],
            &[self.x_min, self.y_min, 0.0],
            &[self.x_max, self.y_max, self.t_final],
        )
        .expect("validated grid")
    }
    pub fn plane(&self) -> TensorGrid {
        TensorGrid::new(&[self.nx, self.ny], &[self.x_min, self.y_min], &[self.x_max, self.y_max]).expect("validated grid")
    }
    pub fn num_nodes(&self) -> usize {
        self.nx * self.ny * self.nt
    }
    /// Flat node index; time varies fastest, then y.
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nt + k
    }
    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }
    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }
    pub fn dt(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx { self.x_max } else { self.x_min + i as f64 * self.hx() }
    }
    pub fn y(&self, j: usize) -> f64 {
        if j + 1 == self.ny { self.y_max } else { self.y_min + j as f64 * self.hy() }
    }
    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.nt { self.t_final } else { k as f64 * self.dt() }
    }
}

/// Prescribed dislocation velocity.
#[derive(Clone)]
pub enum Velocity {
    Constant([f64; 2]),
    /// Rigid rotation `ω (−(y − y_c), x − x_c)`.
    Vortex { center: [f64; 2], omega: f64 },
    Field(VectorField),
}

impl Velocity {
    pub fn at(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        match self {
            Velocity::Constant(v) => *v,
            Velocity::Vortex { center, omega } => [-omega * (y - center[1]), omega * (x - center[0])],
            Velocity::Field(f) => f(x, y, t),
        }
    }
    pub fn is_zero(&self) -> bool {
        matches!(self, Velocity::Constant(v) if v[0] == 0.0 && v[1] == 0.0)
    }
}

impl std::fmt::Debug for Velocity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Velocity::Constant(v) => write!(f, "Constant({v:?})"),
            Velocity::Vortex { center, omega } => write!(f, "Vortex {{ center: {center:?}, omega: {omega} }}"),
            Velocity::Field(_) => write!(f, "Field(..)"),
        }
    }
}

/// Anti-plane problem data.
#[derive(Clone)]
pub struct AntiPlaneSpec {
    pub mu: f64,
    pub rho_m: f64,
    pub velocity: Velocity,
    pub v0: PlaneField,
    pub u0: [PlaneField; 2],
    pub alpha0: PlaneField,
    /// Boundary velocity `v̄(x, y, t)`; zero when absent.
    pub boundary_velocity: Option<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>>,
    /// Boundary distortion `Ū(x, y, t)`; the initial distortion when absent.
    pub boundary_distortion: Option<VectorField>,
}

impl std::fmt::Debug for AntiPlaneSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AntiPlaneSpec")
            .field("mu", &self.mu)
            .field("rho_m", &self.rho_m)
            .field("velocity", &self.velocity)
            .finish_non_exhaustive()
    }
}

impl AntiPlaneSpec {
    /// Checks the moduli and that `α₀ = ∂₁U₀₂ − ∂₂U₀₁` at every grid node,
    /// by central differences of step `1e−5`, to `tol` relative to `max |α₀|`.
    pub fn validate(&self, grid: &DislocGrid, tol: f64) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(DualError::invalid("mu", format!("must be positive, got {}", self.mu)));
        }
        if !(self.rho_m > 0.0 && self.rho_m.is_finite()) {
            return Err(DualError::invalid("rho_m", format!("must be positive, got {}", self.rho_m)));
        }
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1e-300;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let (x, y) = (grid.x(i), grid.y(j));
                let curl = ((self.u0[1])(x + h, y) - (self.u0[1])(x - h, y)) / (2.0 * h)
                    - ((self.u0[0])(x, y + h) - (self.u0[0])(x, y - h)) / (2.0 * h);
                let a = (self.alpha0)(x, y);
                worst = worst.max((curl - a).abs());
                scale = scale.max(a.abs());
            }
        }
        if worst > tol * scale.max(1.0) {
            return Err(DualError::invalid(
                "alpha0",
                format!("differs from the curl of U0 by {worst:.3e} (tolerance {tol:.1e})"),
            ));
        }
        Ok(())
    }

    fn boundary_distortion_at(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        match &self.boundary_distortion {
            Some(f) => f(x, y, t),
            None => [(self.u0[0])(x, y), (self.u0[1])(x, y)],
        }
    }

    /// Gaussian screw-dislocation blob: `α₀ = exp(−r²/2σ²)` with the
    /// divergence-free distortion whose curl it is; `v₀ = 0`.
    pub fn gaussian_blob(mu: f64, rho_m: f64, velocity: Velocity, sigma: f64, center: [f64; 2]) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DualError::invalid("sigma", "must be positive"));
        }
        let s2 = sigma * sigma;
        // U₀ = f(r) (−r_y, r_x) with f = σ² (1 − e^{−r²/2σ²}) / r², f(0) = 1/2.
        let fac = move |x: f64, y: f64| {
            let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            if r2 < 1e-8 * s2 {
                0.5 - r2 / (8.0 * s2)
            } else {
                -s2 * (-r2 / (2.0 * s2)).exp_m1() / r2
            }
        };
        Ok(Self {
            mu,
            rho_m,
            velocity,
            v0: plane_field(|_, _| 0.0),
            u0: [
                plane_field(move |x, y| -fac(x, y) * (y - center[1])),
                plane_field(move |x, y| fac(x, y) * (x - center[0])),
            ],
            alpha0: plane_field(move |x, y| (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / (2.0 * s2)).exp()),
            boundary_velocity: None,
            boundary_distortion: None,
        })
    }

    /// Dislocation-free standing wave on the unit square: `V = 0`, `v₀ = 0`,
    /// `U₀ = ∇(sin πx sin πy)`. See [`standing_wave_exact`].
    pub fn standing_wave(mu: f64, rho_m: f64) -> Self {
        use std::f64::consts::PI;
        Self {
            mu,
            rho_m,
            velocity: Velocity::Constant([0.0, 0.0]),
            v0: plane_field(|_, _| 0.0),
            u0: [
                plane_field(|x, y| PI * (PI * x).cos() * (PI * y).sin()),
                plane_field(|x, y| PI * (PI * x).sin() * (PI * y).cos()),
            ],
            alpha0: plane_field(|_, _| 0.0),
            boundary_velocity: None,
            boundary_distortion: None,
        }
    }
}

/// `v, U₁, U₂, α` of the standing wave at `(x, y, t)`.
pub fn standing_wave_exact(mu: f64, rho_m: f64, x: f64, y: f64, t: f64) -> [f64; 4] {
    use std::f64::consts::PI;
    let omega = PI * (2.0 * mu / rho_m).sqrt();
    let phi = (PI * x).sin() * (PI * y).sin();
    let (c, s) = ((omega * t).cos(), (omega * t).sin());
    [
        -omega * phi * s,
        PI * (PI * x).cos() * (PI * y).sin() * c,
        PI * (PI * x).sin() * (PI * y).cos() * c,
        0.0,
    ]
}

/// `M(v, U, α) = ½ c_v (v − v̄)² + ½ c_U |U − Ū|² + ½ c_α (α − ᾱ)²`.
#[derive(Clone)]
pub struct QuadraticM {
    pub c_v: f64,
    pub c_u: f64,
    pub c_alpha: f64,
    /// Base state `(v̄, Ū₁, Ū₂, ᾱ)` as a function of `(x, y, t)`.
    pub base: Option<Arc<dyn Fn(f64, f64, f64) -> [f64; 4] + Send + Sync>>,
}

impl Default for QuadraticM {
    fn default() -> Self {
        Self { c_v: 1.0, c_u: 1.0, c_alpha: 0.01, base: None }
    }
}

impl std::fmt::Debug for QuadraticM {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadraticM")
            .field("c_v", &self.c_v)
            .field("c_u", &self.c_u)
            .field("c_alpha", &self.c_alpha)
            .field("base", &self.base.is_some())
            .finish()
    }
}

impl QuadraticM {
    pub fn new(c_v: f64, c_u: f64, c_alpha: f64) -> Result<Self> {
        let m = Self { c_v, c_u, c_alpha, base: None };
        m.conjugate()?;
        Ok(m)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.c_v, self.c_u, self.c_u, self.c_alpha]
    }

    fn conjugate(&self) -> Result<QuadraticConjugate> {
        let q = QuadraticConjugate::new(self.coefficients().to_vec())?;
        Ok(match &self.base {
            Some(b) => {
                let b = b.clone();
                q.with_base(Arc::new(move |x: &[f64], out: &mut [f64]| out.copy_from_slice(&b(x[0], x[1], x[2]))))
            }
            None => q,
        })
    }

    pub fn value(&self, q: &[f64; 4], x: [f64; 3]) -> f64 {
        let base = self.base.as_ref().map_or([0.0; 4], |b| b(x[0], x[1], x[2]));
        let c = self.coefficients();
        (0..4).map(|i| 0.5 * c[i] * (q[i] - base[i]).powi(2)).sum()
    }
}

/// `Q_M(p) = (∂M)⁻¹(p)` and `M*(p) = Q_M·p − M(Q_M)` at `(x, y, t)`.
pub fn legendre_map(m: &QuadraticM, p: &[f64; 4], x: [f64; 3]) -> ([f64; 4], f64) {
    let base = m.base.as_ref().map_or([0.0; 4], |b| b(x[0], x[1], x[2]));
    let c = m.coefficients();
    let q: [f64; 4] = std::array::from_fn(|i| base[i] + p[i] / c[i]);
    let qp: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
    (q, qp - m.value(&q, x))
}

/// Dual fields `(λ, A₁, A₂, B)`, field-major over the grid nodes.
#[derive(Debug, Clone)]
pub struct DislocDualFields {
    pub values: DVector<f64>,
    pub free: Vec<bool>,
    pub num_nodes: usize,
}

pub const DUAL_NAMES: [&str; 4] = ["lambda", "A1", "A2", "B"];
pub const PRIMAL_NAMES: [&str; 4] = ["v", "U1", "U2", "alpha"];

impl DislocDualFields {
    pub fn field(&self, f: usize) -> &[f64] {
        &self.values.as_slice()[f * self.num_nodes..(f + 1) * self.num_nodes]
    }
}

/// Nodal primal fields `[v, U₁, U₂, α][node]`.
#[derive(Debug, Clone)]
pub struct AntiPlaneFields {
    pub values: [Vec<f64>; 4],
}

impl AntiPlaneFields {
    pub fn zeros(num_nodes: usize) -> Self {
        Self { values: std::array::from_fn(|_| vec![0.0; num_nodes]) }
    }
    pub fn v(&self) -> &[f64] {
        &self.values[0]
    }
    pub fn alpha(&self) -> &[f64] {
        &self.values[3]
    }
}

/// The discrete anti-plane dual functional.
pub struct DislocProblem {
    pub spec: AntiPlaneSpec,
    pub grid: DislocGrid,
    pub m: QuadraticM,
    inner: DualProblem<QuadraticConjugate>,
}

const LAMBDA: usize = 0;
const A1: usize = 1;
const A2: usize = 2;
const B: usize = 3;

impl DislocProblem {
    pub fn new(spec: AntiPlaneSpec, grid: DislocGrid, m: QuadraticM, dual_prescription: f64) -> Result<Self> {
        spec.validate(&grid, 1e-6)?;
        let (mu, rho) = (spec.mu, spec.rho_m);
        let (d1, d2, dt) = (Op::Deriv(0), Op::Deriv(1), Op::Deriv(2));
        let vel = spec.velocity.clone();
        let v2 = {
            let vel = vel.clone();
            Arc::new(move |x: &[f64]| vel.at(x[0], x[1], x[2])[1])
        };
        let minus_v1 = Arc::new(move |x: &[f64]| -vel.at(x[0], x[1], x[2])[0]);
        let p_map = LinearMap::new(vec![
            vec![Term::new(LAMBDA, dt, -rho), Term::new(A1, d1, -1.0), Term::new(A2, d2, -1.0)],
            vec![Term::new(LAMBDA, d1, mu), Term::new(A1, dt, 1.0), Term::new(B, d2, 1.0)],
            vec![Term::new(LAMBDA, d2, mu), Term::new(A2, dt, 1.0), Term::new(B, d1, -1.0)],
            vec![
                Term::field_coef(A1, Op::Value, v2),
                Term::field_coef(A2, Op::Value, minus_v1),
                Term::new(B, Op::Value, -1.0),
            ],
        ]);
        let mut inner = DualProblem::new(grid.tensor(), 4, p_map, LinearMap::new(vec![]), m.conjugate()?, 1.0)?;
        let tg = grid.tensor();

        let (u01, u02, v0) = (spec.u0[0].clone(), spec.u0[1].clone(), spec.v0.clone());
        inner.add_load(A1, &face_load(&tg, 2, Side::Lower, |x| u01(x[0], x[1])));
        inner.add_load(A2, &face_load(&tg, 2, Side::Lower, |x| u02(x[0], x[1])));
        inner.add_load(LAMBDA, &face_load(&tg, 2, Side::Lower, |x| -rho * v0(x[0], x[1])));
        for axis in 0..2 {
            for side in [Side::Lower, Side::Upper] {
                let nrm = side.normal();
                let normal = |a: usize| if a == axis { nrm } else { 0.0 };
                let (n1, n2) = (normal(0), normal(1));
                let load = face_load(&tg, axis, side, |x| {
                    let ub = spec.boundary_distortion_at(x[0], x[1], x[2]);
                    ub[1] * n1 - ub[0] * n2
                });
                inner.add_load(B, &load);
                if let Some(vb) = &spec.boundary_velocity {
                    let load = face_load(&tg, axis, side, |x| nrm * vb(x[0], x[1], x[2]));
                    inner.add_load(A1 + axis, &load);
                }
            }
        }

        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let edge = i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.ny;
                for k in 0..grid.nt {
                    let node = grid.node(i, j, k);
                    if edge {
                        inner.fix(LAMBDA, node, dual_prescription);
                    }
                    if k + 1 == grid.nt {
                        for f in [LAMBDA, A1, A2] {
                            inner.fix(f, node, dual_prescription);
                        }
                    }
                }
            }
        }
        Ok(Self { spec, grid, m, inner })
    }

    pub fn engine(&self) -> &DualProblem<QuadraticConjugate> {
        &self.inner
    }
    pub fn num_dofs(&self) -> usize {
        self.inner.num_dofs()
    }

    fn wrap(&self, values: DVector<f64>) -> DislocDualFields {
        DislocDualFields { values, free: self.inner.free_mask().to_vec(), num_nodes: self.grid.num_nodes() }
    }

    pub fn initial_dual(&self) -> DislocDualFields {
        self.wrap(self.inner.expand(&DVector::zeros(self.inner.free_indices().len())))
    }

    pub fn dual_from(&self, values: &DVector<f64>) -> Result<DislocDualFields> {
        if values.len() != self.num_dofs() {
            return Err(DualError::Dimension { context: "dual fields", expected: self.num_dofs(), got: values.len() });
        }
        Ok(self.wrap(self.inner.with_prescriptions(values)))
    }

    pub fn action(&self, dual: &DislocDualFields) -> Result<f64> {
        self.inner.action(&dual.values)
    }

    pub fn gradient(&self, dual: &DislocDualFields) -> Result<DVector<f64>> {
        self.inner.gradient(&dual.values)
    }

    /// Nodal `(p_v, p_U₁, p_U₂, p_α)`.
    pub fn assemble_p(&self, dual: &DislocDualFields) -> Result<Vec<[f64; 4]>> {
        Ok(self.inner.nodal_fields(&dual.values)?.p.into_iter().map(|p| [p[0], p[1], p[2], p[3]]).collect())
    }

    pub fn recover_primal(&self, dual: &DislocDualFields) -> Result<AntiPlaneFields> {
        let nodal = self.inner.nodal_fields(&dual.values)?;
        let mut out = AntiPlaneFields::zeros(self.grid.num_nodes());
        for (node, u) in nodal.u.iter().enumerate() {
            for c in 0..4 {
                out.values[c][node] = u[c];
            }
        }
        Ok(out)
    }

    pub fn solve(&self, cfg: &NewtonConfig) -> Result<DislocSolution> {
        let (full, critical) = self.inner.solve(&self.initial_dual().values, cfg)?;
        let dual = self.wrap(full);
        let primal = self.recover_primal(&dual)?;
        Ok(DislocSolution { dual, primal, critical })
    }

    /// The pairing of the dual fields with the four primal equations,
    /// evaluated on nodal primal fields interpolated multilinearly, minus the
    /// boundary terms of integration by parts. Its derivative with respect to
    /// the primal nodal values is `−∫ p φ_n`.
    pub fn pairing(&self, dual: &DislocDualFields, primal: &AntiPlaneFields) -> f64 {
        let (mu, rho) = (self.spec.mu, self.spec.rho_m);
        let tg = self.grid.tensor();
        let mut total = 0.0;
        for_each_gauss_point(&tg, |gp| {
            let interp = |vals: &[f64], d: Option<usize>| -> f64 {
                let w = match d {
                    None => &gp.phi,
                    Some(a) => &gp.dphi[a],
                };
                gp.nodes.iter().zip(w).map(|(&n, s)| vals[n] * s).sum()
            };
            let dv = |f: usize| interp(dual.field(f), None);
            let pr = |c: usize, d: Option<usize>| interp(&primal.values[c], d);
            let vel = self.spec.velocity.at(gp.x[0], gp.x[1], gp.x[2]);
            let alpha = pr(3, None);
            let momentum = mu * (pr(1, Some(0)) + pr(2, Some(1))) - rho * pr(0, Some(2));
            let e1 = pr(1, Some(2)) - pr(0, Some(0)) - alpha * vel[1];
            let e2 = pr(2, Some(2)) - pr(0, Some(1)) + alpha * vel[0];
            let curl = alpha - pr(2, Some(0)) + pr(1, Some(1));
            total += gp.weight * (dv(LAMBDA) * momentum + dv(A1) * e1 + dv(A2) * e2 + dv(B) * curl);
        });
        let face = |axis: usize, side: Side, a: &[f64], b: &[f64]| side.normal() * face_product(&tg, axis, side, a, b);
        let [v, u1, u2, _] = &primal.values;
        for side in [Side::Lower, Side::Upper] {
            total -= -rho * face(2, side, dual.field(LAMBDA), v) + face(2, side, dual.field(A1), u1)
                + face(2, side, dual.field(A2), u2);
            total -= mu * face(0, side, dual.field(LAMBDA), u1) + mu * face(1, side, dual.field(LAMBDA), u2);
            total -= -face(0, side, dual.field(A1), v) - face(1, side, dual.field(A2), v);
            total -= -face(0, side, dual.field(B), u2) + face(1, side, dual.field(B), u1);
        }
        total
    }

    /// Weak curl defect at every node: `curl_n − α_n`, with
    /// `curl_n = [∮ φ_n (Ū₂n₁ − Ū₁n₂) − ∫ (U₂∂₁φ_n − U₁∂₂φ_n)] / m_n` and
    /// `α_n = ∫ α φ_n / m_n`, from the Gauss-point recovered fields.
    pub fn curl_defect(&self, dual: &DislocDualFields) -> Result<Vec<f64>> {
        let pts = self.inner.point_fields(&dual.values)?;
        let tg = self.grid.tensor();
        let nn = self.grid.num_nodes();
        let mut acc = vec![0.0; nn];
        let mut q = 0;
        for_each_gauss_point(&tg, |gp| {
            let u = &pts.u[q];
            q += 1;
            for (k, &node) in gp.nodes.iter().enumerate() {
                acc[node] -= gp.weight * (u[2] * gp.dphi[0][k] - u[1] * gp.dphi[1][k] + u[3] * gp.phi[k]);
            }
        });
        for axis in 0..2 {
            for side in [Side::Lower, Side::Upper] {
                let nrm = side.normal();
                let (n1, n2) = if axis == 0 { (nrm, 0.0) } else { (0.0, nrm) };
                let load = face_load(&tg, axis, side, |x| {
                    let ub = self.spec.boundary_distortion_at(x[0], x[1], x[2]);
                    ub[1] * n1 - ub[0] * n2
                });
                acc.iter_mut().zip(&load).for_each(|(a, l)| *a += l);
            }
        }
        let mass = lumped_mass(&tg);
        Ok(acc.iter().zip(&mass).map(|(a, m)| a / m).collect())
    }
}

#[derive(Debug, Clone)]
pub struct DislocSolution {
    pub dual: DislocDualFields,
    pub primal: AntiPlaneFields,
    pub critical: CriticalPointResult,
}

impl DislocSolution {
    pub fn max_curl_defect(&self, problem: &DislocProblem) -> Result<f64> {
        Ok(problem.curl_defect(&self.dual)?.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }
}

pub fn assemble_p(problem: &DislocProblem, dual: &DislocDualFields) -> Result<Vec<[f64; 4]>> {
    problem.assemble_p(dual)
}

/// Newton settings suited to the linear anti-plane dual.
pub fn default_disloc_newton() -> NewtonConfig {
    NewtonConfig { grad_tol: 1e-12, linear_tol: 1e-13, max_iter: 10, ..NewtonConfig::default() }
}

pub fn solve_disloc_dual(spec: AntiPlaneSpec, grid: DislocGrid, m: QuadraticM, cfg: &NewtonConfig) -> Result<(DislocProblem, DislocSolution)> {
    let problem = DislocProblem::new(spec, grid, m, 0.0)?;
    let sol = problem.solve(cfg)?;
    Ok((problem, sol))
}

/// `∫ α dA` on every time level, by the trapezoidal rule on the nodes.
pub fn burgers_content(alpha: &[f64], grid: &DislocGrid) -> Vec<f64> {
    let wx = |i: usize| if i == 0 || i + 1 == grid.nx { 0.5 } else { 1.0 };
    let wy = |j: usize| if j == 0 || j + 1 == grid.ny { 0.5 } else { 1.0 };
    (0..grid.nt)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    s += wx(i) * wy(j) * alpha[grid.node(i, j, k)];
                }
            }
            s * grid.hx() * grid.hy()
        })
        .collect()
}

/// Largest relative change of a content series from its first entry.
pub fn content_drift(series: &[f64]) -> f64 {
    let c0 = series[0];
    series.iter().fold(0.0_f64, |m, c| m.max((c - c0).abs())) / c0.abs().max(1e-300)
}

/// Settings of the upwind finite-volume reference for `∂_tα + div(αV) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaOracleConfig {
    /// Fine cells per coarse cell along each axis.
    pub refine: usize,
    /// Sub-steps per coarse time step; chosen to keep the Courant number ≤ 1 when absent.
    pub substeps: Option<usize>,
}

impl Default for AlphaOracleConfig {
    fn default() -> Self {
        Self { refine: 4, substeps: None }
    }
}

/// Reference `α(x, y, t)` at the grid nodes by first-order upwind finite
/// volumes on a refined grid, with no inflow of `α`. Node values average the
/// adjacent fine cells.
pub fn alpha_transport_oracle(
    alpha0: &PlaneField,
    velocity: &Velocity,
    grid: &DislocGrid,
    cfg: &AlphaOracleConfig,
) -> Result<Vec<f64>> {
    if cfg.refine == 0 {
        return Err(DualError::invalid("refine", "must be at least 1"));
    }
    let (mx, my) = ((grid.nx - 1) * cfg.refine, (grid.ny - 1) * cfg.refine);
    let (hx, hy) = (grid.hx() / cfg.refine as f64, grid.hy() / cfg.refine as f64);
    let cx = |i: usize| grid.x_min + (i as f64 + 0.5) * hx;
    let cy = |j: usize| grid.y_min + (j as f64 + 0.5) * hy;

    // Largest face speed over the run, sampled on the fine faces at every coarse level.
    let mut vmax = [0.0_f64; 2];
    for k in 0..grid.nt {
        let t = grid.t(k);
        for i in 0..=mx {
            for j in 0..=my {
                let x = grid.x_min + i as f64 * hx;
                let y = grid.y_min + j as f64 * hy;
                let vx = velocity.at(x, cy(j.min(my - 1)), t)[0];
                let vy = velocity.at(cx(i.min(mx - 1)), y, t)[1];
                vmax[0] = vmax[0].max(vx.abs());
                vmax[1] = vmax[1].max(vy.abs());
            }
        }
    }
    let courant_coarse = grid.dt() * (vmax[0] / hx + vmax[1] / hy);
    let substeps = match cfg.substeps {
        Some(s) => {
            let c = courant_coarse / s.max(1) as f64;
            if c > 1.0 {
                return Err(DualError::Cfl { courant: c });
            }
            s.max(1)
        }
        None => (courant_coarse.ceil() as usize).max(1),
    };
    let tau = grid.dt() / substeps as f64;

    // Initial cell averages by the 2×2 Gauss rule.
    let g = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
    let mut a = vec![0.0; mx * my];
    for i in 0..mx {
        for j in 0..my {
            let mut s = 0.0;
            for gx in g {
                for gy in g {
                    s += alpha0(grid.x_min + (i as f64 + gx) * hx, grid.y_min + (j as f64 + gy) * hy);
                }
            }
            a[i * my + j] = 0.25 * s;
        }
    }

    let mut out = vec![0.0; grid.num_nodes()];
    let sample = |a: &[f64], out: &mut [f64], k: usize| {
        for ni in 0..grid.nx {
            for nj in 0..grid.ny {
                let fi = ni * cfg.refine;
                let fj = nj * cfg.refine;
                let mut s = 0.0;
                let mut c = 0;
                for ii in [fi.wrapping_sub(1), fi] {
                    for jj in [fj.wrapping_sub(1), fj] {
                        if ii < mx && jj < my {
                            s += a[ii * my + jj];
                            c += 1;
                        }
                    }
                }
                out[grid.node(ni, nj, k)] = s / c as f64;
            }
        }
    };
    sample(&a, &mut out, 0);
    let mut next = vec![0.0; mx * my];
    for k in 1..grid.nt {
        for s in 0..substeps {
            let t = grid.t(k - 1) + s as f64 * tau;
            next.copy_from_slice(&a);
            // x-faces: face i sits between cells i−1 and i.
            for j in 0..my {
                for i in 0..=mx {
                    let vn = velocity.at(grid.x_min + i as f64 * hx, cy(j), t)[0];
                    let flux = upwind_flux(vn, (i > 0).then(|| a[(i - 1) * my + j]), (i < mx).then(|| a[i * my + j]));
                    let df = tau * flux / hx;
                    if i > 0 {
                        next[(i - 1) * my + j] -= df;
                    }
                    if i < mx {
                        next[i * my + j] += df;
                    }
                }
            }
            for i in 0..mx {
                for j in 0..=my {
                    let vn = velocity.at(cx(i), grid.y_min + j as f64 * hy, t)[1];
                    let flux = upwind_flux(vn, (j > 0).then(|| a[i * my + j - 1]), (j < my).then(|| a[i * my + j]));
                    let df = tau * flux / hy;
                    if j > 0 {
                        next[i * my + j - 1] -= df;
                    }
                    if j < my {
                        next[i * my + j] += df;
                    }
                }
            }
            std::mem::swap(&mut a, &mut next);
        }
        sample(&a, &mut out, k);
    }
    Ok(out)
}

/// Flux through a face with normal velocity `vn` (positive from `left` to
/// `right`); a missing neighbour is outside the domain and carries no `α`.
fn upwind_flux(vn: f64, left: Option<f64>, right: Option<f64>) -> f64 {
    if vn >= 0.0 {
        vn * left.unwrap_or(0.0)
    } else {
        vn * right.unwrap_or(0.0)
    }
}

/// Reference for the dislocation-free problem (`V = 0`): staggered leapfrog
/// on a grid refined `refine` times, `v` at nodes, `U₁` on x-edges, `U₂` on
/// y-edges, with `v` held at zero on the boundary. Returns `v` and `U`
/// interpolated to the coarse nodes, `[v, U₁, U₂][node]`.
pub fn elastodynamic_oracle(spec: &AntiPlaneSpec, grid: &DislocGrid, refine: usize) -> Result<[Vec<f64>; 3]> {
    if refine == 0 {
        return Err(DualError::invalid("refine", "must be at least 1"));
    }
    let (mx, my) = ((grid.nx - 1) * refine, (grid.ny - 1) * refine);
    let (hx, hy) = (grid.hx() / refine as f64, grid.hy() / refine as f64);
    let c = (spec.mu / spec.rho_m).sqrt();
    let courant = grid.dt() * c * (1.0 / (hx * hx) + 1.0 / (hy * hy)).sqrt();
    let steps = ((courant / 0.5).ceil() as usize).max(1);
    let tau = grid.dt() / steps as f64;
    let xs = |i: f64| grid.x_min + i * hx;
    let ys = |j: f64| grid.y_min + j * hy;
    let vi = |i: usize, j: usize| i * (my + 1) + j;
    let mut v = vec![0.0; (mx + 1) * (my + 1)];
    let mut u1 = vec![0.0; mx * (my + 1)];
    let mut u2 = vec![0.0; (mx + 1) * my];
    for i in 0..=mx {
        for j in 0..=my {
            if i > 0 && j > 0 && i < mx && j < my {
                v[vi(i, j)] = (spec.v0)(xs(i as f64), ys(j as f64));
            }
            if i < mx {
                u1[i * (my + 1) + j] = (spec.u0[0])(xs(i as f64 + 0.5), ys(j as f64));
            }
            if j < my {
                u2[i * my + j] = (spec.u0[1])(xs(i as f64), ys(j as f64 + 0.5));
            }
        }
    }
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.num_nodes()]);
    let record = |v: &[f64], u1: &[f64], u2: &[f64], out: &mut [Vec<f64>; 3], k: usize| {
        for ni in 0..grid.nx {
            for nj in 0..grid.ny {
                let (i, j) = (ni * refine, nj * refine);
                let node = grid.node(ni, nj, k);
                out[0][node] = v[vi(i, j)];
                let a = if i > 0 { u1[(i - 1) * (my + 1) + j] } else { u1[j] };
                let b = if i < mx { u1[i * (my + 1) + j] } else { a };
                out[1][node] = if i > 0 && i < mx { 0.5 * (a + b) } else { 1.5 * b - 0.5 * u1[if i > 0 { (i - 2) * (my + 1) + j } else { (my + 1) + j }] };
                let a = if j > 0 { u2[i * my + j - 1] } else { u2[i * my] };
                let b = if j < my { u2[i * my + j] } else { a };
                out[2][node] = if j > 0 && j < my { 0.5 * (a + b) } else { 1.5 * b - 0.5 * u2[i * my + if j > 0 { j - 2 } else { 1 }] };
            }
        }
    };
    // Half step for v to stagger in time.
    let accel = |u1: &[f64], u2: &[f64], i: usize, j: usize| {
        let div = (u1[i * (my + 1) + j] - u1[(i - 1) * (my + 1) + j]) / hx + (u2[i * my + j] - u2[i * my + j - 1]) / hy;
        spec.mu / spec.rho_m * div
    };
    record(&v, &u1, &u2, &mut out, 0);
    let mut vhalf = v.clone();
    for i in 1..mx {
        for j in 1..my {
            vhalf[vi(i, j)] += 0.5 * tau * accel(&u1, &u2, i, j);
        }
    }
    for k in 1..grid.nt {
        for _ in 0..steps {
            for i in 0..mx {
                for j in 0..=my {
                    u1[i * (my + 1) + j] += tau * (vhalf[vi(i + 1, j)] - vhalf[vi(i, j)]) / hx;
                }
            }
            for i in 0..=mx {
                for j in 0..my {
                    u2[i * my + j] += tau * (vhalf[vi(i, j + 1)] - vhalf[vi(i, j)]) / hy;
                }
            }
            for i in 1..mx {
                for j in 1..my {
                    let a = accel(&u1, &u2, i, j);
                    v[vi(i, j)] = vhalf[vi(i, j)] + 0.5 * tau * a;
                    vhalf[vi(i, j)] += tau * a;
                }
            }
        }
        record(&v, &u1, &u2, &mut out, k);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> (AntiPlaneSpec, DislocGrid) {
        let spec = AntiPlaneSpec::gaussian_blob(1.0, 1.0, Velocity::Constant([1.0, 0.0]), 0.15, [0.4, 0.5]).unwrap();
        (spec, DislocGrid::new(6, 5, 4, 0.2).unwrap())
    }

    #[test]
    fn zero_dual_gives_zero_p() {
        let (spec, grid) = small();
        let prob = DislocProblem::new(spec, grid, QuadraticM::default(), 0.0).unwrap();
        assert!(prob.assemble_p(&prob.initial_dual()).unwrap().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn lambda_equal_time_gives_minus_rho() {
        let (mut spec, grid) = small();
        spec.rho_m = 2.5;
        let prob = DislocProblem::new(spec, grid, QuadraticM::default(), 0.0).unwrap();
        let mut d = DVector::zeros(prob.num_dofs());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                for k in 0..grid.nt {
                    d[grid.node(i, j, k)] = grid.t(k);
                }
            }
        }
        let dual = DislocDualFields { values: d, free: vec![true; prob.num_dofs()], num_nodes: grid.num_nodes() };
        for p in prob.assemble_p(&dual).unwrap() {
            assert_relative_eq!(p[0], -2.5, epsilon = 1e-12);
            assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
            assert_relative_eq!(p[2], 0.0, epsilon = 1e-12);
            assert_relative_eq!(p[3], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn legendre_map_examples() {
        let m = QuadraticM::default();
        assert_eq!(legendre_map(&m, &[0.0; 4], [0.1, 0.2, 0.0]), ([0.0; 4], 0.0));
        let m = QuadraticM::new(2.0, 1.0, 1.0).unwrap();
        let (q, ms) = legendre_map(&m, &[4.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(q[0], 2.0);
        assert_eq!(ms, 4.0);
        assert!(QuadraticM::new(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn blob_is_curl_consistent() {
        let (spec, grid) = small();
        assert!(spec.validate(&grid, 1e-6).is_ok());
        let mut bad = spec.clone();
        bad.alpha0 = plane_field(|_, _| 1.0);
        assert!(bad.validate(&grid, 1e-6).is_err());
        bad = spec;
        bad.mu = 0.0;
        assert!(bad.validate(&grid, 1e-6).is_err());
    }

    #[test]
    fn burgers_content_examples() {
        let grid = DislocGrid::new(5, 7, 3, 1.0).unwrap();
        assert!(burgers_content(&vec![0.0; grid.num_nodes()], &grid).iter().all(|c| *c == 0.0));
        for c in burgers_content(&vec![1.0; grid.num_nodes()], &grid) {
            assert_relative_eq!(c, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn oracle_with_zero_velocity_is_static() {
        let grid = DislocGrid::new(9, 9, 4, 0.3).unwrap();
        let a0 = plane_field(|x, y| x * y);
        let a = alpha_transport_oracle(&a0, &Velocity::Constant([0.0, 0.0]), &grid, &AlphaOracleConfig::default()).unwrap();
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                for k in 1..grid.nt {
                    assert_eq!(a[grid.node(i, j, k)], a[grid.node(i, j, 0)]);
                }
            }
        }
    }

    #[test]
    fn oracle_rejects_large_courant_number() {
        let grid = DislocGrid::new(9, 9, 3, 1.0).unwrap();
        let cfg = AlphaOracleConfig { refine: 4, substeps: Some(1) };
        let r = alpha_transport_oracle(&plane_field(|_, _| 1.0), &Velocity::Constant([1.0, 0.0]), &grid, &cfg);
        assert!(matches!(r, Err(DualError::Cfl { .. })));
    }

    #[test]
    fn oracle_constant_state_in_interior() {
        let grid = DislocGrid::new(11, 11, 3, 0.1).unwrap();
        let a = alpha_transport_oracle(
            &plane_field(|_, _| 1.0),
            &Velocity::Constant([1.0, 0.0]),
            &grid,
            &AlphaOracleConfig::default(),
        )
        .unwrap();
        // The inflow front has moved at most 0.1 + numerical spread from x = 0.
        for i in 4..grid.nx - 1 {
            for j in 1..grid.ny - 1 {
                assert_relative_eq!(a[grid.node(i, j, 2)], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn standing_wave_exact_satisfies_equations() {
        let (mu, rho) = (1.3, 0.7);
        let h = 1e-5;
        let f = |x, y, t| standing_wave_exact(mu, rho, x, y, t);
        let (x, y, t) = (0.31, 0.62, 0.17);
        let d = |c: usize, a: usize| {
            let mut p = [x, y, t];
            let mut m = [x, y, t];
            p[a] += h;
            m[a] -= h;
            (f(p[0], p[1], p[2])[c] - f(m[0], m[1], m[2])[c]) / (2.0 * h)
        };
        assert!((rho * d(0, 2) - mu * (d(1, 0) + d(2, 1))).abs() < 1e-6);
        assert!((d(1, 2) - d(0, 0)).abs() < 1e-6);
        assert!((d(2, 2) - d(0, 1)).abs() < 1e-6);
        assert!((d(2, 0) - d(1, 1)).abs() < 1e-6);
    }
}
