//! Pointwise dual Lagrangian of nonlinear dislocation mechanics and the
//! inversion `U_H(𝒟)` of its stationarity conditions.
//!
//! With `U = (W, ρ, v, α)` and dual data
//! `𝒟 = (∂_tA, ∇A, A, ∂_tθ, ∇θ, ∂_tλ, ∇λ, ∇B, B)`,
//!
//! ```text
//! ℒ_H = − W_ij ∂_tA_ij − W_ik v_k ∂_jA_ij − A_ij v_k e_rkj α_ir − A_ij e_jrs α_ir V_s
//!       − ρ ∂_tθ − ρ v_k ∂_kθ
//!       − ρ v_i ∂_tλ_i − ρ v_i v_j ∂_jλ_i − ρ W_ki ψ'_kj ∂_jλ_i
//!       − e_jrs W_is ∂_rB_ij + B_ij α_ij
//!       + H(W, ρ, v, α)
//! ```
//!
//! Index conventions: `grad_a[i][j][k] = ∂_k A_ij`, `grad_b[i][j][r] = ∂_r B_ij`,
//! `grad_lambda[i][j] = ∂_j λ_i`.

use nalgebra::{DMatrix, DVector};

use crate::{DualError, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Tensor3 = [[[f64; 3]; 3]; 3];
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Levi-Civita symbol.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Values of the dual fields and their derivatives at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualDerivativeData {
    pub dt_a: Mat3,
    pub grad_a: Tensor3,
    pub a: Mat3,
    pub dt_theta: f64,
    pub grad_theta: [f64; 3],
    pub dt_lambda: [f64; 3],
    pub grad_lambda: Mat3,
    pub grad_b: Tensor3,
    pub b: Mat3,
}

pub const DATA_LEN: usize = 9 + 27 + 9 + 1 + 3 + 3 + 9 + 27 + 9;

impl DualDerivativeData {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(DATA_LEN);
        v.extend(self.dt_a.iter().flatten());
        v.extend(self.grad_a.iter().flatten().flatten());
        v.extend(self.a.iter().flatten());
        v.push(self.dt_theta);
        v.extend(self.grad_theta);
        v.extend(self.dt_lambda);
        v.extend(self.grad_lambda.iter().flatten());
        v.extend(self.grad_b.iter().flatten().flatten());
        v.extend(self.b.iter().flatten());
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != DATA_LEN {
            return Err(DualError::Dimension { context: "dual derivative data", expected: DATA_LEN, got: v.len() });
        }
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("length checked");
        let mut d = Self::default();
        d.dt_a = std::array::from_fn(|_| std::array::from_fn(|_| next()));
        d.grad_a = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| next())));
        d.a = std::array::from_fn(|_| std::array::from_fn(|_| next()));
        d.dt_theta = next();
        d.grad_theta = std::array::from_fn(|_| next());
        d.dt_lambda = std::array::from_fn(|_| next());
        d.grad_lambda = std::array::from_fn(|_| std::array::from_fn(|_| next()));
        d.grad_b = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| next())));
        d.b = std::array::from_fn(|_| std::array::from_fn(|_| next()));
        Ok(d)
    }

    /// Every entry drawn uniformly from `[−cap, cap]`.
    pub fn random(rng: &mut impl rand::Rng, cap: f64) -> Self {
        let v: Vec<f64> = (0..DATA_LEN).map(|_| rng.gen_range(-cap..=cap)).collect();
        Self::from_flat(&v).expect("length matches")
    }

    /// `a·self + b·other`, entrywise.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let v: Vec<f64> = self.to_flat().iter().zip(other.to_flat()).map(|(x, y)| a * x + b * y).collect();
        Self::from_flat(&v).expect("length matches")
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn validate(&self, cap: f64) -> Result<()> {
        let flat = self.to_flat();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(DualError::NonFinite("dual derivative data"));
        }
        let m = self.max_abs();
        if m > cap {
            return Err(DualError::invalid("data", format!("entry of magnitude {m:.3e} exceeds the cap {cap:.3e}")));
        }
        Ok(())
    }
}

/// `(W, ρ, v, α)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalPointState {
    pub w: Mat3,
    pub rho: f64,
    pub v: [f64; 3],
    pub alpha: Mat3,
}

pub const STATE_LEN: usize = 22;

impl PrimalPointState {
    /// Stress-free state `(I, ρ̄, 0, 0)`.
    pub fn base(rho_bar: f64) -> Self {
        Self { w: IDENTITY, rho: rho_bar, v: [0.0; 3], alpha: [[0.0; 3]; 3] }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(STATE_LEN);
        v.extend(self.w.iter().flatten());
        v.push(self.rho);
        v.extend(self.v);
        v.extend(self.alpha.iter().flatten());
        DVector::from_vec(v)
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_LEN {
            return Err(DualError::Dimension { context: "primal point state", expected: STATE_LEN, got: v.len() });
        }
        Ok(Self {
            w: std::array::from_fn(|i| std::array::from_fn(|j| v[3 * i + j])),
            rho: v[9],
            v: [v[10], v[11], v[12]],
            alpha: std::array::from_fn(|i| std::array::from_fn(|j| v[13 + 3 * i + j])),
        })
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// Stored energy `ψ(W)` with its first and second derivatives.
pub trait Energy: Send + Sync {
    fn value(&self, w: &Mat3) -> f64;
    /// `ψ'_ij = ∂ψ/∂W_ij`.
    fn first(&self, w: &Mat3) -> Mat3;
    /// `ψ''_ijkl = ∂²ψ/∂W_ij∂W_kl`.
    fn second(&self, w: &Mat3) -> Tensor4;
}

/// `ψ = ½ |W − I|²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuadraticEnergy;

impl Energy for QuadraticEnergy {
    fn value(&self, w: &Mat3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += 0.5 * (w[i][j] - IDENTITY[i][j]).powi(2);
            }
        }
        s
    }
    fn first(&self, w: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| w[i][j] - IDENTITY[i][j]))
    }
    fn second(&self, _w: &Mat3) -> Tensor4 {
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                std::array::from_fn(|k| std::array::from_fn(|l| if i == k && j == l { 1.0 } else { 0.0 }))
            })
        })
    }
}

/// Dislocation velocity `V_s = V⁰_s + G^α_slp α_lp + G^W_slp (W − I)_lp + g^ρ_s (ρ − ρ̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineVelocity {
    pub v0: [f64; 3],
    pub d_alpha: Tensor3,
    pub d_w: Tensor3,
    pub d_rho: [f64; 3],
    pub rho_ref: f64,
}

impl AffineVelocity {
    pub fn constant(v0: [f64; 3]) -> Self {
        Self { v0, ..Default::default() }
    }

    pub fn value(&self, u: &PrimalPointState) -> [f64; 3] {
        std::array::from_fn(|s| {
            let mut v = self.v0[s] + self.d_rho[s] * (u.rho - self.rho_ref);
            for l in 0..3 {
                for p in 0..3 {
                    v += self.d_alpha[s][l][p] * u.alpha[l][p] + self.d_w[s][l][p] * (u.w[l][p] - IDENTITY[l][p]);
                }
            }
            v
        })
    }
}

/// `H = ½ α_W |W − I|² + ½ α_ρ (ρ − ρ̄)² + ½ α_v |v|² + ½ α_α |α|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticH {
    pub alpha_w: f64,
    pub alpha_rho: f64,
    pub alpha_v: f64,
    pub alpha_alpha: f64,
    pub rho_bar: f64,
}

impl QuadraticH {
    pub fn uniform(coef: f64, rho_bar: f64) -> Self {
        Self { alpha_w: coef, alpha_rho: coef, alpha_v: coef, alpha_alpha: coef, rho_bar }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("alpha_W", self.alpha_w),
            ("alpha_rho", self.alpha_rho),
            ("alpha_v", self.alpha_v),
            ("alpha_alpha", self.alpha_alpha),
            ("rho_bar", self.rho_bar),
        ] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DualError::invalid(name, format!("must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, u: &PrimalPointState) -> f64 {
        let mut w2 = 0.0;
        let mut a2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                w2 += (u.w[i][j] - IDENTITY[i][j]).powi(2);
                a2 += u.alpha[i][j].powi(2);
            }
        }
        let v2: f64 = u.v.iter().map(|x| x * x).sum();
        0.5 * (self.alpha_w * w2 + self.alpha_rho * (u.rho - self.rho_bar).powi(2) + self.alpha_v * v2 + self.alpha_alpha * a2)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.alpha_w.max(self.alpha_rho).max(self.alpha_v).max(self.alpha_alpha)
    }
}

/// Material description at a point.
pub struct MaterialPoint {
    pub energy: Box<dyn Energy>,
    pub velocity: AffineVelocity,
    pub h: QuadraticH,
}

impl std::fmt::Debug for MaterialPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MaterialPoint").field("velocity", &self.velocity).field("h", &self.h).finish_non_exhaustive()
    }
}

impl MaterialPoint {
    /// Quadratic energy, constant velocity and uniform `H`.
    pub fn quadratic(coef: f64, rho_bar: f64, v0: [f64; 3]) -> Self {
        Self {
            energy: Box::new(QuadraticEnergy),
            velocity: AffineVelocity { rho_ref: rho_bar, ..AffineVelocity::constant(v0) },
            h: QuadraticH::uniform(coef, rho_bar),
        }
    }

    pub fn base_state(&self) -> PrimalPointState {
        PrimalPointState::base(self.h.rho_bar)
    }
}

/// `ℒ_H(𝒟, U)`.
pub fn lagrangian_density(d: &DualDerivativeData, u: &PrimalPointState, mat: &MaterialPoint) -> f64 {
    let (w, rho, v, al) = (&u.w, u.rho, &u.v, &u.alpha);
    let vel = mat.velocity.value(u);
    let psi1 = mat.energy.first(w);
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s -= w[i][j] * d.dt_a[i][j];
            for k in 0..3 {
                s -= w[i][k] * v[k] * d.grad_a[i][j][j];
                for r in 0..3 {
                    s -= d.a[i][j] * v[k] * levi_civita(r, k, j) * al[i][r];
                    // Here k plays the role of s in e_jrs α_ir V_s.
                    s -= d.a[i][j] * levi_civita(j, r, k) * al[i][r] * vel[k];
                }
            }
        }
    }
    s -= rho * d.dt_theta;
    for k in 0..3 {
        s -= rho * v[k] * d.grad_theta[k];
    }
    for i in 0..3 {
        s -= rho * v[i] * d.dt_lambda[i];
        for j in 0..3 {
            s -= rho * v[i] * v[j] * d.grad_lambda[i][j];
            for k in 0..3 {
                s -= rho * w[k][i] * psi1[k][j] * d.grad_lambda[i][j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            s += d.b[i][j] * al[i][j];
            for r in 0..3 {
                for q in 0..3 {
                    s -= levi_civita(j, r, q) * w[i][q] * d.grad_b[i][j][r];
                }
            }
        }
    }
    s + mat.h.value(u)
}

/// `∂ℒ_H/∂U` in the order `(W, ρ, v, α)`.
pub fn invert_residual(d: &DualDerivativeData, u: &PrimalPointState, mat: &MaterialPoint) -> DVector<f64> {
    let (w, rho, v, al) = (&u.w, u.rho, &u.v, &u.alpha);
    let vel = mat.velocity.value(u);
    let psi1 = mat.energy.first(w);
    let psi2 = mat.energy.second(w);
    let h = &mat.h;
    let dv = &mat.velocity;

    // A_ij e_jrs α_ir, contracted against ∂V_s/∂(·).
    let mut aea = [0.0; 3];
    for (s, out) in aea.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                for r in 0..3 {
                    *out += d.a[i][j] * levi_civita(j, r, s) * al[i][r];
                }
            }
        }
    }
    let div_a: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| d.grad_a[i][j][j]).sum());
    let mut out = vec![0.0; STATE_LEN];

    for l in 0..3 {
        for p in 0..3 {
            let mut r = -d.dt_a[l][p] - v[p] * div_a[l];
            for s in 0..3 {
                r -= aea[s] * dv.d_w[s][l][p];
            }
            for j in 0..3 {
                for rr in 0..3 {
                    r -= levi_civita(j, rr, p) * d.grad_b[l][j][rr];
                }
            }
            let mut lam = 0.0;
            for j in 0..3 {
                lam += psi1[l][j] * d.grad_lambda[p][j];
                for k in 0..3 {
                    for i in 0..3 {
                        lam += w[k][i] * psi2[k][j][l][p] * d.grad_lambda[i][j];
                    }
                }
            }
            r -= rho * lam;
            r += h.alpha_w * (w[l][p] - IDENTITY[l][p]);
            out[3 * l + p] = r;
        }
    }

    let mut r = -d.dt_theta;
    for s in 0..3 {
        r -= aea[s] * dv.d_rho[s];
    }
    for k in 0..3 {
        r -= v[k] * d.grad_theta[k];
    }
    for i in 0..3 {
        r -= v[i] * d.dt_lambda[i];
        for j in 0..3 {
            r -= v[i] * v[j] * d.grad_lambda[i][j];
            for k in 0..3 {
                r -= w[k][i] * psi1[k][j] * d.grad_lambda[i][j];
            }
        }
    }
    r += h.alpha_rho * (rho - h.rho_bar);
    out[9] = r;

    for p in 0..3 {
        let mut r = -rho * d.grad_theta[p] - rho * d.dt_lambda[p];
        for i in 0..3 {
            r -= w[i][p] * div_a[i];
            r -= rho * v[i] * d.grad_lambda[i][p];
            for j in 0..3 {
                for rr in 0..3 {
                    r -= d.a[i][j] * levi_civita(rr, p, j) * al[i][rr];
                }
            }
        }
        for j in 0..3 {
            r -= rho * v[j] * d.grad_lambda[p][j];
        }
        r += h.alpha_v * v[p];
        out[10 + p] = r;
    }

    for l in 0..3 {
        for p in 0..3 {
            let mut r = d.b[l][p];
            for j in 0..3 {
                for k in 0..3 {
                    r -= d.a[l][j] * v[k] * levi_civita(p, k, j);
                    r -= d.a[l][j] * levi_civita(j, p, k) * vel[k];
                }
            }
            for s in 0..3 {
                r -= aea[s] * dv.d_alpha[s][l][p];
            }
            r += h.alpha_alpha * al[l][p];
            out[13 + 3 * l + p] = r;
        }
    }
    DVector::from_vec(out)
}

/// Settings for [`solve_pointwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSolveConfig {
    /// Target max-norm of the inversion residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step of the finite-difference Jacobian.
    pub fd_step: f64,
    /// Bound on the data entries assumed when checking the coefficients.
    pub data_cap: f64,
}

impl Default for PointSolveConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, fd_step: 1e-6, data_cap: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSolve {
    pub state: PrimalPointState,
    /// Max-norm of the final residual.
    pub residual: f64,
    pub iterations: usize,
}

/// Symmetrized central-difference Jacobian of the residual.
fn residual_jacobian(d: &DualDerivativeData, u: &DVector<f64>, mat: &MaterialPoint, step: f64) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(STATE_LEN, STATE_LEN);
    for c in 0..STATE_LEN {
        let h = step * u[c].abs().max(1.0);
        let mut up = u.clone();
        let mut dn = u.clone();
        up[c] += h;
        dn[c] -= h;
        let rp = invert_residual(d, &PrimalPointState::from_slice(up.as_slice())?, mat);
        let rm = invert_residual(d, &PrimalPointState::from_slice(dn.as_slice())?, mat);
        jac.set_column(c, &((rp - rm) / (2.0 * h)));
    }
    Ok(0.5 * (&jac + jac.transpose()))
}

/// Solve `∂ℒ_H/∂U (𝒟, U) = 0` for `U` by damped Newton from `guess`.
pub fn solve_pointwise(
    d: &DualDerivativeData,
    mat: &MaterialPoint,
    guess: &PrimalPointState,
    cfg: &PointSolveConfig,
) -> Result<PointSolve> {
    mat.h.validate()?;
    d.validate(f64::INFINITY)?;
    if mat.h.max_coefficient() < 10.0 * cfg.data_cap {
        log::warn!(
            "largest H coefficient {:.3e} is below 10× the data cap {:.3e}; the inversion may not be solvable",
            mat.h.max_coefficient(),
            cfg.data_cap
        );
    }
    let mut u = guess.to_vector();
    let res = |u: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(invert_residual(d, &PrimalPointState::from_slice(u.as_slice())?, mat))
    };
    let mut r = res(&u)?;
    let mut rn = r.amax();
    let mut iterations = 0;
    while rn > cfg.tol && iterations < cfg.max_iter {
        let jac = residual_jacobian(d, &u, mat, cfg.fd_step)?;
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or(DualError::InnerDivergence { residual: rn, iterations })?;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let trial = &u + t * &step;
            if trial[9] > 0.0 {
                let rt = res(&trial)?;
                if rt.amax() < rn || rt.amax() <= cfg.tol {
                    u = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        rn = r.amax();
        log::debug!("pointwise: iter {iterations} residual {rn:.3e}");
    }
    if !(rn <= cfg.tol) {
        log::warn!("pointwise inversion stalled at residual {rn:.3e}; increase the H coefficients");
        return Err(DualError::InnerDivergence { residual: rn, iterations });
    }
    Ok(PointSolve { state: PrimalPointState::from_slice(u.as_slice())?, residual: rn, iterations })
}

/// Distance of `U_H(𝒟)` from the base state for each uniform coefficient.
pub fn coefficient_sweep(
    d: &DualDerivativeData,
    make: impl Fn(f64) -> MaterialPoint,
    coefficients: &[f64],
    cfg: &PointSolveConfig,
) -> Result<Vec<f64>> {
    coefficients
        .iter()
        .map(|&c| {
            let mat = make(c);
            let base = mat.base_state();
            let sol = solve_pointwise(d, &mat, &base, cfg)?;
            Ok(sol.state.distance(&base))
        })
        .collect()
}

/// True when every entry is strictly smaller than the one before.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = DualDerivativeData::random(&mut rng, 1.0);
        assert_eq!(DualDerivativeData::from_flat(&d.to_flat()).unwrap(), d);
        let u = PrimalPointState::from_slice(&(0..22).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!(PrimalPointState::from_slice(u.to_vector().as_slice()).unwrap(), u);
    }

    #[test]
    fn zero_data_at_base() {
        let mat = MaterialPoint::quadratic(1e3, 2.0, [0.1, 0.2, 0.3]);
        let d = DualDerivativeData::default();
        let base = mat.base_state();
        assert_eq!(lagrangian_density(&d, &base, &mat), 0.0);
        assert_eq!(invert_residual(&d, &base, &mat).amax(), 0.0);
        let sol = solve_pointwise(&d, &mat, &base, &PointSolveConfig::default()).unwrap();
        assert_eq!(sol.state, base);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn decoupled_linear_blocks_in_one_step() {
        let mut mat = MaterialPoint::quadratic(1e3, 1.5, [0.3, -0.2, 0.1]);
        mat.h.alpha_w = 2e3;
        mat.h.alpha_rho = 5e3;
        mat.h.alpha_alpha = 4e3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = DualDerivativeData::random(&mut rng, 1.0);
        let d = DualDerivativeData { dt_a: r.dt_a, dt_theta: r.dt_theta, b: r.b, ..Default::default() };
        let sol = solve_pointwise(&d, &mat, &mat.base_state(), &PointSolveConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        for i in 0..3 {
            for j in 0..3 {
                assert!((sol.state.w[i][j] - IDENTITY[i][j] - d.dt_a[i][j] / 2e3).abs() < 1e-13);
                assert!((sol.state.alpha[i][j] + d.b[i][j] / 4e3).abs() < 1e-13);
            }
            assert!(sol.state.v[i].abs() < 1e-13);
        }
        assert!((sol.state.rho - 1.5 - d.dt_theta / 5e3).abs() < 1e-13);
    }

    #[test]
    fn levi_civita_is_antisymmetric() {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(levi_civita(i, j, k), -levi_civita(j, i, k));
                    assert_eq!(levi_civita(i, j, k), levi_civita(j, k, i));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        let mut mat = MaterialPoint::quadratic(1e3, 1.0, [0.0; 3]);
        mat.h.alpha_v = -1.0;
        let d = DualDerivativeData::default();
        assert!(solve_pointwise(&d, &mat, &mat.base_state(), &PointSolveConfig::default()).is_err());
        assert!(DualDerivativeData { dt_theta: 2.0, ..Default::default() }.validate(1.0).is_err());
    }
}
