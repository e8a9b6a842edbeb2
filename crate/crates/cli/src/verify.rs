//! The invariant suite behind `dualact verify`.
//!
//! Checks are small and deterministic for a given seed. Each one reports a
//! measured value against a tolerance from the `[verify]` table.

use std::f64::consts::PI;

use dualact::algdual::{
    dual_value_grad, h_invariance_check, minnorm_oracle, solve_dual, AlgDualConfig, CircleLine, LinearSystem, ShiftedQuadratic,
};
use dualact::dislocdual::{
    burgers_content, content_drift, default_disloc_newton, legendre_map, solve_disloc_dual, AntiPlaneSpec, DislocDualFields,
    DislocGrid, DislocProblem, QuadraticM, Velocity,
};
use dualact::ibvpdual::{
    heat_reference, heat_spec, profile, rms_difference, transport_reference, transport_spec, DualFieldSet, IbvpProblem,
    IbvpSolverConfig, SpaceTimeGrid, SpacetimePotential,
};
use dualact::optcore::fd_gradient;
use dualact::spacetime::{for_each_gauss_point, PointConjugate};
use dualact::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{FdmpointConfig, VerifyConfig};
use crate::runs::{fdmpoint_study, random_linear_system};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    /// `"<="` for upper bounds, `">"` for quantities that must stay away from zero.
    pub relation: &'static str,
    pub pass: bool,
    pub note: Option<String>,
}

impl Check {
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, tol, relation: "<=", pass: value <= tol, note: None }
    }
    fn above(name: &str, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, tol, relation: ">", pass: value > tol, note: None }
    }
    fn failed(name: &str, tol: f64, err: impl std::fmt::Display) -> Self {
        Self { name: name.into(), value: f64::NAN, tol, relation: "<=", pass: false, note: Some(err.to_string()) }
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let mut s = format!("{status} {:<28} {:.3e} {} {:.3e}", self.name, self.value, self.relation, self.tol);
        if let Some(n) = &self.note {
            s.push_str(&format!(" ({n})"));
        }
        s
    }
}

fn check(name: &str, tol: f64, f: impl FnOnce() -> Result<f64>) -> Check {
    match f() {
        Ok(v) => Check::at_most(name, v, tol),
        Err(e) => Check::failed(name, tol, e),
    }
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1e-300)
}

fn small_ibvp() -> Result<[IbvpProblem; 2]> {
    let grid = SpaceTimeGrid::new(6, 5, 0.0, 1.0, 0.1)?;
    Ok([
        IbvpProblem::new(heat_spec(1.0, profile(|x| (PI * x).sin()))?, grid, &SpacetimePotential::default(), 0.0)?,
        IbvpProblem::new(
            transport_spec(1.0, profile(|x| (2.0 * PI * x).sin()), None)?,
            grid,
            &SpacetimePotential::uniform(2.0, 1.0, 1.0),
            0.0,
        )?,
    ])
}

fn small_disloc() -> Result<DislocProblem> {
    let spec = AntiPlaneSpec::gaussian_blob(1.3, 0.8, Velocity::Vortex { center: [0.5, 0.5], omega: 0.7 }, 0.2, [0.45, 0.5])?;
    DislocProblem::new(spec, DislocGrid::new(6, 5, 4, 0.2)?, QuadraticM::new(1.0, 2.0, 0.5)?, 0.0)
}

/// Run every check. Random inputs are drawn from `seed`.
pub fn run_checks(v: &VerifyConfig, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alg = AlgDualConfig::default();
    let mut out = Vec::new();

    out.push(check("algebraic.min_norm", v.algebraic_tol, || {
        let (a, b) = random_linear_system(&mut rng, 10, 20, true, 1.0);
        let sys = LinearSystem::new(a.clone(), b.clone())?;
        let h = ShiftedQuadratic::uniform(DVector::zeros(20), 1.0)?;
        let sol = solve_dual(&sys, &h, &DVector::zeros(10), &alg)?;
        Ok((sol.x - minnorm_oracle(&a, &b)?).norm())
    }));

    out.push(
        (|| -> Result<Check> {
            let (a, b) = random_linear_system(&mut rng, 20, 10, false, 1.0);
            let sys = LinearSystem::new(a, b)?;
            let h = ShiftedQuadratic::uniform(DVector::zeros(10), 1.0)?;
            let sol = solve_dual(&sys, &h, &DVector::zeros(20), &alg)?;
            let mut c = Check::above("algebraic.inconsistency", sol.min_primal_residual, v.algebraic_tol);
            c.pass &= !sol.converged;
            Ok(c)
        })()
        .unwrap_or_else(|e| Check::failed("algebraic.inconsistency", v.algebraic_tol, e)),
    );

    out.push(
        (|| -> Result<Check> {
            let base = DVector::from_column_slice(&[1.0, 0.5]);
            let h1 = ShiftedQuadratic::uniform(base.clone(), 1.0)?;
            let h2 = ShiftedQuadratic::uniform(base, 10.0)?;
            let r = h_invariance_check(&CircleLine, &h1, &h2, &DVector::zeros(2), &alg);
            Ok(match r.difference {
                Some(d) => Check::at_most("algebraic.h_invariance", d, v.algebraic_tol),
                None => Check::failed("algebraic.h_invariance", v.algebraic_tol, r.note.unwrap_or_default()),
            })
        })()
        .unwrap_or_else(|e| Check::failed("algebraic.h_invariance", v.algebraic_tol, e)),
    );

    out.push(check("algebraic.envelope", v.fd_rel_tol, || {
        let h = ShiftedQuadratic::uniform(DVector::from_column_slice(&[1.0, 0.0]), 4.0)?;
        let mut worst = 0.0_f64;
        for _ in 0..10 {
            let z = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let s = dual_value_grad(&CircleLine, &h, &z, &alg)?;
            let fd = fd_gradient(|z| Ok(dual_value_grad(&CircleLine, &h, z, &alg)?.value), &z, 1e-5)?;
            worst = worst.max(rel(&s.grad, &fd));
        }
        Ok(worst)
    }));

    match small_ibvp() {
        Ok(problems) => {
            for (prob, name) in problems.iter().zip(["heat", "transport"]) {
                out.push(check(&format!("ibvp.{name}.envelope"), v.fd_rel_tol, || {
                    let mut worst = 0.0_f64;
                    for _ in 0..3 {
                        let vals = DVector::from_fn(prob.num_dofs(), |_, _| rng.gen_range(-0.05..0.05));
                        let dual = prob.dual_from(&vals)?;
                        let g = prob.gradient(&dual)?;
                        let fd = fd_gradient(|x| prob.action(&DualFieldSet { values: x.clone(), ..dual.clone() }), &dual.values, 1e-5)?;
                        worst = worst.max(rel(&g, &fd));
                    }
                    Ok(worst)
                }));
            }
            out.push(check("ibvp.fenchel", v.fenchel_tol, || {
                let mut worst = 0.0_f64;
                for prob in &problems {
                    let conj = prob.conjugate();
                    for _ in 0..250 {
                        let p: Vec<f64> = (0..conj.p_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let l: Vec<f64> = (0..conj.l_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.1)];
                        let e = conj.conjugate(&p, &l, &x)?;
                        let (m, _) = conj.m_value(&e.u, &l, x[0], x[1]);
                        let up: f64 = e.u.iter().zip(&p).map(|(a, b)| a * b).sum();
                        worst = worst.max((e.value + m - up).abs() / up.abs().max(1.0));
                    }
                }
                Ok(worst)
            }));
        }
        Err(e) => out.push(Check::failed("ibvp.setup", 0.0, e)),
    }

    match small_disloc() {
        Ok(prob) => {
            out.push(check("disloc.envelope", v.fd_rel_tol, || {
                let vals = DVector::from_fn(prob.num_dofs(), |_, _| rng.gen_range(-1.0..1.0));
                let d = prob.dual_from(&vals)?;
                let g = prob.gradient(&d)?;
                let fd = fd_gradient(|x| prob.action(&DislocDualFields { values: x.clone(), ..d.clone() }), &d.values, 1e-5)?;
                Ok(rel(&g, &fd))
            }));
            out.push(check("disloc.pairing", v.fd_rel_tol, || {
                let grid = prob.grid;
                let nn = grid.num_nodes();
                let vals = DVector::from_fn(prob.num_dofs(), |_, _| rng.gen_range(-1.0..1.0));
                let dual = DislocDualFields { values: vals, free: vec![true; prob.num_dofs()], num_nodes: nn };
                let pts = prob.engine().point_fields(&dual.values)?;
                let mut weak_p = vec![0.0; 4 * nn];
                let mut q = 0;
                for_each_gauss_point(&grid.tensor(), |gp| {
                    for (&node, phi) in gp.nodes.iter().zip(&gp.phi) {
                        for c in 0..4 {
                            weak_p[c * nn + node] -= gp.weight * pts.p[q][c] * phi;
                        }
                    }
                    q += 1;
                });
                let u0 = DVector::from_fn(4 * nn, |_, _| rng.gen_range(-1.0..1.0));
                let fd = fd_gradient(
                    |x| {
                        let f = dualact::dislocdual::AntiPlaneFields {
                            values: std::array::from_fn(|c| x.as_slice()[c * nn..(c + 1) * nn].to_vec()),
                        };
                        Ok(prob.pairing(&dual, &f))
                    },
                    &u0,
                    1e-4,
                )?;
                Ok(rel(&DVector::from_vec(weak_p), &fd))
            }));
        }
        Err(e) => out.push(Check::failed("disloc.setup", 0.0, e)),
    }

    out.push(check("disloc.fenchel", v.fenchel_tol, || {
        let m = QuadraticM::new(2.0, 0.5, 0.01)?;
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.25)];
            let (q, ms) = legendre_map(&m, &p, x);
            let qp: f64 = q.iter().zip(&p).map(|(a, b)| a * b).sum();
            worst = worst.max((ms + m.value(&q, x) - qp).abs() / qp.abs().max(1.0));
        }
        Ok(worst)
    }));

    out.push(check("ibvp.heat.oracle", v.oracle_tol, || {
        let grid = SpaceTimeGrid::new(48, 48, 0.0, 1.0, 0.1)?;
        let ic = profile(|x| (PI * x).sin());
        let prob = IbvpProblem::new(heat_spec(1.0, ic.clone())?, grid, &SpacetimePotential::default(), 0.0)?;
        let sol = prob.solve(&IbvpSolverConfig::default())?;
        Ok(rms_difference(sol.primal.u(0), &heat_reference(&ic, 1.0, &grid)))
    }));

    out.push(check("ibvp.transport.oracle", v.oracle_tol, || {
        let grid = SpaceTimeGrid::new(48, 48, 0.0, 1.0, 0.25)?;
        let ic = profile(|x| (-((x - 0.3) / 0.08).powi(2)).exp());
        let prob = IbvpProblem::new(transport_spec(1.0, ic.clone(), None)?, grid, &SpacetimePotential::default(), 0.0)?;
        let sol = prob.solve(&IbvpSolverConfig::default())?;
        Ok(rms_difference(sol.primal.u(0), &transport_reference(&ic, None, 1.0, &grid)?))
    }));

    match (|| -> Result<(f64, f64)> {
        let spec = AntiPlaneSpec::gaussian_blob(1.0, 1.0, Velocity::Constant([1.0, 0.0]), 0.1, [0.4, 0.5])?;
        let grid = DislocGrid::new(17, 17, 9, 0.2)?;
        let (prob, sol) = solve_disloc_dual(spec, grid, QuadraticM::default(), &default_disloc_newton())?;
        Ok((sol.max_curl_defect(&prob)?, content_drift(&burgers_content(sol.primal.alpha(), &grid))))
    })() {
        Ok((curl, drift)) => {
            out.push(Check::at_most("disloc.curl", curl, v.curl_tol));
            out.push(Check::at_most("disloc.content_drift", drift, v.drift_tol));
        }
        Err(e) => {
            out.push(Check::failed("disloc.curl", v.curl_tol, &e));
            out.push(Check::failed("disloc.content_drift", v.drift_tol, &e));
        }
    }

    let study = fdmpoint_study(&FdmpointConfig { n_samples: 5, ..FdmpointConfig::default() }, rng.gen());
    let mut res = Check::at_most("fdmpoint.residual", study.max_residual(), v.residual_tol);
    if !study.failures.is_empty() {
        res.pass = false;
        res.note = Some(study.failures.join("; "));
    }
    out.push(res);
    let bad = (study.sweeps.len() - study.monotone_count()) as f64 + study.failures.len() as f64;
    out.push(Check::at_most("fdmpoint.monotone_failures", bad, 0.0));

    out
}
