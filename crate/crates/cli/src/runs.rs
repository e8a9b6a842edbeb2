//! One driver per problem family.

use std::f64::consts::PI;

use dualact::algdual::{
    h_invariance_check, least_squares_compare, minnorm_oracle, solve_dual, AlgDualConfig, CircleLine, LinearSystem,
    ResidualSystem, ShiftedQuadratic,
};
use dualact::dislocdual::{
    alpha_transport_oracle, burgers_content, content_drift, default_disloc_newton, plane_field, solve_disloc_dual,
    AlphaOracleConfig, AntiPlaneSpec, DislocGrid, QuadraticM, Velocity, PRIMAL_NAMES,
};
use dualact::fdmpoint::{coefficient_sweep, solve_pointwise, strictly_decreasing, DualDerivativeData, MaterialPoint, PointSolveConfig};
use dualact::ibvpdual::{
    burgers_spec, heat_reference, heat_spec, manufactured_exact, manufactured_spec, primal_residual, profile, rms_difference,
    transport_reference, transport_spec, IbvpProblem, IbvpSolverConfig, Profile, SpaceTimeGrid, SpacetimePotential,
};
use dualact::optcore::NewtonConfig;
use dualact::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    AlgebraicConfig, AlgebraicProblem, Alpha0Kind, DislocConfig, FdmpointConfig, IbvpConfig, IbvpProblemKind, InitialShape,
    RunConfig, VelocityKind,
};
use crate::output::{ConvergenceLog, FieldTable, RunSummary};

fn rms(a: &[f64], b: &[f64]) -> f64 {
    rms_difference(a, b)
}

/// Random `N × n` matrix with entries in `(−1, 1)`.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// A random linear system; inconsistent ones get a right-hand side component
/// of norm `perturbation` orthogonal to the column space.
pub fn random_linear_system(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    consistent: bool,
    perturbation: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let a = random_matrix(rng, rows, cols);
    let x = DVector::from_fn(cols, |_, _| rng.gen_range(-1.0..1.0));
    let mut b = &a * x;
    if !consistent {
        let r = DVector::from_fn(rows, |_, _| rng.gen_range(-1.0..1.0));
        let svd = a.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-12).count();
        let mut orth = r.clone();
        for k in 0..rank {
            let col = u.column(k);
            orth -= col * col.dot(&r);
        }
        b += orth.normalize() * perturbation;
    }
    (a, b)
}

fn algebraic_config(newton: NewtonConfig) -> AlgDualConfig {
    AlgDualConfig { newton, ..AlgDualConfig::default() }
}

pub fn run_algebraic(cfg: &RunConfig, summary: &mut RunSummary, log: &mut ConvergenceLog) -> Result<()> {
    let a: &AlgebraicConfig = &cfg.algebraic;
    let solver = algebraic_config(cfg.solver.apply(NewtonConfig::default()));
    match a.problem {
        AlgebraicProblem::Linear => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (m, b) = random_linear_system(&mut rng, a.equations, a.unknowns, a.consistent, a.perturbation);
            let sys = LinearSystem::new(m.clone(), b.clone())?;
            let h = ShiftedQuadratic::uniform(DVector::zeros(a.unknowns), a.c)?;
            let sol = solve_dual(&sys, &h, &DVector::zeros(a.equations), &solver)?;
            log.extend_trace("dual", &sol.critical.trace);
            summary.converged = sol.converged;
            summary.iterations = sol.critical.iterations;
            summary.grad_norm = sol.critical.grad_norm;
            summary.residuals.insert("primal".into(), sol.primal_residual);
            summary.metric("min_primal_residual", sol.min_primal_residual);
            if a.consistent {
                let oracle = minnorm_oracle(&m, &b)?;
                summary.metric("min_norm_gap", (&sol.x - oracle).norm());
            } else {
                let ls = least_squares_compare(&m, &b, a.c, &solver)?;
                summary.metric("ls_residual", (&m * &ls.x_ls - &b).norm());
                summary.metric("ls_norm", ls.x_ls.norm());
                summary.metric("row_space_residual", ls.row_space_residual);
                summary.notes.push("right-hand side lies outside the column space".into());
            }
        }
        AlgebraicProblem::CircleLine => {
            let base = DVector::from_column_slice(&a.base);
            let h1 = ShiftedQuadratic::uniform(base.clone(), a.c)?;
            let h2 = ShiftedQuadratic::uniform(base, a.c_alt)?;
            let z0 = DVector::zeros(2);
            let sol = solve_dual(&CircleLine, &h1, &z0, &solver)?;
            log.extend_trace("c", &sol.critical.trace);
            let report = h_invariance_check(&CircleLine, &h1, &h2, &z0, &solver);
            summary.converged = sol.converged && report.pass;
            summary.iterations = sol.critical.iterations;
            summary.grad_norm = sol.critical.grad_norm;
            summary.residuals.insert("primal".into(), CircleLine.residual(&sol.x).norm());
            summary.metric("root", sol.x.iter().copied().collect::<Vec<_>>());
            if let Some(d) = report.difference {
                summary.metric("h_gap", d);
            }
            if let Some(n) = report.note {
                summary.notes.push(n);
            }
        }
    }
    Ok(())
}

pub fn initial_profile(i: &IbvpConfig) -> Profile {
    let (amp, lo, len) = (i.ic_amplitude, i.x_min, i.x_max - i.x_min);
    let (c, w) = (i.ic_center, i.ic_width);
    match i.ic {
        InitialShape::Sine => profile(move |x| amp * (PI * (x - lo) / len).sin()),
        InitialShape::Gaussian => profile(move |x| amp * (-((x - c) / w).powi(2)).exp()),
    }
}

pub fn run_ibvp(cfg: &RunConfig, summary: &mut RunSummary, log: &mut ConvergenceLog) -> Result<FieldTable> {
    let i = &cfg.ibvp;
    let grid = SpaceTimeGrid::new(i.nx, i.nt, i.x_min, i.x_max, i.t_final)?;
    let ic = initial_profile(i);
    let spec = match i.problem {
        IbvpProblemKind::Heat => heat_spec(i.kappa, ic.clone())?,
        IbvpProblemKind::Transport => transport_spec(i.c_adv, ic.clone(), None)?,
        IbvpProblemKind::Burgers => burgers_spec(i.kappa, i.strength, ic.clone(), &grid)?,
        IbvpProblemKind::Manufactured => manufactured_spec(i.kappa, &grid)?,
    };
    let pot = SpacetimePotential::uniform(i.c_u, i.c_b, i.c_c);
    let prob = IbvpProblem::new(spec.clone(), grid, &pot, 0.0)?;
    let solver = IbvpSolverConfig { newton: cfg.solver.apply(NewtonConfig::default()), dual_prescription: 0.0 };
    let sol = prob.solve(&solver)?;
    log.extend_trace("dual", &sol.critical.trace);
    summary.converged = sol.critical.converged;
    summary.iterations = sol.critical.iterations;
    summary.grad_norm = sol.critical.grad_norm;
    summary.metric("num_dofs", prob.num_dofs());
    for r in primal_residual(&sol.primal, &spec, &grid) {
        summary.residuals.insert(r.name.clone(), r.l2);
        summary.residuals.insert(format!("{}_max", r.name), r.max);
    }
    let u = sol.primal.u(0);
    match i.problem {
        IbvpProblemKind::Heat => {
            summary.errors.insert("u_l2".into(), rms(u, &heat_reference(&ic, i.kappa, &grid)));
        }
        IbvpProblemKind::Transport => {
            summary.errors.insert("u_l2".into(), rms(u, &transport_reference(&ic, None, i.c_adv, &grid)?));
        }
        IbvpProblemKind::Manufactured => {
            summary.errors.insert("u_l2".into(), rms(u, manufactured_exact(i.kappa, &grid).u(0)));
        }
        IbvpProblemKind::Burgers => summary.notes.push("no reference solution for Burgers".into()),
    }

    let names = sol.primal.names();
    let mut table = FieldTable { coords: vec!["t", "x"], rows: Vec::with_capacity(grid.num_nodes() * names.len()) };
    for k in 0..grid.nt {
        for ix in 0..grid.nx {
            let node = grid.node(ix, k);
            for (f, name) in names.iter().enumerate() {
                table.rows.push((vec![grid.t(k), grid.x(ix)], name.clone(), sol.primal.values[f][node]));
            }
        }
    }
    Ok(table)
}

pub fn disloc_spec(d: &DislocConfig) -> Result<AntiPlaneSpec> {
    let velocity = match d.velocity {
        VelocityKind::Constant => Velocity::Constant(d.v),
        VelocityKind::Vortex => Velocity::Vortex { center: d.vortex_center, omega: d.omega },
    };
    match d.alpha0 {
        Alpha0Kind::Gaussian => AntiPlaneSpec::gaussian_blob(d.mu, d.rho_m, velocity, d.sigma, d.center),
        Alpha0Kind::Zero => {
            let zero = plane_field(|_, _| 0.0);
            Ok(AntiPlaneSpec {
                mu: d.mu,
                rho_m: d.rho_m,
                velocity,
                v0: zero.clone(),
                u0: [zero.clone(), zero.clone()],
                alpha0: zero,
                boundary_velocity: None,
                boundary_distortion: None,
            })
        }
    }
}

pub fn run_disloc(cfg: &RunConfig, summary: &mut RunSummary, log: &mut ConvergenceLog) -> Result<FieldTable> {
    let d = &cfg.disloc;
    let spec = disloc_spec(d)?;
    let grid = DislocGrid::new(d.nx, d.ny, d.nt, d.t_final)?;
    let m = QuadraticM::new(d.m[0], d.m[1], d.m[2])?;
    let newton = cfg.solver.apply(default_disloc_newton());
    let (prob, sol) = solve_disloc_dual(spec.clone(), grid, m, &newton)?;
    log.extend_trace("dual", &sol.critical.trace);
    summary.converged = sol.critical.converged;
    summary.iterations = sol.critical.iterations;
    summary.grad_norm = sol.critical.grad_norm;
    summary.metric("num_dofs", prob.num_dofs());
    summary.residuals.insert("curl_defect".into(), sol.max_curl_defect(&prob)?);
    summary.metric("content_drift", content_drift(&burgers_content(sol.primal.alpha(), &grid)));
    if d.oracle {
        match alpha_transport_oracle(&spec.alpha0, &spec.velocity, &grid, &AlphaOracleConfig::default()) {
            Ok(oracle) => {
                summary.errors.insert("alpha_l2".into(), rms(sol.primal.alpha(), &oracle));
            }
            Err(e) => summary.notes.push(format!("alpha oracle unavailable: {e}")),
        }
    }

    let mut table = FieldTable { coords: vec!["t", "x", "y"], rows: Vec::with_capacity(grid.num_nodes() * 4) };
    for k in 0..grid.nt {
        for ix in 0..grid.nx {
            for jy in 0..grid.ny {
                let node = grid.node(ix, jy, k);
                for (f, name) in PRIMAL_NAMES.iter().enumerate() {
                    table.rows.push((vec![grid.t(k), grid.x(ix), grid.y(jy)], name.to_string(), sol.primal.values[f][node]));
                }
            }
        }
    }
    Ok(table)
}

/// Per-sample results of the pointwise inversion study.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmpointStudy {
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub sweeps: Vec<Vec<f64>>,
    pub failures: Vec<String>,
}

impl FdmpointStudy {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0_f64, |m, r| m.max(*r))
    }
    pub fn monotone_count(&self) -> usize {
        self.sweeps.iter().filter(|s| strictly_decreasing(s)).count()
    }
}

pub fn fdmpoint_study(f: &FdmpointConfig, seed: u64) -> FdmpointStudy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pcfg = PointSolveConfig { tol: f.tol, data_cap: f.cap, ..PointSolveConfig::default() };
    let make = |c: f64| MaterialPoint::quadratic(c, f.rho_bar, f.velocity);
    let mut study = FdmpointStudy { residuals: vec![], iterations: vec![], sweeps: vec![], failures: vec![] };
    for s in 0..f.n_samples {
        let d = DualDerivativeData::random(&mut rng, f.cap);
        let mat = make(f.coeffs[0]);
        match solve_pointwise(&d, &mat, &mat.base_state(), &pcfg) {
            Ok(p) => {
                study.residuals.push(p.residual);
                study.iterations.push(p.iterations);
            }
            Err(e) => study.failures.push(format!("sample {s}: {e}")),
        }
        match coefficient_sweep(&d, make, &f.coeffs, &pcfg) {
            Ok(sw) => study.sweeps.push(sw),
            Err(e) => study.failures.push(format!("sample {s} sweep: {e}")),
        }
    }
    study
}

pub fn run_fdmpoint(cfg: &RunConfig, summary: &mut RunSummary, log: &mut ConvergenceLog) {
    let f = &cfg.fdmpoint;
    let study = fdmpoint_study(f, cfg.seed);
    for (s, (r, it)) in study.residuals.iter().zip(&study.iterations).enumerate() {
        log.push(&format!("sample{s}"), *it, *r, 0.0);
    }
    let monotone = study.monotone_count();
    summary.converged = study.failures.is_empty() && monotone == f.n_samples && study.max_residual() <= f.tol;
    summary.iterations = study.iterations.iter().copied().max().unwrap_or(0);
    summary.grad_norm = study.max_residual();
    summary.residuals.insert("inversion_max".into(), study.max_residual());
    summary.metric("monotone_samples", monotone);
    summary.metric("n_samples", f.n_samples);
    let k = f.coeffs.len();
    let mean: Vec<f64> = (0..k)
        .map(|c| study.sweeps.iter().map(|s| s[c]).sum::<f64>() / study.sweeps.len().max(1) as f64)
        .collect();
    summary.metric("mean_distance", mean);
    summary.metric("coefficients", f.coeffs.clone());
    summary.notes.extend(study.failures);
}
