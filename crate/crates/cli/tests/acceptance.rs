//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use dualact::algdual::*;
use dualact::dislocdual::*;
use dualact::ibvpdual::*;
use dualact::optcore::fd_gradient;
use dualact::spacetime::{for_each_gauss_point, PointConjugate};
use dualact_cli::config::FdmpointConfig;
use dualact_cli::runs::{fdmpoint_study, random_linear_system};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ok_if(pass: bool, detail: String) -> Verdict {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1e-300)
}

fn algebraic_consistent() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = AlgDualConfig::default();
    let (mut gap, mut res, mut all_converged) = (0.0_f64, 0.0_f64, true);
    for _ in 0..50 {
        let (a, b) = random_linear_system(&mut rng, 10, 20, true, 1.0);
        let sys = LinearSystem::new(a.clone(), b.clone()).map_err(err)?;
        let h = ShiftedQuadratic::uniform(DVector::zeros(20), 1.0).map_err(err)?;
        let sol = solve_dual(&sys, &h, &DVector::zeros(10), &cfg).map_err(err)?;
        all_converged &= sol.converged;
        gap = gap.max((&sol.x - minnorm_oracle(&a, &b).map_err(err)?).norm());
        res = res.max((&a * &sol.x - &b).norm());
    }
    let secs = t.elapsed().as_secs_f64();
    ok_if(
        all_converged && gap <= 1e-6 && res <= 1e-8 && secs < 5.0,
        format!("max gap {gap:.2e}, max residual {res:.2e}, {secs:.2}s"),
    )
}

fn algebraic_inconsistent() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = AlgDualConfig::default();
    let (mut flagged, mut ls_ok, mut worst_normal) = (0, 0, 0.0_f64);
    for _ in 0..20 {
        // More equations than unknowns, so a right-hand side can leave the column space.
        let (a, b) = random_linear_system(&mut rng, 20, 10, false, 1.0);
        let sys = LinearSystem::new(a.clone(), b.clone()).map_err(err)?;
        let h = ShiftedQuadratic::uniform(DVector::zeros(10), 1.0).map_err(err)?;
        let sol = solve_dual(&sys, &h, &DVector::zeros(20), &cfg).map_err(err)?;
        flagged += usize::from(!sol.converged);
        let ls = least_squares_compare(&a, &b, 1.0, &cfg).map_err(err)?;
        let normal = a.tr_mul(&(&a * &ls.x_ls - &b)).norm();
        worst_normal = worst_normal.max(normal);
        ls_ok += usize::from(normal <= 1e-8 && !ls.dual_converged);
    }
    let secs = t.elapsed().as_secs_f64();
    ok_if(
        flagged == 20 && ls_ok == 20 && secs < 5.0,
        format!("{flagged}/20 reported non-converged, {ls_ok}/20 least-squares solutions (normal eq. {worst_normal:.1e}), {secs:.2}s"),
    )
}

fn circle_line() -> Verdict {
    let cfg = AlgDualConfig::default();
    let base = DVector::from_column_slice(&[1.0, 0.5]);
    let h1 = ShiftedQuadratic::uniform(base.clone(), 1.0).map_err(err)?;
    let h2 = ShiftedQuadratic::uniform(base, 10.0).map_err(err)?;
    let z0 = DVector::zeros(2);
    let r = h_invariance_check(&CircleLine, &h1, &h2, &z0, &cfg);
    let (Some(x1), Some(x2), Some(gap)) = (&r.x1, &r.x2, r.difference) else {
        return Err(r.note.unwrap_or_default());
    };
    let res = CircleLine.residual(x1).norm().max(CircleLine.residual(x2).norm());
    ok_if(res <= 1e-8 && gap <= 1e-6, format!("root ({:.6}, {:.6}), |A| {res:.1e}, gap {gap:.1e}", x1[0], x1[1]))
}

fn envelope_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AlgDualConfig::default();
    let h = ShiftedQuadratic::uniform(DVector::from_column_slice(&[1.0, 0.0]), 4.0).map_err(err)?;
    let mut s_h = 0.0_f64;
    for _ in 0..10 {
        let z = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let s = dual_value_grad(&CircleLine, &h, &z, &cfg).map_err(err)?;
        let fd = fd_gradient(|z| Ok(dual_value_grad(&CircleLine, &h, z, &cfg)?.value), &z, 1e-5).map_err(err)?;
        s_h = s_h.max(rel(&s.grad, &fd));
    }

    let grid = SpaceTimeGrid::new(6, 5, 0.0, 1.0, 0.1).map_err(err)?;
    let problems = [
        IbvpProblem::new(heat_spec(1.0, profile(|x| (PI * x).sin())).map_err(err)?, grid, &SpacetimePotential::default(), 0.0),
        IbvpProblem::new(
            transport_spec(1.0, profile(|x| (2.0 * PI * x).sin()), None).map_err(err)?,
            grid,
            &SpacetimePotential::uniform(2.0, 1.0, 1.0),
            0.0,
        ),
    ];
    let mut action = 0.0_f64;
    let mut fenchel = 0.0_f64;
    for prob in problems {
        let prob = prob.map_err(err)?;
        for _ in 0..10 {
            let v = DVector::from_fn(prob.num_dofs(), |_, _| rng.gen_range(-0.05..0.05));
            let dual = prob.dual_from(&v).map_err(err)?;
            let g = prob.gradient(&dual).map_err(err)?;
            let fd = fd_gradient(|x| dual_action(&prob, &DualFieldSet { values: x.clone(), ..dual.clone() }), &dual.values, 1e-5)
                .map_err(err)?;
            action = action.max(rel(&g, &fd));
        }
        let conj = prob.conjugate();
        for _ in 0..1000 {
            let p: Vec<f64> = (0..conj.p_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l: Vec<f64> = (0..conj.l_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.1)];
            let e = conj.conjugate(&p, &l, &x).map_err(err)?;
            let (m, _) = conj.m_value(&e.u, &l, x[0], x[1]);
            let up: f64 = e.u.iter().zip(&p).map(|(a, b)| a * b).sum();
            fenchel = fenchel.max((e.value + m - up).abs() / up.abs().max(1.0));
        }
    }

    let spec = AntiPlaneSpec::gaussian_blob(1.3, 0.8, Velocity::Vortex { center: [0.5, 0.5], omega: 0.7 }, 0.2, [0.45, 0.5])
        .map_err(err)?;
    let m = QuadraticM::default();
    let prob = DislocProblem::new(spec, DislocGrid::new(6, 5, 4, 0.2).map_err(err)?, m.clone(), 0.0).map_err(err)?;
    let dgrid = prob.grid;
    let nn = dgrid.num_nodes();
    let dual = DislocDualFields {
        values: DVector::from_fn(prob.num_dofs(), |_, _| rng.gen_range(-1.0..1.0)),
        free: vec![true; prob.num_dofs()],
        num_nodes: nn,
    };
    let pts = prob.engine().point_fields(&dual.values).map_err(err)?;
    let mut weak_p = vec![0.0; 4 * nn];
    let mut q = 0;
    for_each_gauss_point(&dgrid.tensor(), |gp| {
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
            let f = AntiPlaneFields { values: std::array::from_fn(|c| x.as_slice()[c * nn..(c + 1) * nn].to_vec()) };
            Ok(prob.pairing(&dual, &f))
        },
        &u0,
        1e-4,
    )
    .map_err(err)?;
    let pairing = rel(&DVector::from_vec(weak_p), &fd);
    for _ in 0..1000 {
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.25)];
        let (q, ms) = legendre_map(&m, &p, x);
        let qp: f64 = q.iter().zip(&p).map(|(a, b)| a * b).sum();
        fenchel = fenchel.max((ms + m.value(&q, x) - qp).abs() / qp.abs().max(1.0));
    }
    ok_if(
        s_h <= 1e-6 && action <= 1e-6 && pairing <= 1e-6 && fenchel <= 1e-12,
        format!("S_H {s_h:.1e}, dual action {action:.1e}, pairing {pairing:.1e}, Fenchel {fenchel:.1e}"),
    )
}

fn refinement(name: &str, error: impl Fn(usize) -> Result<f64, String>) -> Verdict {
    let t = Instant::now();
    let e64 = error(64)?;
    let e128 = error(128)?;
    let order = (e64 / e128).log2();
    let secs = t.elapsed().as_secs_f64();
    ok_if(
        e64 <= 5e-2 && order >= 1.0 && secs < 60.0,
        format!("{name}: error {e64:.3e} (64) {e128:.3e} (128), order {order:.2}, {secs:.1}s"),
    )
}

fn heat_error(n: usize) -> Result<f64, String> {
    let grid = SpaceTimeGrid::new(n, n, 0.0, 1.0, 0.1).map_err(err)?;
    let ic = profile(|x| (PI * x).sin());
    let prob = IbvpProblem::new(heat_spec(1.0, ic.clone()).map_err(err)?, grid, &SpacetimePotential::default(), 0.0).map_err(err)?;
    let sol = solve_dual_ibvp(&prob, &IbvpSolverConfig::default()).map_err(err)?;
    if !sol.critical.converged {
        return Err(format!("dual solve stalled at {:.2e}", sol.critical.grad_norm));
    }
    Ok(rms_difference(sol.primal.u(0), &heat_reference(&ic, 1.0, &grid)))
}

fn transport_error(n: usize) -> Result<f64, String> {
    let grid = SpaceTimeGrid::new(n, n, 0.0, 1.0, 0.25).map_err(err)?;
    let ic = profile(|x| (-((x - 0.3) / 0.08).powi(2)).exp());
    let prob = IbvpProblem::new(transport_spec(1.0, ic.clone(), None).map_err(err)?, grid, &SpacetimePotential::default(), 0.0)
        .map_err(err)?;
    let sol = solve_dual_ibvp(&prob, &IbvpSolverConfig::default()).map_err(err)?;
    if !sol.critical.converged {
        return Err(format!("dual solve stalled at {:.2e}", sol.critical.grad_norm));
    }
    Ok(rms_difference(sol.primal.u(0), &transport_reference(&ic, None, 1.0, &grid).map_err(err)?))
}

fn disloc_case() -> (AntiPlaneSpec, DislocGrid) {
    let spec = AntiPlaneSpec::gaussian_blob(1.0, 1.0, Velocity::Constant([1.0, 0.0]), 0.07, [0.3, 0.5]).unwrap();
    (spec, DislocGrid::new(32, 32, 16, 0.25).unwrap())
}

fn dislocation_reduction(prob: &DislocProblem, first: &DislocSolution, secs: f64) -> Verdict {
    let (spec, grid) = disloc_case();
    let oracle = alpha_transport_oracle(&spec.alpha0, &spec.velocity, &grid, &AlphaOracleConfig::default()).map_err(err)?;
    let e = rms_difference(first.primal.alpha(), &oracle);
    let drift = content_drift(&burgers_content(first.primal.alpha(), &grid));
    let curl = first.max_curl_defect(prob).map_err(err)?;
    ok_if(
        first.critical.converged && e <= 5e-2 && drift <= 1e-3 && curl <= 1e-6 && secs < 300.0,
        format!("alpha error {e:.3e}, content drift {drift:.1e}, curl defect {curl:.1e}, {secs:.1}s"),
    )
}

fn m_independence(first: &DislocSolution) -> Verdict {
    let (spec, grid) = disloc_case();
    let m = QuadraticM::new(10.0, 10.0, 0.01).map_err(err)?;
    let (_, second) = solve_disloc_dual(spec, grid, m, &default_disloc_newton()).map_err(err)?;
    let worst = (0..4)
        .map(|c| rms_difference(&first.primal.values[c], &second.primal.values[c]))
        .fold(0.0_f64, f64::max);
    // Twice the discretization tolerance of the reduction criterion.
    ok_if(second.critical.converged && worst <= 2.0 * 5e-2, format!("max field RMS difference {worst:.3e} (bound 1.0e-1)"))
}

fn pointwise_inversion() -> Verdict {
    let t = Instant::now();
    let study = fdmpoint_study(&FdmpointConfig::default(), 9);
    let secs = t.elapsed().as_secs_f64();
    let monotone = study.monotone_count();
    ok_if(
        study.failures.is_empty() && study.residuals.len() == 20 && study.max_residual() <= 1e-10 && monotone == 20 && secs < 10.0,
        format!("max residual {:.1e}, {monotone}/20 monotone sweeps, {secs:.2}s", study.max_residual()),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::TempDir::new().map_err(err)?;
    let mut reference: Option<Vec<String>> = None;
    for seed in 1..=5u64 {
        let cfg = dir.path().join(format!("seed{seed}.toml"));
        fs::write(&cfg, format!("seed = {seed}\n")).map_err(err)?;
        let mut summaries = Vec::new();
        for threads in ["1", "4"] {
            let out_dir = dir.path().join(format!("s{seed}t{threads}"));
            let out = Command::new(env!("CARGO_BIN_EXE_dualact"))
                .args(["verify", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out_dir)
                .env("DUALACT_THREADS", threads)
                .output()
                .map_err(err)?;
            let stdout = String::from_utf8_lossy(&out.stdout).to_string();
            if out.status.code() != Some(0) {
                return Err(format!("seed {seed}, {threads} threads failed:\n{stdout}"));
            }
            let passes: Vec<String> =
                stdout.lines().filter(|l| l.starts_with("PASS")).filter_map(|l| l.split_whitespace().nth(1)).map(String::from).collect();
            match &reference {
                None => reference = Some(passes),
                Some(r) if *r != passes => return Err(format!("pass set differs at seed {seed}, {threads} threads")),
                _ => {}
            }
            let text = fs::read_to_string(out_dir.join("summary.json")).map_err(err)?;
            summaries.push(text.lines().filter(|l| !l.contains("wall_time")).collect::<Vec<_>>().join("\n"));
        }
        if summaries[0] != summaries[1] {
            return Err(format!("seed {seed}: summary differs between thread settings"));
        }
    }
    let n = reference.map_or(0, |r| r.len());
    ok_if(n > 0, format!("{n} checks pass identically for 5 seeds x 2 thread settings"))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        match &v {
            Ok(d) => println!("criterion {id:>2} PASS {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {id:>2} FAIL {name}: {d}");
            }
        }
    };
    report(1, "algebraic duality", algebraic_consistent());
    report(2, "inconsistency detection", algebraic_inconsistent());
    report(3, "nonlinear algebraic", circle_line());
    report(4, "envelope and gradient identities", envelope_identities());
    report(5, "heat instance", refinement("heat", heat_error));
    report(6, "transport instance", refinement("transport", transport_error));

    let (spec, grid) = disloc_case();
    let t = Instant::now();
    match solve_disloc_dual(spec, grid, QuadraticM::default(), &default_disloc_newton()) {
        Ok((prob, sol)) => {
            let secs = t.elapsed().as_secs_f64();
            report(7, "dislocation reduction", dislocation_reduction(&prob, &sol, secs));
            report(8, "independence of M", m_independence(&sol));
        }
        Err(e) => {
            report(7, "dislocation reduction", Err(e.to_string()));
            report(8, "independence of M", Err("reference solve failed".into()));
        }
    }
    report(9, "pointwise nonlinear inversion", pointwise_inversion());
    report(10, "determinism", determinism());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
