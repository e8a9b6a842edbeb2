use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualact::fdmpoint::*;
use dualact::optcore::fd_gradient;

/// `ψ = ½|W − I|² + ¼ k |W − I|⁴`, so ψ'' is not the identity.
struct QuarticEnergy {
    k: f64,
}

impl Energy for QuarticEnergy {
    fn value(&self, w: &Mat3) -> f64 {
        let n2 = norm2(w);
        0.5 * n2 + 0.25 * self.k * n2 * n2
    }
    fn first(&self, w: &Mat3) -> Mat3 {
        let n2 = norm2(w);
        std::array::from_fn(|i| std::array::from_fn(|j| (1.0 + self.k * n2) * dev(w, i, j)))
    }
    fn second(&self, w: &Mat3) -> Tensor4 {
        let n2 = norm2(w);
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                std::array::from_fn(|k| {
                    std::array::from_fn(|l| {
                        let delta = if i == k && j == l { 1.0 } else { 0.0 };
                        (1.0 + self.k * n2) * delta + 2.0 * self.k * dev(w, i, j) * dev(w, k, l)
                    })
                })
            })
        })
    }
}

fn dev(w: &Mat3, i: usize, j: usize) -> f64 {
    w[i][j] - if i == j { 1.0 } else { 0.0 }
}

fn norm2(w: &Mat3) -> f64 {
    (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| dev(w, i, j).powi(2)).sum()
}

fn rich_material(rng: &mut ChaCha8Rng, coef: f64) -> MaterialPoint {
    let mut t3 = || -> Tensor3 { std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.5..0.5)))) };
    let (da, dw) = (t3(), t3());
    MaterialPoint {
        energy: Box::new(QuarticEnergy { k: 0.7 }),
        velocity: AffineVelocity { v0: [0.3, -0.1, 0.2], d_alpha: da, d_w: dw, d_rho: [0.2, 0.1, -0.3], rho_ref: 1.2 },
        h: QuadraticH { alpha_w: coef, alpha_rho: 2.0 * coef, alpha_v: 0.5 * coef, alpha_alpha: 3.0 * coef, rho_bar: 1.2 },
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> PrimalPointState {
    let mut s = PrimalPointState::base(1.2);
    for i in 0..3 {
        for j in 0..3 {
            s.w[i][j] += rng.gen_range(-0.3..0.3);
            s.alpha[i][j] = rng.gen_range(-0.3..0.3);
        }
        s.v[i] = rng.gen_range(-0.5..0.5);
    }
    s.rho += rng.gen_range(-0.3..0.3);
    s
}

fn m3(a: &Mat3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

/// Independent term-by-term evaluation with vector identities.
fn reference_density(d: &DualDerivativeData, u: &PrimalPointState, mat: &MaterialPoint) -> f64 {
    let w = m3(&u.w);
    let al = m3(&u.alpha);
    let a = m3(&d.a);
    let v = Vector3::from(u.v);
    let vel = Vector3::from(mat.velocity.value(u));
    let div_a = Vector3::from_fn(|i, _| d.grad_a[i][0][0] + d.grad_a[i][1][1] + d.grad_a[i][2][2]);
    let g = m3(&d.grad_lambda);
    let psi1 = m3(&mat.energy.first(&u.w));
    let mut s = -w.component_mul(&m3(&d.dt_a)).sum() - (w * v).dot(&div_a);
    for i in 0..3 {
        let (ai, alpha_i) = (a.row(i).transpose(), al.row(i).transpose());
        s -= alpha_i.dot(&v.cross(&ai));
        s -= ai.dot(&alpha_i.cross(&vel));
    }
    s -= u.rho * (d.dt_theta + v.dot(&Vector3::from(d.grad_theta)));
    s -= u.rho * (v.dot(&Vector3::from(d.dt_lambda)) + v.dot(&(g * v)));
    s -= u.rho * (w.transpose() * psi1).component_mul(&g).sum();
    for i in 0..3 {
        let b = |j: usize, r: usize| d.grad_b[i][j][r];
        let c = Vector3::new(b(1, 2) - b(2, 1), b(2, 0) - b(0, 2), b(0, 1) - b(1, 0));
        s -= w.row(i).transpose().dot(&c);
    }
    s + m3(&d.b).component_mul(&al).sum() + mat.h.value(u)
}

#[test]
fn density_matches_duplicate_evaluator() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let mat = rich_material(&mut rng, 10.0);
        let d = DualDerivativeData::random(&mut rng, 1.0);
        let u = random_state(&mut rng);
        let a = lagrangian_density(&d, &u, &mat);
        let b = reference_density(&d, &u, &mat);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn residual_is_gradient_of_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let mat = rich_material(&mut rng, 10.0);
        let d = DualDerivativeData::random(&mut rng, 1.0);
        let u = random_state(&mut rng);
        let r = invert_residual(&d, &u, &mat);
        let fd = fd_gradient(
            |x| Ok(lagrangian_density(&d, &PrimalPointState::from_slice(x.as_slice()).unwrap(), &mat)),
            &u.to_vector(),
            1e-5,
        )
        .unwrap();
        let rel = (&r - &fd).norm() / r.norm();
        assert!(rel <= 1e-6, "relative mismatch {rel:e}");
    }
}

#[test]
fn constant_velocity_residual_reduces_to_hand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mat = MaterialPoint::quadratic(50.0, 1.0, [0.4, -0.3, 0.2]);
    let d = DualDerivativeData::random(&mut rng, 1.0);
    let u = random_state(&mut rng);
    let r = invert_residual(&d, &u, &mat);
    // α-block: B_lp − A_lj v_k e_pkj − A_lj e_jps V_s + α_α α_lp, i.e. B − A (v × ·) − A (· × V) row by row.
    let a = m3(&d.a);
    let v = Vector3::from(u.v);
    let vel = Vector3::from(mat.velocity.v0);
    for l in 0..3 {
        for p in 0..3 {
            let e = Vector3::from_fn(|q, _| if q == p { 1.0 } else { 0.0 });
            let expected = d.b[l][p] - a.row(l).transpose().dot(&e.cross(&v)) - a.row(l).transpose().dot(&e.cross(&vel))
                + 50.0 * u.alpha[l][p];
            assert!((r[13 + 3 * l + p] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn pointwise_solves_reach_tolerance_and_shrink_with_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cfg = PointSolveConfig::default();
    let mats = rich_material(&mut rng, 1.0);
    let make = |c: f64| MaterialPoint {
        energy: Box::new(QuarticEnergy { k: 0.7 }),
        velocity: mats.velocity,
        h: QuadraticH::uniform(c, 1.2),
    };
    for _ in 0..20 {
        let d = DualDerivativeData::random(&mut rng, 1.0);
        let mat = make(1e3);
        let sol = solve_pointwise(&d, &mat, &mat.base_state(), &cfg).unwrap();
        assert!(invert_residual(&d, &sol.state, &mat).amax() <= 1e-10);
        let sweep = coefficient_sweep(&d, make, &[1e3, 1e4, 1e5], &cfg).unwrap();
        assert!(strictly_decreasing(&sweep), "{sweep:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_affine_in_data(seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = rich_material(&mut rng, 5.0);
        let d1 = DualDerivativeData::random(&mut rng, 1.0);
        let d2 = DualDerivativeData::random(&mut rng, 1.0);
        let u = random_state(&mut rng);
        let lhs = lagrangian_density(&d1.combine(a, &d2, b), &u, &mat);
        let rhs = a * lagrangian_density(&d1, &u, &mat) + b * lagrangian_density(&d2, &u, &mat)
            + (1.0 - a - b) * mat.h.value(&u);
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn doubling_data_doubles_dual_part(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = rich_material(&mut rng, 5.0);
        let d = DualDerivativeData::random(&mut rng, 1.0);
        let u = random_state(&mut rng);
        let h = mat.h.value(&u);
        let one = lagrangian_density(&d, &u, &mat) - h;
        let two = lagrangian_density(&d.combine(2.0, &d, 0.0), &u, &mat) - h;
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * (1.0 + one.abs()));
    }
}
