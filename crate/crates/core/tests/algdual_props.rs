use dualact::algdual::{minnorm_oracle, solve_dual, solve_inner, AlgDualConfig, LinearSystem, ShiftedQuadratic};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Orthogonal projector onto the null space of `a`, from its SVD.
fn null_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut p = DMatrix::identity(n, n);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-12 {
            let row = vt.row(k).transpose();
            p -= &row * row.transpose();
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_covariance(seed in any::<u64>(), k in 0.1f64..20.0, c in 0.2f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nr, nc) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let sys = LinearSystem::new(random_matrix(&mut rng, nr, nc), random_vector(&mut rng, nr)).unwrap();
        let h = ShiftedQuadratic::uniform(random_vector(&mut rng, nc), c).unwrap();
        let hk = h.scaled(k).unwrap();
        let z = random_vector(&mut rng, nr) * 3.0;
        let cfg = AlgDualConfig::default();
        let lhs = solve_inner(&sys, &hk, &z, &cfg).unwrap();
        let rhs = solve_inner(&sys, &h, &(&z / k), &cfg).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + z.norm()));
    }

    #[test]
    fn dual_solution_lies_in_row_space(seed in any::<u64>(), c in 0.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..8);
        let m = rng.gen_range(1..n);
        let a = random_matrix(&mut rng, m, n);
        let b = &a * random_vector(&mut rng, n);
        let sys = LinearSystem::new(a.clone(), b.clone()).unwrap();
        let h = ShiftedQuadratic::uniform(DVector::zeros(n), c).unwrap();
        let s = solve_dual(&sys, &h, &DVector::zeros(m), &AlgDualConfig::default()).unwrap();
        prop_assert!(s.converged);
        let x_pinv = a.clone().pseudo_inverse(1e-13).unwrap() * &b;
        prop_assert!((&s.x - x_pinv).norm() <= 1e-8);
        prop_assert!((null_projector(&a) * &s.x).norm() <= 1e-8);
    }

    #[test]
    fn minnorm_is_orthogonal_to_null_space(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 3, 6);
        let b = &a * random_vector(&mut rng, 6);
        let x = minnorm_oracle(&a, &b).unwrap();
        prop_assert!((&a * &x - &b).norm() <= 1e-10);
        prop_assert!((null_projector(&a) * &x).norm() <= 1e-10);
    }

    #[test]
    fn converged_dual_solves_primal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 2, 4);
        let b = random_vector(&mut rng, 2);
        let sys = LinearSystem::new(a, b).unwrap();
        let h = ShiftedQuadratic::uniform(random_vector(&mut rng, 4), 2.0).unwrap();
        let cfg = AlgDualConfig::default();
        let s = solve_dual(&sys, &h, &DVector::zeros(2), &cfg).unwrap();
        if s.converged {
            prop_assert!(s.primal_residual <= cfg.tol_primal);
        }
    }
}
