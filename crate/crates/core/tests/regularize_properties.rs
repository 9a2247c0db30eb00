use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sepreg_core::als::tikhonov_solve;
use sepreg_core::regularize::{
    build_b, gcv_select_lambda, inverse_norm, tikhonov_factor, GcvSpectrum,
};
use sepreg_core::{BasisSpec, Family, SeparatedModel};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Upper triangular with a diagonal bounded away from zero.
fn random_upper(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            rng.random_range(0.2..3.0)
        } else if j > i {
            StandardNormal.sample(rng)
        } else {
            0.0
        }
    })
}

#[test]
fn perturbation_bound_holds() {
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let p = rng.random_range(1..=8);
        let n = rng.random_range(p..=60);
        let a = gaussian(&mut rng, n, p);
        let u = gaussian(&mut rng, n, 1).column(0).into_owned();
        let l = random_upper(&mut rng, p);
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
        let eps = gaussian(&mut rng, n, 1).column(0).into_owned() * 10f64.powf(rng.random_range(-4.0..0.0));
        let c = tikhonov_solve(&a, &u, &l, lambda);
        let c_tilde = tikhonov_solve(&a, &(&u + &eps), &l, lambda);
        let lhs = (&c - &c_tilde).norm() / c.norm();
        let rhs = inverse_norm(&l) * eps.norm() / (lambda * c.norm()) + 1e-10;
        assert!(lhs <= rhs, "trial {trial}: {lhs:e} > {rhs:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fast_hat_trace_matches_explicit_matrix(seed in any::<u64>(), log_lambda in -6.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..=10);
        let n = rng.random_range(p + 1..=60);
        let a = gaussian(&mut rng, n, p);
        let u = gaussian(&mut rng, n, 1).column(0).into_owned();
        let l = random_upper(&mut rng, p);
        let lambda = 10f64.powf(log_lambda);
        let spectrum = GcvSpectrum::new(&a, &u, &l).unwrap();
        let system = a.tr_mul(&a) + l.tr_mul(&l) * (lambda * lambda);
        let h = &a * system.try_inverse().unwrap() * a.transpose();
        prop_assert!((spectrum.hat_trace(lambda) - h.trace()).abs() <= 1e-9, "{} vs {}", spectrum.hat_trace(lambda), h.trace());
        let c = tikhonov_solve(&a, &u, &l, lambda);
        let res = (&a * &c - &u).norm_squared();
        prop_assert!((spectrum.residual_sq(lambda) - res).abs() <= 1e-9 * res.max(1.0));
    }

    #[test]
    fn selected_lambda_is_a_grid_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..=6);
        let n = rng.random_range(p + 2..=50);
        let a = gaussian(&mut rng, n, p);
        let u = gaussian(&mut rng, n, 1).column(0).into_owned();
        let l = random_upper(&mut rng, p);
        let sel = gcv_select_lambda(&a, &u, &l, 50).unwrap();
        prop_assert!(sel.grid.contains(&sel.lambda));
        let best = sel.gcv_values.iter().copied().fold(f64::INFINITY, f64::min);
        let idx = sel.grid.iter().position(|&g| g == sel.lambda).unwrap();
        prop_assert_eq!(sel.gcv_values[idx], best);
        prop_assert!(sel.gcv_values[..idx].iter().all(|&v| v > best));
    }

    #[test]
    fn penalty_is_the_second_moment(seed in any::<u64>(), hermite in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let family = if hermite { Family::HermiteProbabilists } else { Family::Legendre };
        // B is singular when the other directions' factors are dependent,
        // which is certain for d = 1 or r > M + 1.
        let dims = rng.random_range(2..=6);
        let m = rng.random_range(0..=3);
        let rank = rng.random_range(1..=(m + 1).min(4));
        let basis = BasisSpec::new(family, m);
        let scales = (0..rank).map(|_| rng.random_range(0.2..3.0)).collect();
        let coeffs = (0..dims * rank * (m + 1)).map(|_| StandardNormal.sample(&mut rng)).collect();
        let model = SeparatedModel::from_flat(basis, dims, scales, coeffs).unwrap();
        let k = rng.random_range(0..dims);
        let b = build_b(&model, k);
        let l = tikhonov_factor(&b).unwrap();
        prop_assert!((l.tr_mul(&l) - &b).norm() <= 1e-10 * b.norm());
        let c = DVector::from_column_slice(model.direction(k));
        let m2 = model.second_moment();
        prop_assert!(((&l * c).norm_squared() - m2).abs() <= 1e-10 * m2);
    }

    #[test]
    fn inverse_norm_matches_smallest_singular_value(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..=10);
        let l = random_upper(&mut rng, p);
        let smin = l.clone().svd(false, false).singular_values.min();
        let got = inverse_norm(&l);
        prop_assert!((got - 1.0 / smin).abs() <= 1e-10 * got);
    }
}
