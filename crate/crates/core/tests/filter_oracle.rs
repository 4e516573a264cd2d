mod common;

use common::*;
use dualtrack::filter::{
    normal_apply, objective_value, solve_filter, solve_filter_traced, CgConfig, FourierFilter, ModulatingFactor,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRIDS: [(usize, usize); 6] = [(1, 8), (2, 4), (4, 4), (3, 5), (2, 8), (1, 16)];

#[test]
fn baseline_operator_matches_dense_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (rows, cols) in [(1, 8), (2, 4)] {
        let inst = random_instance(&mut rng, rows, cols, 1, 1);
        let sys = inst.system(false);
        let (op, rhs) = dense_system(&sys);
        for _ in 0..3 {
            let v = random_filter(&mut rng, rows, cols, 1);
            let got = flatten(&normal_apply(&sys, &v).unwrap());
            let want = &op * flatten(&v);
            assert!((got - &want).norm() <= 1e-10 * want.norm());
        }
        assert!((flatten(&sys.rhs()) - rhs).norm() < 1e-10);
    }
}

#[test]
fn cost_sensitive_operator_matches_dense_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &(rows, cols) in &GRIDS[..4] {
        let inst = random_instance(&mut rng, rows, cols, 2, 3);
        let sys = inst.system(true);
        let (op, rhs) = dense_system(&sys);
        let v = random_filter(&mut rng, rows, cols, 2);
        let got = flatten(&normal_apply(&sys, &v).unwrap());
        let want = &op * flatten(&v);
        assert!((got - &want).norm() <= 1e-10 * want.norm());
        assert!((flatten(&sys.rhs()) - &rhs).norm() <= 1e-10 * rhs.norm());
    }
}

#[test]
fn operator_is_linear_self_adjoint_and_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &(rows, cols) in &GRIDS {
        for cs in [false, true] {
            let inst = random_instance(&mut rng, rows, cols, 3, 2);
            let sys = inst.system(cs);
            let zero = sys.zero_filter();
            assert_eq!(normal_apply(&sys, &zero).unwrap().norm_sqr(), 0.0);
            let u = random_filter(&mut rng, rows, cols, 3);
            let v = random_filter(&mut rng, rows, cols, 3);
            let au = normal_apply(&sys, &u).unwrap();
            let av = normal_apply(&sys, &v).unwrap();
            let lhs = au.inner(&v);
            let rhs = u.inner(&av);
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
            let uau = u.inner(&au);
            assert!(uau.re > 0.0 && uau.im.abs() <= 1e-10 * uau.re);
            // linearity
            let mut combo = u.clone();
            combo.axpy(Complex64::new(0.5, -2.0), &v);
            let mut expect = au.clone();
            expect.axpy(Complex64::new(0.5, -2.0), &av);
            let got = normal_apply(&sys, &combo).unwrap();
            assert!(relative_error(&got, &expect) < 1e-12);
        }
    }
}

#[test]
fn cg_matches_dense_solve_on_small_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for &(rows, cols) in &[(1, 8), (2, 4)] {
        let inst = random_instance(&mut rng, rows, cols, 2, 2);
        let sys = inst.system(true);
        let cg = solve_filter(
            &sys,
            CgConfig {
                max_iter: 2000,
                tol: 1e-12,
            },
            None,
        )
        .unwrap();
        let dense = dense_solve(&sys);
        let err = relative_error(&cg.filter, &dense);
        assert!(err <= 1e-6, "relative error {err}");
    }
}

#[test]
fn uniform_factor_reduces_to_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut inst = random_instance(&mut rng, 4, 4, 2, 3);
    for s in inst.memory.samples_mut() {
        s.factor = Some(ModulatingFactor::uniform(16));
    }
    let cfg = CgConfig {
        max_iter: 2000,
        tol: 1e-13,
    };
    let with_q = solve_filter(&inst.system(true), cfg, None).unwrap();
    let baseline = solve_filter(&inst.system(false), cfg, None).unwrap();
    assert!(relative_error(&with_q.filter, &baseline.filter) <= 1e-8);
}

#[test]
fn objective_never_increases_along_cg() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for &(rows, cols) in &GRIDS {
        for cs in [false, true] {
            let inst = random_instance(&mut rng, rows, cols, 2, 3);
            let sys = inst.system(cs);
            let mut trace = Vec::new();
            solve_filter_traced(
                &sys,
                CgConfig {
                    max_iter: 60,
                    tol: 1e-14,
                },
                None,
                |_, f| trace.push(objective_value(&sys, f).unwrap()),
            )
            .unwrap();
            for pair in trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0), "{pair:?}");
            }
        }
    }
}

#[test]
fn objective_of_zero_filter_is_weighted_label_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inst = random_instance(&mut rng, 3, 4, 2, 2);
    let sys = inst.system(true);
    let zero = sys.zero_filter();
    let expect: f64 = inst
        .memory
        .samples()
        .iter()
        .map(|s| {
            let q = s.factor.as_ref().unwrap().values();
            s.weight
                * inst
                    .label
                    .spatial()
                    .iter()
                    .zip(q)
                    .map(|(y, q)| (q * y).powi(2))
                    .sum::<f64>()
        })
        .sum();
    assert!((objective_value(&sys, &zero).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn objective_matches_fourier_quadratic_form() {
    // N * E(f) = f^H A f - 2 Re(f^H b) + N * E(0)
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let inst = random_instance(&mut rng, 2, 4, 2, 2);
    let sys = inst.system(true);
    let f = inst.fft.clone();
    let spatial: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let filt = FourierFilter::from_spatial(&f, &spatial).unwrap();
    let (op, rhs) = dense_system(&sys);
    let v = flatten(&filt);
    let quad = (v.adjoint() * &op * &v)[(0, 0)].re - 2.0 * (v.adjoint() * &rhs)[(0, 0)].re;
    let e0 = objective_value(&sys, &sys.zero_filter()).unwrap();
    let e = objective_value(&sys, &filt).unwrap();
    assert!((8.0 * (e - e0) - quad).abs() < 1e-9 * quad.abs().max(1.0));
}

#[test]
fn solved_filter_stays_real_in_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for &(rows, cols) in &GRIDS {
        let inst = random_instance(&mut rng, rows, cols, 3, 2);
        let sys = inst.system(true);
        let out = solve_filter(
            &sys,
            CgConfig {
                max_iter: 200,
                tol: 1e-10,
            },
            None,
        )
        .unwrap();
        assert!(out.filter.max_spatial_imag(&inst.fft) < 1e-10);
    }
}

#[test]
fn warm_start_from_solution_needs_no_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let inst = random_instance(&mut rng, 4, 4, 2, 2);
    let sys = inst.system(true);
    let cfg = CgConfig {
        max_iter: 500,
        tol: 1e-6,
    };
    let first = solve_filter(&sys, cfg, None).unwrap();
    let again = solve_filter(&sys, cfg, Some(&first.filter)).unwrap();
    assert_eq!(again.iterations, 0);
    let before = objective_value(&sys, &first.filter).unwrap();
    let refined = solve_filter(
        &sys,
        CgConfig {
            max_iter: 5,
            tol: 1e-12,
        },
        Some(&first.filter),
    )
    .unwrap();
    assert!(objective_value(&sys, &refined.filter).unwrap() <= before + 1e-12);
}
