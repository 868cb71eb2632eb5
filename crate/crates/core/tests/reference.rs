mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use twoscale_kf::criteria::{
    adjustment_time, adjustment_time_from_ratio, check_nu_recursion, covariance_path,
    nu_sequence, FilterConfig,
};
use twoscale_kf::matcore::{loewner_leq, riemannian_delta, Operator};
use twoscale_kf::reference::{
    contraction_profile, inflate_rkf_step, reference_sequence, riccati_step,
    stationary_covariance, stationary_unfiltered, InflatedSystem, DEFAULT_MAX_ITER,
};
use twoscale_kf::ssmodel::{CoefficientPath, ScaleSplit, SystemStep, TwoScaleSystem};
use twoscale_kf::SymMatrix;

use common::*;

fn scalar(a: f64, s: f64, h: f64, o: f64) -> SystemStep {
    SystemStep::dense(
        DMatrix::from_element(1, 1, a),
        DVector::zeros(1),
        SymMatrix::from_diagonal(&[s]),
        DMatrix::from_element(1, 1, h),
        SymMatrix::from_diagonal(&[o]),
    )
    .unwrap()
}

#[test]
fn scalar_riccati_fixed_point() {
    // R = (R + 1)/(R + 2) solves R² + R − 1 = 0
    let sol = stationary_covariance(&scalar(1.0, 1.0, 1.0, 1.0), 1e-14, DEFAULT_MAX_ITER).unwrap();
    assert_relative_eq!(sol.r_tilde.as_matrix()[(0, 0)], (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
    assert!(sol.unique);
    assert!(sol.residual < 1e-13);

    let one = riccati_step(&SymMatrix::identity(1), &scalar(1.0, 1.0, 1.0, 1.0)).unwrap();
    assert_relative_eq!(one.as_matrix()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn rkf_inflation_example() {
    // A' = √r'A, Σ' = r'(Σ + A D_S Aᵀ)
    let step = SystemStep::dense(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DVector::zeros(2),
        SymMatrix::identity(2),
        DMatrix::identity(2, 2),
        SymMatrix::identity(2),
    )
    .unwrap();
    let split = ScaleSplit::leading(2, 1).unwrap();
    let inf = inflate_rkf_step(&step, &split, &Operator::diagonal(&[2.0]), 1.5).unwrap();
    assert_relative_eq!(
        inf.a().to_dense(),
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]) * 1.5f64.sqrt(),
        epsilon = 1e-15
    );
    assert_relative_eq!(
        inf.sigma_sym().as_matrix(),
        &DMatrix::from_row_slice(2, 2, &[4.5, 3.0, 3.0, 4.5]),
        epsilon = 1e-14
    );
    assert!(InflatedSystem::rkf(
        TwoScaleSystem::constant(step, split).unwrap(),
        1.2,
        1.1,
        Operator::diagonal(&[2.0])
    )
    .is_err());
}

#[test]
fn riccati_contraction_shrinks_geometrically() {
    let mut g = rng(11);
    let step = random_step(&mut g, 4, 4, 0.9);
    let steps = vec![step; 60];
    let prof = contraction_profile(&steps, &pd(&mut g, 4, 0.1), &pd(&mut g, 4, 1.0)).unwrap();
    assert!(prof[0] > 0.1);
    for w in prof.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
    }
    assert!(prof[59] < prof[0] * 1e-3, "{:?}", &prof[55..]);
}

#[test]
fn adjustment_time_examples() {
    assert_eq!(adjustment_time_from_ratio(1.0, 1.2, 1.21), 0);
    assert_eq!(adjustment_time_from_ratio(0.3, 1.2, 1.21), 0);
    // ⌈log 2 / log(1.21/1.1)⌉ = ⌈7.27⌉
    assert_eq!(adjustment_time_from_ratio(2.0, 1.1, 1.21), 8);
    // ratio exactly (r'/r)³ lands on 3 despite round-off
    assert_eq!(adjustment_time_from_ratio((1.21f64 / 1.1).powi(3), 1.1, 1.21), 3);
    let i = SymMatrix::identity(2);
    assert_eq!(adjustment_time(&i, &i.scale(4.0), 1.0, 2.0).unwrap(), 2);
    assert!(adjustment_time(&i, &i, 1.2, 1.1).is_err());
}

fn rkf_nu_sequence(seed: u64, block_observation: bool) -> Vec<f64> {
    let mut g = rng(seed);
    let (d, p) = (5, 2);
    let split = ScaleSplit::leading(d, p).unwrap();
    let steps: Vec<SystemStep> = (0..80)
        .map(|_| {
            let (step, _) = random_decoupled_step(&mut g, d, d, p);
            if block_observation {
                let mut h = step.h().clone();
                h.view_mut((0, p), (p, d - p)).fill(0.0);
                h.view_mut((p, 0), (d - p, p)).fill(0.0);
                SystemStep::new(step.a().clone(), step.b().clone(), step.sigma().clone(), h, SymMatrix::scaled_identity(d, 0.5))
                    .unwrap()
            } else {
                step
            }
        })
        .collect();
    let path = CoefficientPath::from_steps(steps).unwrap();
    let d_s = Operator::diagonal(&[0.4, 0.3, 0.5]);
    let c_l0 = pd(&mut g, p, 0.1);
    let cov = covariance_path(&path, &split, &FilterConfig::Rkf { r: R, c_l0, d_s: d_s.clone() }).unwrap();
    let sys = TwoScaleSystem::constant(path.step(0).clone(), split.clone()).unwrap();
    let inflated = InflatedSystem::rkf(sys, R, R_PRIME, d_s).unwrap();
    let ref_steps = inflated.steps_on_path(&path).unwrap();
    let mut r0 = pd(&mut g, d, 0.5).into_matrix();
    if block_observation {
        r0.view_mut((0, p), (p, d - p)).fill(0.0);
        r0.view_mut((p, 0), (d - p, p)).fill(0.0);
    }
    let rt = reference_sequence(&ref_steps, &SymMatrix::symmetrized(r0)).unwrap();
    let c: Vec<SymMatrix> = cov.c_l.iter().map(|c| c.embed(split.large(), d)).collect();
    nu_sequence(&c, &rt).unwrap()
}

const R: f64 = 1.2;
const R_PRIME: f64 = 1.3;

#[test]
fn rkf_nu_recursion_with_block_diagonal_reference() {
    for seed in 0..5 {
        let nu = rkf_nu_sequence(seed, true);
        let v = check_nu_recursion(&nu, R, R_PRIME);
        assert!(v.passed, "{v:?}");
        let n0 = adjustment_time_from_ratio(nu[0], R, R_PRIME);
        assert!(nu[n0..].iter().all(|&x| x <= R * (1.0 + 1e-9)));
    }
}

/// Cutting the cross-scale blocks out of `X` is not dominated by `X`, so with scale-coupled
/// observations the recursion can fail.
#[test]
fn rkf_nu_recursion_needs_block_structure() {
    let x = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0])).unwrap();
    let cut = x.principal(&[0]).embed(&[0], 2);
    assert!(!loewner_leq(&cut, &x, 1e-9).unwrap());
    assert!(!check_nu_recursion(&rkf_nu_sequence(12, false), R, R_PRIME).passed);
}

#[test]
fn reference_below_unfiltered_covariance() {
    let mut g = rng(13);
    let step = random_step(&mut g, 5, 2, 0.8);
    let split = ScaleSplit::leading(5, 2).unwrap();
    let sys = TwoScaleSystem::constant(step, split).unwrap();
    let inflated = InflatedSystem::rkf(sys, 1.1, 1.2, Operator::diagonal(&[0.2, 0.3, 0.1])).unwrap();
    let step = inflated.constant_step().unwrap();
    let sol = stationary_covariance(&step, 1e-13, DEFAULT_MAX_ITER).unwrap();
    let v = stationary_unfiltered(step.a(), step.sigma(), 1e-13, DEFAULT_MAX_ITER).unwrap();
    assert!(loewner_leq(&sol.r_tilde, &v, 1e-9).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn stationary_solution_is_a_fixed_point((seed, d) in (any::<u64>(), 1usize..=5)) {
        let mut g = rng(seed);
        let step = random_step(&mut g, d, d, 1.2);
        let sol = stationary_covariance(&step, 1e-13, DEFAULT_MAX_ITER).unwrap();
        let again = riccati_step(&sol.r_tilde, &step).unwrap();
        prop_assert!(rel_err(again.as_matrix(), sol.r_tilde.as_matrix()) < 1e-11);
        prop_assert!(sol.unique);
        prop_assert!(sol.r_tilde.min_eigenvalue() > 0.0);
    }

    #[test]
    fn riccati_map_is_a_contraction((seed, d) in (any::<u64>(), 1usize..=5)) {
        let mut g = rng(seed);
        let step = random_step(&mut g, d, d, 1.1);
        let a = pd(&mut g, d, 0.05);
        let b = pd(&mut g, d, 0.05);
        let before = riemannian_delta(&a, &b).unwrap();
        let after = riemannian_delta(&riccati_step(&a, &step).unwrap(), &riccati_step(&b, &step).unwrap()).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-9));
    }
}
