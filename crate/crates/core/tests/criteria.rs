mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use twoscale_kf::criteria::{
    beta_sequence, check_acceptable_reduction, check_reference_projection,
    co_iterate_forecasts, covariance_domination_monitor, covariance_path, drkf_error_bound,
    exp_stability_rate, fj96_compare, gamma_sigma, gramian_bound, kalman_from_forecast,
    mahalanobis_monitor, min_certified_rho, monte_carlo, rho_bound_check, stochastic_beta_bound,
    transition_factors, BetaModel, DiagnosticsTrace, DrkfBoundInputs, FilterConfig,
    MonteCarloConfig, StochasticBetaModel,
};
use twoscale_kf::matcore::{loewner_leq, Operator};
use twoscale_kf::ssmodel::{CoefficientPath, ScaleSplit, SystemStep};
use twoscale_kf::{Error, Execution, SymMatrix};

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
fn beta_and_reduction_examples() {
    let i = SymMatrix::identity(3);
    assert_relative_eq!(beta_sequence(&i, &i.scale(2.0)).unwrap(), 0.5, epsilon = 1e-14);
    let betas = [0.95, 0.8, 0.85];
    assert!(check_acceptable_reduction(&betas, 2, 0.9).passed);
    let v = check_acceptable_reduction(&betas, 1, 0.9);
    assert!(!v.passed);
    assert_eq!(v.witness.unwrap().step, Some(1));
    assert!(!check_acceptable_reduction(&[f64::NAN], 0, 0.9).passed);
}

#[test]
fn reference_projection_examples() {
    let split = ScaleSplit::leading(3, 1).unwrap();
    let d_s = Operator::diagonal(&[1.0, 1.0]);
    // (β*r − 1) = 0.08
    let ok = SymMatrix::from_diagonal(&[5.0, 0.05, 0.07]);
    assert!(check_reference_projection(&ok, &split, &d_s, 1.2, 0.9).unwrap().passed);
    let bad = SymMatrix::from_diagonal(&[5.0, 0.05, 0.1]);
    let v = check_reference_projection(&bad, &split, &d_s, 1.2, 0.9).unwrap();
    assert!(!v.passed);
    let w = v.witness.unwrap();
    assert_relative_eq!(w.value, -0.02, epsilon = 1e-12);
    assert!(check_reference_projection(&ok, &split, &d_s, 1.0, 0.9).is_err());
}

#[test]
fn drkf_bound_limits() {
    let base = DrkfBoundInputs {
        r: 1.5,
        lambda_s: 0.25,
        gamma_sigma: 0.0,
        p: 4,
        e0_maha: 10.0,
        n: 1000,
    };
    assert_relative_eq!(drkf_error_bound(&base).unwrap(), 2.0 * 4.0 / 0.5, epsilon = 1e-12);
    let at0 = drkf_error_bound(&DrkfBoundInputs { n: 0, ..base }).unwrap();
    assert_relative_eq!(at0, 20.0 + 16.0, epsilon = 1e-12);
    let with_memory = drkf_error_bound(&DrkfBoundInputs { gamma_sigma: 1.0, ..base }).unwrap();
    let memory = 4.0 * (0.25f64 * 1.5).sqrt() * 4.0 / ((1.5f64.sqrt() - 1.0) * 0.5);
    assert_relative_eq!(with_memory, 32.0 + memory, epsilon = 1e-10);
    assert!(drkf_error_bound(&DrkfBoundInputs { r: 1.0, ..base }).is_err());
    assert!(drkf_error_bound(&DrkfBoundInputs { lambda_s: 1.0, ..base }).is_err());
}

#[test]
fn gamma_sigma_examples() {
    // large x_0 observed with x_1: a_s = 0, Σ_s = 1 so V^S = 1, σ = 1 gives 1/(1+1)
    let step = SystemStep::dense(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]),
        DVector::zeros(2),
        SymMatrix::identity(2),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        SymMatrix::identity(1),
    )
    .unwrap();
    let split = ScaleSplit::leading(2, 1).unwrap();
    let path = CoefficientPath::constant(step.clone().into(), 10);
    let g = gamma_sigma(&path, &split, &SymMatrix::identity(1), 10).unwrap();
    assert_relative_eq!(g, 0.5, epsilon = 1e-14);
    let blind = step.with_h(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    let path = CoefficientPath::constant(blind.into(), 10);
    assert_eq!(gamma_sigma(&path, &split, &SymMatrix::identity(1), 10).unwrap(), 0.0);
}

#[test]
fn stability_rate_without_observations() {
    let step = scalar(0.5, 1.0, 0.0, 1.0);
    let path = CoefficientPath::constant(step.into(), 200);
    let split = ScaleSplit::leading(1, 1).unwrap();
    let cov = covariance_path(&path, &split, &FilterConfig::Kalman { r0: SymMatrix::identity(1) }).unwrap();
    let f = transition_factors(&path, &cov).unwrap();
    assert_relative_eq!(exp_stability_rate(&f).unwrap(), 0.5f64.ln(), epsilon = 1e-12);
    assert!(exp_stability_rate(&f[..10]).is_err());
}

#[test]
fn gramian_bound_scalar() {
    // constant state seen through unit noise: the estimator averages n − m + 1 observations
    let step = scalar(1.0, 0.0, 1.0, 1.0);
    let path = CoefficientPath::constant(step.into(), 20);
    for n in 1..=20 {
        let b = gramian_bound(&path, 1, n, None).unwrap();
        assert_relative_eq!(b.as_matrix()[(0, 0)], 1.0 / n as f64, epsilon = 1e-12);
        let r = kalman_from_forecast(&path, 1, n, &SymMatrix::from_diagonal(&[1e12])).unwrap();
        assert!(r.as_matrix()[(0, 0)] <= b.as_matrix()[(0, 0)] * (1.0 + 1e-9));
    }
    assert!(gramian_bound(&path, 0, 3, None).is_err());
    assert!(gramian_bound(&path, 1, 21, None).is_err());
}

#[test]
fn rho_bound_examples() {
    let rho = min_certified_rho(0.5, 2.0, 1.1, 1.0);
    assert!(rho_bound_check(0.5, 2.0, 1.1, 1.0, rho).unwrap());
    assert!(!rho_bound_check(0.5, 2.0, 1.1, 1.0, rho * 0.999).unwrap_or(false));
    assert!(rho_bound_check(0.5, 2.0, 1.1, 1.0, 1.0).is_err());
}

#[test]
fn stochastic_bound_examples() {
    let constant = StochasticBetaModel {
        model: BetaModel::Constant { beta_star: 0.5 },
        n0: 3,
    };
    assert_relative_eq!(stochastic_beta_bound(&constant, 3, 2, 10.0), 18.0, epsilon = 1e-12);
    assert_relative_eq!(stochastic_beta_bound(&constant, 4, 2, 10.0), 13.0, epsilon = 1e-12);
    let mix = StochasticBetaModel {
        model: BetaModel::BernoulliMixture {
            beta_o: 0.5,
            beta_u: 1.5,
            gamma_bar: 0.75,
        },
        n0: 0,
    };
    assert_relative_eq!(mix.mean_beta(), 0.75, epsilon = 1e-15);
    let never = StochasticBetaModel {
        model: BetaModel::Constant { beta_star: 1.0 },
        n0: 0,
    };
    assert!(stochastic_beta_bound(&never, 5, 2, 1.0).is_infinite());
}

#[test]
fn riccati_comparison_orders_forecasts() {
    let mut g = rng(21);
    let step = random_step(&mut g, 3, 2, 0.9);
    let bigger = step.with_dynamics(step.a().clone(), step.sigma().scaled(2.0)).unwrap();
    assert!(fj96_compare(&step, &bigger).unwrap());
    let r1 = pd(&mut g, 3, 0.1);
    let first = co_iterate_forecasts(&step, &bigger, &r1, &r1.scale(1.5), 100).unwrap();
    assert_eq!(first, None);
}

#[test]
fn kalman_filter_is_calibrated() {
    let mut g = rng(22);
    let step = random_step(&mut g, 3, 2, 0.9);
    let path = CoefficientPath::constant(step.into(), 60);
    let split = ScaleSplit::leading(3, 3).unwrap();
    let r0 = pd(&mut g, 3, 0.5);
    let cov = covariance_path(&path, &split, &FilterConfig::Kalman { r0: r0.clone() }).unwrap();
    let m0 = DVector::zeros(3);
    let mc = MonteCarloConfig::new(2000, 5);
    let run = monte_carlo(&path, &cov, &m0, &r0, &mc, 10).unwrap();
    let s = &run.summary;
    for n in 0..=60 {
        assert!(s.psi[n] <= 1.0 + 4.0 * s.psi_se[n], "psi[{n}] = {}", s.psi[n]);
        assert!((s.maha[n] - 3.0).abs() <= 4.0 * s.maha_se[n], "maha[{n}] = {}", s.maha[n]);
    }
    let avg: f64 = run.trial_maha_avg.iter().sum::<f64>() / run.trial_maha_avg.len() as f64;
    assert!((avg - 1.0).abs() < 0.05, "{avg}");
    assert!(mahalanobis_monitor(s, 0.5, 0).passed);
}

#[test]
fn monitors_refuse_few_trials() {
    let mut g = rng(23);
    let step = random_step(&mut g, 2, 1, 0.9);
    let path = CoefficientPath::constant(step.into(), 5);
    let split = ScaleSplit::leading(2, 2).unwrap();
    let r0 = SymMatrix::identity(2);
    let cov = covariance_path(&path, &split, &FilterConfig::Kalman { r0: r0.clone() }).unwrap();
    let res = covariance_domination_monitor(&path, &cov, &DVector::zeros(2), &r0, &MonteCarloConfig::new(99, 1));
    assert!(matches!(res, Err(Error::TooFewTrials(99))));
}

#[test]
fn monte_carlo_is_execution_independent() {
    let mut g = rng(24);
    let step = random_step(&mut g, 3, 2, 0.9);
    let path = CoefficientPath::constant(step.into(), 20);
    let split = ScaleSplit::leading(3, 1).unwrap();
    let cfg = FilterConfig::Rkf {
        r: 1.1,
        c_l0: SymMatrix::identity(1),
        d_s: Operator::diagonal(&[0.5, 0.5]),
    };
    let cov = covariance_path(&path, &split, &cfg).unwrap();
    let p0 = SymMatrix::identity(3);
    let mut mc = MonteCarloConfig::new(150, 9);
    mc.exec = Execution::Sequential;
    let a = monte_carlo(&path, &cov, &DVector::zeros(3), &p0, &mc, 0).unwrap();
    mc.exec = Execution::Parallel;
    let b = monte_carlo(&path, &cov, &DVector::zeros(3), &p0, &mc, 0).unwrap();
    assert_eq!(a.summary.maha, b.summary.maha);
    assert_eq!(a.summary.psi, b.summary.psi);
    assert_eq!(a.trial_mse_avg, b.trial_mse_avg);
}

#[test]
fn diagnostics_csv_layout() {
    let mut g = rng(25);
    let step = random_step(&mut g, 3, 2, 0.9);
    let path = CoefficientPath::constant(step.into(), 8);
    let split = ScaleSplit::leading(3, 1).unwrap();
    let cfg = FilterConfig::Rkf {
        r: 1.1,
        c_l0: SymMatrix::identity(1),
        d_s: Operator::diagonal(&[0.5, 0.5]),
    };
    let cov = covariance_path(&path, &split, &cfg).unwrap();
    let p0 = SymMatrix::identity(3);
    let run = monte_carlo(&path, &cov, &DVector::zeros(3), &p0, &MonteCarloConfig::new(100, 2), 0).unwrap();
    let trace = DiagnosticsTrace::assemble(&cov, Some(&run.summary), None).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,beta,psi,psi_se,nu,maha_per_dim,mse,loewner_ok");
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("0,,"));
    assert_eq!(lines[2].split(',').count(), 8);
    assert!(!lines[2].split(',').nth(1).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// The Gramian estimator is one admissible estimator, so it bounds the optimal covariance.
    #[test]
    fn gramian_bound_dominates_kalman((seed, d) in (any::<u64>(), 1usize..=4)) {
        let mut g = rng(seed);
        let steps: Vec<SystemStep> = (0..12).map(|_| random_step(&mut g, d, d, 1.2)).collect();
        let path = CoefficientPath::from_steps(steps).unwrap();
        let prior = pd(&mut g, d, 0.5);
        let bound = gramian_bound(&path, 2, 12, Some(&prior.factor().unwrap().inverse())).unwrap();
        let r = kalman_from_forecast(&path, 2, 12, &prior).unwrap();
        prop_assert!(loewner_leq(&r, &bound, 1e-8).unwrap());
    }

    #[test]
    fn beta_without_reduction_is_inverse_inflation((seed, d) in (any::<u64>(), 2usize..=5)) {
        // with no small scales C⁺ = r𝒦(Ĉ), so β = 1/r
        let mut g = rng(seed);
        let step = random_step(&mut g, d, 2, 0.5);
        let path = CoefficientPath::constant(step.into(), 5);
        let split = ScaleSplit::leading(d, d).unwrap();
        let cov = covariance_path(&path, &split, &FilterConfig::Rkf {
            r: 1.3,
            c_l0: pd(&mut g, d, 0.1),
            d_s: Operator::zeros(0, 0),
        }).unwrap();
        for b in &cov.betas {
            prop_assert!((b - 1.0 / 1.3).abs() <= 1e-9);
        }
    }
}
