//! Cutoff wavenumbers and small-scale priors for the reduced filters.
//!
//! All logarithms are natural except in [`rkf_cutoff_base10`].

use serde::Serialize;

use super::{
    cutoff_split, turbulence_step, ReductionParams, TurbulenceObservation, TurbulenceParams,
};
use crate::criteria::{check_reference_projection, BetaModel, StochasticBetaModel, Verdict};
use crate::error::{Error, Result};
use crate::matcore::Operator;
use crate::reference::{
    inflate_rkf_step, stationary_covariance, StationarySolution, DEFAULT_MAX_ITER,
};

/// Upper end of the wavenumber search when no truncation bounds it.
const SEARCH_LIMIT: usize = 10_000_000;

/// Smallest `N ≥ 1` with `γ_N ≥ threshold`.
fn first_mode_with_damping(params: &TurbulenceParams, threshold: f64) -> Result<usize> {
    if params.gamma(1) >= threshold {
        return Ok(1);
    }
    let guess = ((threshold - params.gamma0) / params.nu)
        .powf(1.0 / params.alpha)
        .ceil();
    if !guess.is_finite() || guess > SEARCH_LIMIT as f64 {
        return Err(Error::InvalidParameter(format!(
            "damping threshold {threshold} is out of reach"
        )));
    }
    let mut n = (guess as usize).max(1);
    while n > 1 && params.gamma(n - 1) >= threshold {
        n -= 1;
    }
    while params.gamma(n) < threshold {
        n += 1;
    }
    Ok(n)
}

/// DRKF cutoff from requiring the small-scale memory term to be at most `ε`, with
/// `λ_S = e^{−γ_N h}` and the approximations `1 − √λ_S ≈ 1` and `γ_σ ≤ 1`. This leaves
/// `γ_N ≥ −(2/h) log(ε/√(r(r+1)))`.
pub fn drkf_cutoff(params: &TurbulenceParams, epsilon: f64, r: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    let threshold = -(2.0 / params.h) * (epsilon / (r * (r + 1.0)).sqrt()).ln();
    first_mode_with_damping(params, threshold)
}

/// Cutoff `N` and diagonal small-scale prior `D_S` for the RKF.
#[derive(Clone, Debug, Serialize)]
pub struct RkfPrior {
    pub n: usize,
    /// `δ` for each small-scale coordinate, in state order.
    pub delta: Vec<f64>,
}

impl RkfPrior {
    pub fn d_s(&self) -> Operator {
        Operator::diagonal(&self.delta)
    }
}

fn rkf_threshold(red: &ReductionParams, log: impl Fn(f64) -> f64, h: f64) -> Result<f64> {
    let ReductionParams {
        r,
        r_prime,
        beta_star,
    } = *red;
    if !(beta_star * r > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need beta* r > 1, got {}",
            beta_star * r
        )));
    }
    Ok(-log((beta_star * r - 1.0) / (beta_star * r * r_prime)) / (2.0 * h))
}

fn delta_table(params: &TurbulenceParams, red: &ReductionParams, n: usize) -> Vec<f64> {
    let scale = red.r_prime / (red.beta_star * red.r - 1.0);
    (2 * n - 1..params.dim())
        .map(|i| scale * params.energy(super::mode_of(i)))
        .collect()
}

/// `N` from `e^{−2γ_N h} ≤ (β*r − 1)/(β*rr')` and `δ_k = r'E_k/(β*r − 1)` for `|k| ≥ N`.
pub fn rkf_smallscale_prior(params: &TurbulenceParams, red: &ReductionParams) -> Result<RkfPrior> {
    let n = first_mode_with_damping(params, rkf_threshold(red, f64::ln, params.h)?)?;
    if n > params.k_max {
        return Err(Error::InvalidParameter(format!(
            "RKF cutoff {n} exceeds the truncation K = {}",
            params.k_max
        )));
    }
    Ok(RkfPrior {
        n,
        delta: delta_table(params, red, n),
    })
}

/// The same cutoff evaluated with a base-10 logarithm, which is how the smaller published
/// value arises. Exposed for comparison only.
pub fn rkf_cutoff_base10(params: &TurbulenceParams, red: &ReductionParams) -> Result<usize> {
    first_mode_with_damping(params, rkf_threshold(red, f64::log10, params.h)?)
}

/// Builds the inflated reference for `prior`, solves for its stationary covariance and
/// checks `𝐏_S R̃ 𝐏_S ⪯ (β*r − 1)D_S`.
pub fn verify_rkf_prior(
    params: &TurbulenceParams,
    obs: &TurbulenceObservation,
    red: &ReductionParams,
    prior: &RkfPrior,
    tol: f64,
) -> Result<(Verdict, StationarySolution)> {
    let split = cutoff_split(params, prior.n)?;
    let step = turbulence_step(params, obs)?;
    let inflated = inflate_rkf_step(&step, &split, &prior.d_s(), red.r_prime)?;
    let sol = stationary_covariance(&inflated, tol, DEFAULT_MAX_ITER)?;
    let verdict =
        check_reference_projection(&sol.r_tilde, &split, &prior.d_s(), red.r, red.beta_star)?;
    Ok((verdict, sol))
}

/// `sup_{|k|≥N}` of the equispaced-network `γ_σ`, `(2K+1)E_k/((2K+1)E_k + σ°)`, with the
/// transformed noise `ΨσΨᵀ` computed exactly.
pub fn equispaced_gamma_sigma(params: &TurbulenceParams, sigma_o: f64, n: usize) -> f64 {
    let q = params.dim() as f64;
    (n.max(1)..=params.k_max)
        .map(|k| {
            let e = q * params.energy(k);
            e / (e + sigma_o)
        })
        .fold(0.0, f64::max)
}

/// Smallest `N ≤ K` with `e^{−½hγ_N} E_N/(E_N + 2σ°/(2K+1)) ≤ ε/√(r(r+1))`.
pub fn intermittent_drkf_cutoff(
    params: &TurbulenceParams,
    epsilon: f64,
    r: f64,
    sigma_o: f64,
) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    let target = epsilon / (r * (r + 1.0)).sqrt();
    let q = params.dim() as f64;
    (1..=params.k_max)
        .find(|&n| {
            let e = params.energy(n);
            (-0.5 * params.h * params.gamma(n)).exp() * e / (e + 2.0 * sigma_o / q) <= target
        })
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no cutoff up to K = {} meets the target",
                params.k_max
            ))
        })
}

/// Per-mode `(ṽ_k, v'_k, δ_k)` for the intermittent RKF, or `None` where `r'e^{−2γ_k h} ≥ 1`
/// leaves `ṽ_k` undefined.
fn intermittent_mode(
    params: &TurbulenceParams,
    red: &ReductionParams,
    sigma_o: f64,
    k: usize,
) -> Option<(f64, f64, f64)> {
    let ReductionParams {
        r,
        r_prime,
        beta_star,
    } = *red;
    let e = params.lambda_s_conjugation(k);
    if r_prime * e >= 1.0 {
        return None;
    }
    let en = params.energy(k);
    let delta = r_prime * en / (beta_star * r - 1.0);
    let v = (r_prime * en * (1.0 - r_prime * e) + delta * r_prime * e) / (2.0 - 2.0 * r_prime * e);
    let v_obs = v * sigma_o / (sigma_o + params.dim() as f64 * v);
    Some((v, v_obs, delta))
}

/// Smallest `N` with `β̄* = γ̄β_o + (1 − γ̄)β_u < 1`, where `β_o` uses the one-observation
/// bound `v'_k` and `β_u` the unfiltered `ṽ_k`.
pub fn intermittent_rkf_cutoff(
    params: &TurbulenceParams,
    red: &ReductionParams,
    gamma_bar: f64,
    sigma_o: f64,
) -> Result<(usize, StochasticBetaModel)> {
    if !(gamma_bar > 0.0 && gamma_bar <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma_bar must lie in (0,1], got {gamma_bar}"
        )));
    }
    if !(red.beta_star * red.r > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need beta* r > 1, got {}",
            red.beta_star * red.r
        )));
    }
    let r = red.r;
    'outer: for n in 1..=params.k_max {
        let (mut beta_o, mut beta_u) = (0.0f64, 0.0f64);
        for k in n..=params.k_max {
            let Some((v, v_obs, delta)) = intermittent_mode(params, red, sigma_o, k) else {
                continue 'outer;
            };
            beta_o = beta_o.max(v_obs / (r * delta) + 1.0 / r);
            beta_u = beta_u.max(v / (r * delta) + 1.0 / r);
        }
        let model = StochasticBetaModel {
            model: BetaModel::BernoulliMixture {
                beta_o,
                beta_u,
                gamma_bar,
            },
            n0: 0,
        };
        if model.mean_beta() < 1.0 {
            return Ok((n, model));
        }
    }
    Err(Error::InvalidParameter(format!(
        "no cutoff up to K = {} gives a mean contraction below 1",
        params.k_max
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbulence::kolmogorov_mg13;

    #[test]
    fn published_cutoffs() {
        let (p, red) = kolmogorov_mg13(200);
        assert_eq!(drkf_cutoff(&p, 0.2, red.r).unwrap(), 65);
        assert_eq!(rkf_smallscale_prior(&p, &red).unwrap().n, 38);
        assert_eq!(rkf_cutoff_base10(&p, &red).unwrap(), 25);
        assert_eq!(intermittent_drkf_cutoff(&p, 0.2, red.r, 0.1).unwrap(), 59);
        let (n, _) = intermittent_rkf_cutoff(&p, &red, 0.9, 0.1).unwrap();
        assert!((11..=17).contains(&n), "N = {n}");
    }

    #[test]
    fn full_observation_reduces_to_beta_o() {
        let (p, red) = kolmogorov_mg13(200);
        let (_, m) = intermittent_rkf_cutoff(&p, &red, 1.0, 0.1).unwrap();
        match m.model {
            BetaModel::BernoulliMixture { beta_o, .. } => assert_eq!(m.mean_beta(), beta_o),
            _ => unreachable!(),
        }
    }

    #[test]
    fn cutoffs_monotone() {
        let (p, red) = kolmogorov_mg13(200);
        let mut last = usize::MAX;
        for eps in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let n = drkf_cutoff(&p, eps, red.r).unwrap();
            assert!(n <= last);
            last = n;
        }
        let mut last = usize::MAX;
        for s in [0.01, 0.1, 1.0, 10.0, 1e6] {
            let n = intermittent_drkf_cutoff(&p, 0.2, red.r, s).unwrap();
            assert!(n <= last);
            last = n;
        }
        assert_eq!(last, 1);
        let mut last = 0;
        for g in [1.0, 0.95, 0.9, 0.8, 0.6] {
            let (n, _) = intermittent_rkf_cutoff(&p, &red, g, 0.1).unwrap();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn large_damping_prior_limit() {
        let (p, red) = kolmogorov_mg13(200);
        let k = 150;
        let (v, _, delta) = intermittent_mode(&p, &red, 0.1, k).unwrap();
        let e = p.energy(k);
        assert!((v - red.r_prime * e / 2.0).abs() < 1e-12 * e);
        assert!((delta - red.r_prime * e / (red.beta_star * red.r - 1.0)).abs() < 1e-15);
    }
}
