//! Assumption verifiers, error monitors and error bounds.

mod comparison;
mod monitor;
mod stability;

pub use comparison::{
    co_iterate_forecasts, fj96_compare, gramian_bound, kalman_from_forecast, min_certified_rho,
    rho_bound_check, rho_dominance_check, RhoDominance,
};
pub use monitor::{
    covariance_domination_monitor, covariance_path, mahalanobis_monitor, mahalanobis_trace,
    monte_carlo, CovariancePath, DiagnosticsRow, DiagnosticsTrace, FilterConfig, FilterKind,
    MonteCarloConfig, MonteCarloRun, MonteCarloSummary, PsiTrace,
};
pub use stability::{exp_stability_rate, transition_factors};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::DrkfBlocks;
use crate::matcore::{loewner_gap, min_dominance_ratio, EigenWitness, Operator, SymMatrix};
use crate::ssmodel::{CoefficientPath, ScaleSplit};

/// Outcome of a check plus the evidence for a failure.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub step: Option<usize>,
    pub value: f64,
    pub eigenvector: Option<EigenWitness>,
}

impl Verdict {
    pub fn pass(name: &str) -> Self {
        Self {
            name: name.into(),
            passed: true,
            witness: None,
        }
    }

    pub fn fail(name: &str, witness: Witness) -> Self {
        Self {
            name: name.into(),
            passed: false,
            witness: Some(witness),
        }
    }
}

/// `β = min{b : 𝒦(Ĉ) ⪯ bC⁺}`.
pub fn beta_sequence(k_c_hat: &SymMatrix, c_plus: &SymMatrix) -> Result<f64> {
    min_dominance_ratio(k_c_hat, c_plus)
}

/// `β_n ≤ β*` for all `n ≥ n0`; `betas[i]` is `β_{i+1}`.
pub fn check_acceptable_reduction(betas: &[f64], n0: usize, beta_star: f64) -> Verdict {
    const NAME: &str = "acceptable_reduction";
    for (i, &b) in betas.iter().enumerate() {
        let n = i + 1;
        if n >= n0 && !(b <= beta_star) {
            return Verdict::fail(
                NAME,
                Witness {
                    step: Some(n),
                    value: b,
                    eigenvector: None,
                },
            );
        }
    }
    Verdict::pass(NAME)
}

/// Loewner tolerance used by the projection check.
pub const PROJECTION_TOL: f64 = 1e-9;

/// `𝐏_S R̃ 𝐏_S ⪯ (β*r − 1) D_S`.
pub fn check_reference_projection(
    r_tilde: &SymMatrix,
    split: &ScaleSplit,
    d_s: &Operator,
    r: f64,
    beta_star: f64,
) -> Result<Verdict> {
    const NAME: &str = "reference_projection";
    if !(beta_star * r > 1.0 && beta_star < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 1/r < beta* < 1, got r={r}, beta*={beta_star}"
        )));
    }
    let small = r_tilde.principal(split.small());
    let bound = d_s.to_sym().scale(beta_star * r - 1.0);
    let (gap, v) = loewner_gap(&small, &bound)?;
    if gap >= -PROJECTION_TOL * bound.norm().max(1.0) {
        Ok(Verdict::pass(NAME))
    } else {
        Ok(Verdict::fail(
            NAME,
            Witness {
                step: None,
                value: gap,
                eigenvector: Some(EigenWitness::new(gap, &v)),
            },
        ))
    }
}

/// `n0 = ⌈log‖R̃₀⁻¹C₀‖ / log(r'/r)⌉`, 0 when the norm is at most 1.
pub fn adjustment_time(
    r_tilde_0: &SymMatrix,
    c_0: &SymMatrix,
    r: f64,
    r_prime: f64,
) -> Result<usize> {
    if !(r_prime > r) {
        return Err(Error::InvalidParameter(format!(
            "adjustment time needs r' > r, got r={r}, r'={r_prime}"
        )));
    }
    let nu = min_dominance_ratio(c_0, r_tilde_0)?;
    Ok(adjustment_time_from_ratio(nu, r, r_prime))
}

/// Ceiling formula on a precomputed ratio, guarded against round-off at integers.
pub fn adjustment_time_from_ratio(nu: f64, r: f64, r_prime: f64) -> usize {
    if nu <= 1.0 {
        return 0;
    }
    let x = nu.ln() / (r_prime / r).ln();
    (x - 1e-9).ceil().max(0.0) as usize
}

/// `ν_n = ‖R̃_n⁻¹C_n‖` along two aligned sequences.
pub fn nu_sequence(c: &[SymMatrix], r_tilde: &[SymMatrix]) -> Result<Vec<f64>> {
    c.iter()
        .zip(r_tilde)
        .map(|(c, rt)| min_dominance_ratio(c, rt))
        .collect()
}

/// `ν_{n+1} ≤ r·max(1, ν_n/r')` with slack `-1e-9`.
pub fn check_nu_recursion(nu: &[f64], r: f64, r_prime: f64) -> Verdict {
    const NAME: &str = "nu_recursion";
    for (n, w) in nu.windows(2).enumerate() {
        let bound = r * (w[0] / r_prime).max(1.0);
        if w[1] - bound > 1e-9 * bound.max(1.0) {
            return Verdict::fail(
                NAME,
                Witness {
                    step: Some(n + 1),
                    value: w[1] - bound,
                    eigenvector: None,
                },
            );
        }
    }
    Verdict::pass(NAME)
}

/// Inputs of the DRKF error bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DrkfBoundInputs {
    pub r: f64,
    pub lambda_s: f64,
    pub gamma_sigma: f64,
    pub p: usize,
    pub e0_maha: f64,
    pub n: usize,
}

/// `2/rⁿ·e0 + 2p(1+γσ)/(r−1) + 4√(λ_S r)·pγσ/((√r−1)(1−√λ_S))`.
pub fn drkf_error_bound(inp: &DrkfBoundInputs) -> Result<f64> {
    if !(inp.r > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "r must exceed 1, got {}",
            inp.r
        )));
    }
    if !(inp.lambda_s >= 0.0 && inp.lambda_s < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_S must lie in [0,1), got {}",
            inp.lambda_s
        )));
    }
    if !(0.0..=1.0 + 1e-9).contains(&inp.gamma_sigma) {
        return Err(Error::InvalidParameter(format!(
            "gamma_sigma must lie in [0,1], got {}",
            inp.gamma_sigma
        )));
    }
    let (r, p, g, l) = (inp.r, inp.p as f64, inp.gamma_sigma, inp.lambda_s);
    let transient = 2.0 * inp.e0_maha / r.powi(inp.n.min(i32::MAX as usize) as i32);
    let noise = 2.0 * p * (1.0 + g) / (r - 1.0);
    let memory = 4.0 * (l * r).sqrt() * p * g / ((r.sqrt() - 1.0) * (1.0 - l.sqrt()));
    Ok(transient + noise + memory)
}

/// `sup_n λmax((σ^L_n)^{-1/2} H^S V^S_{n+1} H^Sᵀ (σ^L_n)^{-1/2})` over the first `horizon` steps.
pub fn gamma_sigma(
    path: &CoefficientPath,
    split: &ScaleSplit,
    v_s0: &SymMatrix,
    horizon: usize,
) -> Result<f64> {
    let mut v = v_s0.clone();
    let mut sup = 0.0f64;
    for step in path.iter().take(horizon) {
        let blocks = DrkfBlocks::new(step, split)?;
        v = blocks.propagate_small(&v);
        let rep = v.congruence(&blocks.h_s);
        let sigma_l = blocks.obs_noise.add(&rep);
        sup = sup.max(min_dominance_ratio(&rep, &sigma_l)?);
    }
    assert!(sup <= 1.0 + 1e-9, "gamma_sigma exceeded 1: {sup}");
    Ok(sup)
}

/// Step-wise β model for the stochastic stability bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum BetaModel {
    Constant {
        beta_star: f64,
    },
    BernoulliMixture {
        beta_o: f64,
        beta_u: f64,
        gamma_bar: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StochasticBetaModel {
    pub model: BetaModel,
    pub n0: usize,
}

impl StochasticBetaModel {
    /// `β̄* = γ̄β_o + (1−γ̄)β_u`, or `β*` for the constant model.
    pub fn mean_beta(&self) -> f64 {
        match self.model {
            BetaModel::Constant { beta_star } => beta_star,
            BetaModel::BernoulliMixture {
                beta_o,
                beta_u,
                gamma_bar,
            } => gamma_bar * beta_o + (1.0 - gamma_bar) * beta_u,
        }
    }
}

/// `β̄^{n−n0} e0 + 2d/(1−β̄)`; infinity when `β̄ ≥ 1`.
pub fn stochastic_beta_bound(model: &StochasticBetaModel, n: usize, d: usize, e0_maha: f64) -> f64 {
    let b = model.mean_beta();
    if !(b < 1.0) {
        return f64::INFINITY;
    }
    let k = n.saturating_sub(model.n0);
    b.powi(k.min(i32::MAX as usize) as i32) * e0_maha + 2.0 * d as f64 / (1.0 - b)
}
