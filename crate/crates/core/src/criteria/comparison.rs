use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::kalman_update;
use crate::matcore::{loewner_leq, min_dominance_ratio, Operator, SymMatrix};
use crate::reference::{inflate_rkf_step, stationary_covariance, DEFAULT_MAX_ITER};
use crate::ssmodel::{CoefficientPath, ScaleSplit, SystemStep};

/// Upper bound on the Kalman covariance `R_n` from the estimator that inverts the
/// observability Gramian over `[m, n]`. Observation `Y_k` (`k = m..=n`) sees `X_k`
/// through step `k−1`, so `m ≥ 1` and `n ≤ path.len()`. `r_hat_m_inv = None` means no prior.
///
/// The bound is `Σ_j M_j Σ_{j−1} M_jᵀ + Φ_n 𝒦⁻¹ Φ_nᵀ` with `M_j = Φ_{n←j} − Φ_n 𝒦⁻¹ P_j`,
/// which needs no inverse of `A`.
pub fn gramian_bound(
    path: &CoefficientPath,
    m: usize,
    n: usize,
    r_hat_m_inv: Option<&SymMatrix>,
) -> Result<SymMatrix> {
    if !(1 <= m && m <= n && n <= path.len()) {
        return Err(Error::InvalidParameter(format!(
            "gramian window [{m},{n}] invalid for a path of {} steps",
            path.len()
        )));
    }
    let d = path.step(0).state_dim();
    let mut phis = Vec::with_capacity(n - m + 1);
    phis.push(DMatrix::<f64>::identity(d, d));
    for k in m..n {
        let next = path.step(k).a().mul_dense(phis.last().unwrap());
        phis.push(next);
    }
    // L_k = Φ_kᵀ Hᵀ σ⁻¹ H for the step observing X_k
    let mut lefts = Vec::with_capacity(phis.len());
    let mut info = r_hat_m_inv.map_or_else(|| DMatrix::zeros(d, d), |r| r.as_matrix().clone());
    for (i, phi) in phis.iter().enumerate() {
        let s = path.step(m + i - 1);
        let f = s.obs_noise().factor()?;
        let l = phi.transpose() * s.h().transpose() * f.solve(s.h());
        info += &l * phi;
        lefts.push(l);
    }
    let info = SymMatrix::symmetrized(info);
    let info_f = info.factor().map_err(|_| Error::Singular {
        context: "observability Gramian plus prior information".into(),
    })?;
    let phi_n = phis.last().unwrap();
    let k_inv_phi_t = info_f.solve(&phi_n.transpose());
    let mut bound = phi_n * &k_inv_phi_t;

    let mut t = lefts[n - m].clone();
    let mut phi_from = DMatrix::<f64>::identity(d, d);
    for j in (m + 1..=n).rev() {
        if j < n {
            let at = path.step(j).a().transpose();
            t = &lefts[j - m] + at.dense_mul_t(&t);
            phi_from = at.dense_mul_t(&phi_from);
        }
        let mj = &phi_from - phi_n * info_f.solve(&t);
        let w = path.step(j - 1).sigma();
        bound += w.dense_mul_t(&mj) * mj.transpose();
    }
    Ok(SymMatrix::symmetrized(bound))
}

/// Kalman covariance at `n` started from the forecast `R̂_m` (before observing `Y_m`).
pub fn kalman_from_forecast(
    path: &CoefficientPath,
    m: usize,
    n: usize,
    r_hat_m: &SymMatrix,
) -> Result<SymMatrix> {
    if !(1 <= m && m <= n && n <= path.len()) {
        return Err(Error::InvalidParameter(format!("window [{m},{n}] invalid")));
    }
    let s = path.step(m - 1);
    let mut r = kalman_update(r_hat_m, s.h(), s.obs_noise())?;
    for k in m..n {
        let s = path.step(k);
        let f = SymMatrix::symmetrized(s.a().sandwich(&r).into_matrix() + s.sigma().to_dense());
        r = kalman_update(&f, s.h(), s.obs_noise())?;
    }
    Ok(r)
}

fn comparison_block(step: &SystemStep) -> Result<SymMatrix> {
    let d = step.state_dim();
    let a = step.a().to_dense();
    let f = step.obs_noise().factor()?;
    let info = step.h().transpose() * f.solve(step.h());
    let sigma = step.sigma().to_dense();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&sigma);
    m.view_mut((0, d), (d, d)).copy_from(&a);
    m.view_mut((d, 0), (d, d)).copy_from(&a.transpose());
    m.view_mut((d, d), (d, d)).copy_from(&(-info));
    Ok(SymMatrix::symmetrized(m))
}

/// Block test `[[Σ, A],[Aᵀ, −Hᵀσ⁻¹H]] ⪯ [[Σ', A'],[A'ᵀ, −H'ᵀσ'⁻¹H']]`, which makes the
/// forecast recursion `R̂ ↦ A𝒦(R̂)Aᵀ + Σ` order preserving between the two systems.
pub fn fj96_compare(step: &SystemStep, step_prime: &SystemStep) -> Result<bool> {
    crate::error::dim_check("fj96_compare", step.state_dim(), step_prime.state_dim())?;
    loewner_leq(
        &comparison_block(step)?,
        &comparison_block(step_prime)?,
        1e-10,
    )
}

/// Co-iterates both forecast recursions; returns the first step where `R̂_n ⪯ R̂'_n` fails.
pub fn co_iterate_forecasts(
    step: &SystemStep,
    step_prime: &SystemStep,
    r_hat_1: &SymMatrix,
    r_hat_1_prime: &SymMatrix,
    n: usize,
) -> Result<Option<usize>> {
    let advance = |s: &SystemStep, r: &SymMatrix| -> Result<SymMatrix> {
        let post = kalman_update(r, s.h(), s.obs_noise())?;
        Ok(SymMatrix::symmetrized(
            s.a().sandwich(&post).into_matrix() + s.sigma().to_dense(),
        ))
    };
    let (mut r, mut rp) = (r_hat_1.clone(), r_hat_1_prime.clone());
    for k in 1..=n {
        if !loewner_leq(&r, &rp, 1e-9)? {
            return Ok(Some(k));
        }
        r = advance(step, &r)?;
        rp = advance(step_prime, &rp)?;
    }
    Ok(None)
}

/// `(1/σ)(1 − 1/ρ²) ≥ C(1 − √r')² / (ρ² − r'(1+c))`.
pub fn rho_bound_check(
    c: f64,
    c_const: f64,
    r_prime: f64,
    sigma_scalar: f64,
    rho: f64,
) -> Result<bool> {
    let denom = rho * rho - r_prime * (1.0 + c);
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho^2 = {} does not exceed r'(1+c) = {}",
            rho * rho,
            r_prime * (1.0 + c)
        )));
    }
    let lhs = (1.0 - 1.0 / (rho * rho)) / sigma_scalar;
    let rhs = c_const * (1.0 - r_prime.sqrt()).powi(2) / denom;
    Ok(lhs >= rhs)
}

/// Smallest ρ passing [`rho_bound_check`], by bisection (the check is monotone in ρ).
pub fn min_certified_rho(c: f64, c_const: f64, r_prime: f64, sigma_scalar: f64) -> f64 {
    let mut lo = (r_prime * (1.0 + c)).sqrt();
    let mut hi = lo.max(1.0) * 2.0;
    while !rho_bound_check(c, c_const, r_prime, sigma_scalar, hi).unwrap_or(false) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rho_bound_check(c, c_const, r_prime, sigma_scalar, mid).unwrap_or(false) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, Serialize)]
pub struct RhoDominance {
    /// Minimal `c` with `A D_S Aᵀ ⪯ cΣ`.
    pub c: f64,
    /// Minimal `C` with `AᵀΣ⁻¹A ⪯ C·Hᵀσ⁻¹H` (after whitening `σ` to `I`).
    pub c_const: f64,
    pub rho: f64,
    pub bound_holds: bool,
    /// `R̃ ⪯ ρ²R` on the stationary solutions, evaluated only when the bound holds.
    pub dominance: Option<bool>,
}

/// Derives the hypotheses' constants from a constant step, applies [`rho_bound_check`] and,
/// if it passes, compares the stationary reference and Kalman covariances.
pub fn rho_dominance_check(
    step: &SystemStep,
    split: &ScaleSplit,
    d_s: &Operator,
    r_prime: f64,
    rho: f64,
) -> Result<RhoDominance> {
    let psi = step
        .obs_noise()
        .factor()?
        .inverse()
        .sqrt_psd()
        .into_matrix();
    let step = step.transform_observation(&psi)?;
    let a = step.a().to_dense();
    let sigma = step.sigma_sym();
    let sigma_f = sigma.factor()?;
    let d_emb = d_s.embed(split.small(), split.dim()).to_sym();
    let c = min_dominance_ratio(&d_emb.congruence(&a), &sigma)?;
    let a_si_a = SymMatrix::symmetrized(a.transpose() * sigma_f.solve(&a));
    let hth = SymMatrix::symmetrized(step.h().transpose() * step.h());
    let c_const = min_dominance_ratio(&a_si_a, &hth)?;
    let bound_holds = rho_bound_check(c, c_const, r_prime, 1.0, rho).unwrap_or(false);
    let dominance = if bound_holds {
        let tol = crate::reference::DEFAULT_STATIONARY_TOL;
        let inflated = inflate_rkf_step(&step, split, d_s, r_prime)?;
        let rt = stationary_covariance(&inflated, tol, DEFAULT_MAX_ITER)?.r_tilde;
        let r = stationary_covariance(&step, tol, DEFAULT_MAX_ITER)?.r_tilde;
        Some(loewner_leq(&rt, &r.scale(rho * rho), 1e-9)?)
    } else {
        None
    };
    Ok(RhoDominance {
        c,
        c_const,
        rho,
        bound_holds,
        dominance,
    })
}
