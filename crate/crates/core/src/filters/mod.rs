//! Optimal Kalman filter and the two reduced filters.
//!
//! Innovations are formed against the forecast mean `Am + B` in every filter.

mod drkf;
mod rkf;
mod trace;

pub use drkf::{drkf_step, drkf_step_blocks, DrkfBlocks, DrkfOutput, DrkfState, SmallScaleCache};
pub use rkf::{rkf_step, rkf_step_fast, RkfOutput, RkfState};
pub use trace::{FilterTrace, FilterTraceRow};

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::matcore::SymMatrix;
use crate::ssmodel::SystemStep;

/// Posterior covariance and gain of one Kalman update.
#[derive(Clone, Debug)]
pub struct KalmanUpdate {
    pub posterior: SymMatrix,
    /// `K = CHᵀ(σ + HCHᵀ)⁻¹`.
    pub gain: DMatrix<f64>,
}

/// `𝒦(C) = C − CHᵀ(σ + HCHᵀ)⁻¹HC` together with the gain.
pub fn kalman_update_full(
    c: &SymMatrix,
    h: &DMatrix<f64>,
    sigma: &SymMatrix,
) -> Result<KalmanUpdate> {
    dim_check("kalman_update H columns", c.dim(), h.ncols())?;
    dim_check("kalman_update sigma", h.nrows(), sigma.dim())?;
    let hc = h * c.as_matrix();
    let s = SymMatrix::symmetrized(&hc * h.transpose() + sigma.as_matrix());
    let f = s.factor().map_err(|_| Error::Singular {
        context: "sigma + H C H^T".into(),
    })?;
    let x = f.solve(&hc);
    let posterior = SymMatrix::symmetrized(c.as_matrix() - hc.transpose() * &x);
    Ok(KalmanUpdate {
        posterior,
        gain: x.transpose(),
    })
}

/// `𝒦(C)`.
pub fn kalman_update(c: &SymMatrix, h: &DMatrix<f64>, sigma: &SymMatrix) -> Result<SymMatrix> {
    Ok(kalman_update_full(c, h, sigma)?.posterior)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

/// One step with diagnostics retained.
#[derive(Clone, Debug)]
pub struct KalmanOutput {
    pub state: KalmanState,
    pub forecast_cov: SymMatrix,
    pub gain: DMatrix<f64>,
}

pub fn kalman_step_full(
    state: &KalmanState,
    step: &SystemStep,
    y: &DVector<f64>,
) -> Result<KalmanOutput> {
    dim_check("kalman_step mean", step.state_dim(), state.mean.len())?;
    dim_check("kalman_step y", step.obs_dim(), y.len())?;
    let f = step.a().mul_vec(&state.mean) + step.b();
    let forecast_cov = SymMatrix::symmetrized(
        step.a().sandwich(&state.cov).into_matrix() + step.sigma().to_dense(),
    );
    let up = kalman_update_full(&forecast_cov, step.h(), step.obs_noise())?;
    let innov = y - step.h() * &f;
    let mean = f + &up.gain * innov;
    Ok(KalmanOutput {
        state: KalmanState {
            mean,
            cov: up.posterior,
        },
        forecast_cov,
        gain: up.gain,
    })
}

pub fn kalman_step(
    state: &KalmanState,
    step: &SystemStep,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    Ok(kalman_step_full(state, step, y)?.state)
}
