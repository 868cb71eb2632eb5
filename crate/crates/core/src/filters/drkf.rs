use nalgebra::{DMatrix, DVector};

use super::kalman_update_full;
use crate::error::{dim_check, Error, Result};
use crate::matcore::{Operator, SymMatrix};
use crate::ssmodel::{ScaleSplit, SystemStep};

/// DRKF belief: Kalman on the large scales, unfiltered statistics on the small ones.
#[derive(Clone, Debug)]
pub struct DrkfState {
    pub split: ScaleSplit,
    pub mu_l: DVector<f64>,
    pub c_l: SymMatrix,
    pub mu_s: DVector<f64>,
    pub v_s: SymMatrix,
    pub r: f64,
}

impl DrkfState {
    pub fn new(
        split: ScaleSplit,
        mu_l: DVector<f64>,
        c_l: SymMatrix,
        mu_s: DVector<f64>,
        v_s: SymMatrix,
        r: f64,
    ) -> Result<Self> {
        if !(r > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "DRKF inflation r must exceed 1, got {r}"
            )));
        }
        let (p, s) = (split.p(), split.small().len());
        dim_check("DRKF mu_L", p, mu_l.len())?;
        dim_check("DRKF C_L", p, c_l.dim())?;
        dim_check("DRKF mu_S", s, mu_s.len())?;
        dim_check("DRKF V_S", s, v_s.dim())?;
        Ok(Self {
            split,
            mu_l,
            c_l,
            mu_s,
            v_s,
            r,
        })
    }

    /// Full-dimensional mean.
    pub fn mean(&self) -> DVector<f64> {
        self.split.join(&self.mu_l, &self.mu_s)
    }
}

/// The scale blocks of a decoupled step.
#[derive(Clone, Debug)]
pub struct DrkfBlocks {
    pub a_l: Operator,
    pub a_s: Operator,
    pub b_l: DVector<f64>,
    pub b_s: DVector<f64>,
    pub sigma_l: SymMatrix,
    pub sigma_s: Operator,
    pub h_l: DMatrix<f64>,
    pub h_s: DMatrix<f64>,
    pub obs_noise: SymMatrix,
}

impl DrkfBlocks {
    pub fn new(step: &SystemStep, split: &ScaleSplit) -> Result<Self> {
        dim_check("DRKF split", step.state_dim(), split.dim())?;
        if !step.is_block_decoupled(split) {
            return Err(Error::Structure(
                "DRKF requires A and Sigma to be block diagonal in the scale split".into(),
            ));
        }
        let (l, s) = (split.large(), split.small());
        Ok(Self {
            a_l: step.a().select(l, l),
            a_s: step.a().select(s, s),
            b_l: split.gather_large(step.b()),
            b_s: split.gather_small(step.b()),
            sigma_l: step.sigma().select(l, l).to_sym(),
            sigma_s: step.sigma().select(s, s),
            h_l: split.columns(step.h(), l),
            h_s: split.columns(step.h(), s),
            obs_noise: step.obs_noise().clone(),
        })
    }

    /// `V^S' = A^S V^S A^Sᵀ + Σ^S`.
    pub fn propagate_small(&self, v_s: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(self.a_s.sandwich(v_s).into_matrix() + self.sigma_s.to_dense())
    }

    /// `σ^L = σ + H^S V^S' H^Sᵀ`.
    pub fn representation_noise(&self, v_s_next: &SymMatrix) -> SymMatrix {
        self.obs_noise.add(&v_s_next.congruence(&self.h_s))
    }
}

/// Small-scale covariance and `σ^L` held fixed across steps (constant coefficients at
/// small-scale stationarity), which removes the `d²` term from each step.
#[derive(Clone, Debug)]
pub struct SmallScaleCache {
    pub v_s: SymMatrix,
    pub obs_noise_l: SymMatrix,
}

impl SmallScaleCache {
    pub fn new(blocks: &DrkfBlocks, v_s_stationary: SymMatrix) -> Self {
        let obs_noise_l = blocks.representation_noise(&v_s_stationary);
        Self {
            v_s: v_s_stationary,
            obs_noise_l,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DrkfOutput {
    pub state: DrkfState,
    /// Large-scale forecast `Ĉ^L`.
    pub forecast_cov_l: SymMatrix,
    /// Large-scale gain `K^L`.
    pub gain_l: DMatrix<f64>,
    /// `σ^L` used in the update.
    pub obs_noise_l: SymMatrix,
}

/// One DRKF step on precomputed blocks; with `cache` the small-scale covariance is not propagated.
pub fn drkf_step_blocks(
    state: &DrkfState,
    blocks: &DrkfBlocks,
    y: &DVector<f64>,
    cache: Option<&SmallScaleCache>,
) -> Result<DrkfOutput> {
    dim_check("drkf_step y", blocks.obs_noise.dim(), y.len())?;
    let mu_s = blocks.a_s.mul_vec(&state.mu_s) + &blocks.b_s;
    let (v_s, obs_noise_l) = match cache {
        Some(c) => (c.v_s.clone(), c.obs_noise_l.clone()),
        None => {
            let v = blocks.propagate_small(&state.v_s);
            let o = blocks.representation_noise(&v);
            (v, o)
        }
    };
    let y_l = y - &blocks.h_s * &mu_s;
    let f_l = blocks.a_l.mul_vec(&state.mu_l) + &blocks.b_l;
    let forecast_cov_l = SymMatrix::symmetrized(
        blocks.a_l.sandwich(&state.c_l).into_matrix() + blocks.sigma_l.as_matrix(),
    );
    let up = kalman_update_full(&forecast_cov_l, &blocks.h_l, &obs_noise_l)?;
    let innov = y_l - &blocks.h_l * &f_l;
    let mu_l = f_l + &up.gain * innov;
    Ok(DrkfOutput {
        state: DrkfState {
            split: state.split.clone(),
            mu_l,
            c_l: up.posterior.scale(state.r),
            mu_s,
            v_s,
            r: state.r,
        },
        forecast_cov_l,
        gain_l: up.gain,
        obs_noise_l,
    })
}

pub fn drkf_step(state: &DrkfState, step: &SystemStep, y: &DVector<f64>) -> Result<DrkfState> {
    let blocks = DrkfBlocks::new(step, &state.split)?;
    Ok(drkf_step_blocks(state, &blocks, y, None)?.state)
}
