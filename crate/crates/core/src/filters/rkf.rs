use nalgebra::{DMatrix, DVector};

use super::kalman_update_full;
use crate::error::{dim_check, Error, Result};
use crate::matcore::{Operator, SymMatrix};
use crate::ssmodel::{ScaleSplit, SystemStep};

/// RKF belief `N(μ, C + D_S)`. `C` is carried as its `p×p` large-scale block.
#[derive(Clone, Debug)]
pub struct RkfState {
    pub split: ScaleSplit,
    pub mu: DVector<f64>,
    pub c_l: SymMatrix,
    /// Small-scale prior on the small-scale coordinates.
    pub d_s: Operator,
    pub r: f64,
}

impl RkfState {
    pub fn new(
        split: ScaleSplit,
        mu: DVector<f64>,
        c_l: SymMatrix,
        d_s: Operator,
        r: f64,
    ) -> Result<Self> {
        if !(r > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "RKF inflation r must exceed 1, got {r}"
            )));
        }
        dim_check("RKF mu", split.dim(), mu.len())?;
        dim_check("RKF C", split.p(), c_l.dim())?;
        dim_check("RKF D_S", split.small().len(), d_s.nrows())?;
        dim_check("RKF D_S", split.small().len(), d_s.ncols())?;
        Ok(Self {
            split,
            mu,
            c_l,
            d_s,
            r,
        })
    }

    pub fn d_s_full(&self) -> SymMatrix {
        self.d_s
            .embed(self.split.small(), self.split.dim())
            .to_sym()
    }

    /// `C` embedded in the full space.
    pub fn c_full(&self) -> SymMatrix {
        self.c_l.embed(self.split.large(), self.split.dim())
    }

    /// `C⁺ = C + D_S`.
    pub fn effective_covariance(&self) -> SymMatrix {
        self.c_full().add(&self.d_s_full())
    }
}

#[derive(Clone, Debug)]
pub struct RkfOutput {
    pub state: RkfState,
    /// `Ĉ = A C⁺ Aᵀ + Σ`.
    pub forecast_cov: SymMatrix,
    /// `𝒦(Ĉ)`, needed for the β ratio.
    pub k_c_hat: SymMatrix,
    pub gain: DMatrix<f64>,
}

/// Direct RKF step.
pub fn rkf_step(state: &RkfState, step: &SystemStep, y: &DVector<f64>) -> Result<RkfOutput> {
    dim_check("rkf_step dim", step.state_dim(), state.split.dim())?;
    dim_check("rkf_step y", step.obs_dim(), y.len())?;
    let f = step.a().mul_vec(&state.mu) + step.b();
    let c_plus = state.effective_covariance();
    let forecast_cov =
        SymMatrix::symmetrized(step.a().sandwich(&c_plus).into_matrix() + step.sigma().to_dense());
    let up = kalman_update_full(&forecast_cov, step.h(), step.obs_noise())?;
    let mu = &f + &up.gain * (y - step.h() * &f);
    let c_l = up.posterior.principal(state.split.large()).scale(state.r);
    Ok(RkfOutput {
        state: RkfState {
            split: state.split.clone(),
            mu,
            c_l,
            d_s: state.d_s.clone(),
            r: state.r,
        },
        forecast_cov,
        k_c_hat: up.posterior,
        gain: up.gain,
    })
}

/// RKF step through the Woodbury identity. With `Σ' = Σ + A D_S Aᵀ` and
/// `Q = σ + HΣ'Hᵀ`, the innovation covariance is `Q + G C Gᵀ` with `G = H A_{·L}`,
/// inverted via a `p×p` capacitance matrix. No `d×d` matrix is formed when `A` and `Σ`
/// are sparse.
pub fn rkf_step_fast(state: &RkfState, step: &SystemStep, y: &DVector<f64>) -> Result<RkfState> {
    let split = &state.split;
    let d = split.dim();
    dim_check("rkf_step_fast dim", step.state_dim(), d)?;
    dim_check("rkf_step_fast y", step.obs_dim(), y.len())?;
    let (l, all): (&[usize], Vec<usize>) = (split.large(), (0..d).collect());
    let a = step.a();
    let h = step.h();

    let f = a.mul_vec(&state.mu) + step.b();
    let d_emb = state.d_s.embed(split.small(), d);
    let sigma_p = step.sigma().add(&a.mul(&d_emb).mul(&a.transpose()));

    // H Σ' (= (Σ'Hᵀ)ᵀ), q×d
    let h_sp = sigma_p.dense_mul_t(h);
    let q_mat = SymMatrix::symmetrized(&h_sp * h.transpose() + step.obs_noise().as_matrix());
    let q_f = q_mat.factor().map_err(|_| Error::Singular {
        context: "sigma + H Sigma' H^T".into(),
    })?;

    let a_l = a.select(&all, l);
    let g = a_l.transpose().dense_mul_t(h);
    let c = state.c_l.as_matrix();
    let c_gt = c * g.transpose();
    // Ĉ Hᵀ, d×q
    let u = a_l.mul_dense(&c_gt) + h_sp.transpose();

    let w = &g * state.c_l.sqrt_psd().as_matrix();
    let qinv_w = q_f.solve(&w);
    let p = l.len();
    let cap = SymMatrix::symmetrized(DMatrix::identity(p, p) + w.transpose() * &qinv_w);
    let cap_f = cap.factor()?;
    let solve_s = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let qm = q_f.solve(m);
        let corr = cap_f.solve(&(w.transpose() * &qm));
        qm - &qinv_w * corr
    };

    let innov = y - h * &f;
    let wv = solve_s(&DMatrix::from_column_slice(
        innov.len(),
        1,
        innov.as_slice(),
    ));
    let mu = f + &u * wv.column(0);

    let a_ll = a.select(l, l);
    let c_hat_ll = a_ll.sandwich(&state.c_l).into_matrix() + sigma_p.select(l, l).to_dense();
    let u_l = DMatrix::from_fn(p, u.ncols(), |i, j| u[(l[i], j)]);
    let post = c_hat_ll - &u_l * solve_s(&u_l.transpose());
    Ok(RkfState {
        split: split.clone(),
        mu,
        c_l: SymMatrix::symmetrized(post * state.r),
        d_s: state.d_s.clone(),
        r: state.r,
    })
}
