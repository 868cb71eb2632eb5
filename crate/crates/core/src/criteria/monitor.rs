use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{beta_sequence, Verdict, Witness};
use crate::error::{dim_check, Error, Result};
use crate::filters::{
    drkf_step_blocks, kalman_step_full, rkf_step, DrkfBlocks, DrkfState, KalmanState, RkfState,
};
use crate::matcore::{loewner_leq, min_dominance_ratio, psd_factor, Operator, SymMatrix};
use crate::parallel::{for_each_mut, Execution};
use crate::rng::{standard_normal_vec, stream_rng, STREAM_TRIAL_BASE};
use crate::ssmodel::{CoefficientPath, ScaleSplit, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kalman,
    Drkf,
    Rkf,
}

/// Filter choice with its initial covariance.
#[derive(Clone, Debug)]
pub enum FilterConfig {
    Kalman {
        r0: SymMatrix,
    },
    Drkf {
        r: f64,
        c_l0: SymMatrix,
        v_s0: SymMatrix,
    },
    Rkf {
        r: f64,
        c_l0: SymMatrix,
        d_s: Operator,
    },
}

impl FilterConfig {
    pub fn kind(&self) -> FilterKind {
        match self {
            FilterConfig::Kalman { .. } => FilterKind::Kalman,
            FilterConfig::Drkf { .. } => FilterKind::Drkf,
            FilterConfig::Rkf { .. } => FilterKind::Rkf,
        }
    }
}

/// Everything a filter computes that does not depend on the observations: gains and
/// estimator covariances along one coefficient path.
#[derive(Clone, Debug)]
pub struct CovariancePath {
    pub kind: FilterKind,
    pub split: ScaleSplit,
    /// Full `d×q` gains; DRKF gains vanish on the small-scale rows.
    pub gains: Vec<DMatrix<f64>>,
    /// Estimator covariance at `n = 0..=N`: `R_n`, `C^L_n` or `C⁺_n`.
    pub estimator: Vec<SymMatrix>,
    /// Large-scale block `C_n` (DRKF and RKF).
    pub c_l: Vec<SymMatrix>,
    /// Forecast covariances `Ĉ_{n+1}` (DRKF: large-scale block).
    pub forecasts: Vec<SymMatrix>,
    /// `β_{n+1}` for the RKF.
    pub betas: Vec<f64>,
}

impl CovariancePath {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Coordinates in which the estimator covariance lives.
    pub fn estimator_indices(&self) -> Vec<usize> {
        match self.kind {
            FilterKind::Drkf => self.split.large().to_vec(),
            _ => (0..self.split.dim()).collect(),
        }
    }

    /// Filter means along an observed trajectory.
    pub fn run_means(
        &self,
        path: &CoefficientPath,
        traj: &Trajectory,
        m0: &DVector<f64>,
    ) -> Vec<DVector<f64>> {
        let mut out = vec![m0.clone()];
        for k in 0..self.len().min(traj.len()) {
            let next = advance_mean(
                path,
                &self.gains,
                k,
                out.last().unwrap(),
                &traj.observations[k],
            );
            out.push(next);
        }
        out
    }
}

fn advance_mean(
    path: &CoefficientPath,
    gains: &[DMatrix<f64>],
    k: usize,
    m: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let s = path.step(k);
    let f = s.a().mul_vec(m) + s.b();
    let innov = y - s.h() * &f;
    f + &gains[k] * innov
}

/// Runs the covariance side of a filter once along `path`.
pub fn covariance_path(
    path: &CoefficientPath,
    split: &ScaleSplit,
    cfg: &FilterConfig,
) -> Result<CovariancePath> {
    let d = split.dim();
    let n = path.len();
    let mut out = CovariancePath {
        kind: cfg.kind(),
        split: split.clone(),
        gains: Vec::with_capacity(n),
        estimator: Vec::with_capacity(n + 1),
        c_l: Vec::new(),
        forecasts: Vec::with_capacity(n),
        betas: Vec::new(),
    };
    match cfg {
        FilterConfig::Kalman { r0 } => {
            dim_check("Kalman R0", d, r0.dim())?;
            let mut st = KalmanState {
                mean: DVector::zeros(d),
                cov: r0.clone(),
            };
            out.estimator.push(r0.clone());
            for s in path.iter() {
                let o = kalman_step_full(&st, s, &DVector::zeros(s.obs_dim()))?;
                out.gains.push(o.gain);
                out.forecasts.push(o.forecast_cov);
                out.estimator.push(o.state.cov.clone());
                st = o.state;
            }
        }
        FilterConfig::Drkf { r, c_l0, v_s0 } => {
            let p = split.p();
            let mut st = DrkfState::new(
                split.clone(),
                DVector::zeros(p),
                c_l0.clone(),
                DVector::zeros(d - p),
                v_s0.clone(),
                *r,
            )?;
            out.estimator.push(c_l0.clone());
            out.c_l.push(c_l0.clone());
            for s in path.iter() {
                let blocks = DrkfBlocks::new(s, split)?;
                let o = drkf_step_blocks(&st, &blocks, &DVector::zeros(s.obs_dim()), None)?;
                let mut g = DMatrix::zeros(d, s.obs_dim());
                for (a, &i) in split.large().iter().enumerate() {
                    g.row_mut(i).copy_from(&o.gain_l.row(a));
                }
                out.gains.push(g);
                out.forecasts.push(o.forecast_cov_l);
                out.estimator.push(o.state.c_l.clone());
                out.c_l.push(o.state.c_l.clone());
                st = o.state;
            }
        }
        FilterConfig::Rkf { r, c_l0, d_s } => {
            let mut st = RkfState::new(
                split.clone(),
                DVector::zeros(d),
                c_l0.clone(),
                d_s.clone(),
                *r,
            )?;
            out.estimator.push(st.effective_covariance());
            out.c_l.push(c_l0.clone());
            for s in path.iter() {
                let o = rkf_step(&st, s, &DVector::zeros(s.obs_dim()))?;
                let c_plus = o.state.effective_covariance();
                out.betas.push(beta_sequence(&o.k_c_hat, &c_plus)?);
                out.gains.push(o.gain);
                out.forecasts.push(o.forecast_cov);
                out.c_l.push(o.state.c_l.clone());
                out.estimator.push(c_plus);
                st = o.state;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub exec: Execution,
    /// Estimate `ψ_n` (costs an eigensolve per step).
    pub psi: bool,
}

impl MonteCarloConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            exec: Execution::default(),
            psi: true,
        }
    }
}

/// Per-step Monte Carlo moments over trials sharing one coefficient path.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    /// `λmax` of the whitened error second moment.
    pub psi: Vec<f64>,
    pub psi_se: Vec<f64>,
    /// `𝔼‖e_n‖²` in the estimator metric (not divided by dimension).
    pub maha: Vec<f64>,
    pub maha_se: Vec<f64>,
    /// Dimension of the estimator metric.
    pub maha_dim: usize,
    /// `(1/d)𝔼‖e_n‖²`.
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
}

struct Trial {
    rng: ChaCha8Rng,
    x: DVector<f64>,
    m: DVector<f64>,
    /// Running sum of per-step Mahalanobis errors, for time averages.
    maha_sum: f64,
    mse_sum: f64,
}

/// Result of [`monte_carlo`] including per-trial time averages from `average_from`.
#[derive(Clone, Debug)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub average_from: usize,
    /// Per-trial time average of `‖e_n‖²_C / dim` over `n ≥ average_from`.
    pub trial_maha_avg: Vec<f64>,
    /// Per-trial time average of `‖e_n‖² / d` over `n ≥ average_from`.
    pub trial_mse_avg: Vec<f64>,
}

/// Simulates `trials` truths on the shared `path` (independent noise streams, `X_0 ~ N(m0, P0)`)
/// and runs the filter means in lockstep.
pub fn monte_carlo(
    path: &CoefficientPath,
    cov: &CovariancePath,
    m0: &DVector<f64>,
    p0: &SymMatrix,
    mc: &MonteCarloConfig,
    average_from: usize,
) -> Result<MonteCarloRun> {
    let d = cov.split.dim();
    dim_check("monte_carlo m0", d, m0.len())?;
    dim_check("monte_carlo P0", d, p0.dim())?;
    let n = cov.len().min(path.len());
    let l0 = psd_factor(p0);
    let mut trials: Vec<Trial> = (0..mc.trials)
        .map(|i| {
            let mut rng = stream_rng(mc.seed, STREAM_TRIAL_BASE + i as u64);
            let x = m0 + &l0 * standard_normal_vec(&mut rng, d);
            Trial {
                rng,
                x,
                m: m0.clone(),
                maha_sum: 0.0,
                mse_sum: 0.0,
            }
        })
        .collect();
    let idx = cov.estimator_indices();
    let de = idx.len();
    let t = mc.trials as f64;
    let mut summary = MonteCarloSummary {
        trials: mc.trials,
        maha_dim: de,
        ..Default::default()
    };
    for k in 0..=n {
        if k > 0 {
            let s = path.step(k - 1);
            let gain = &cov.gains[k - 1];
            let f = s.noise_factors();
            for_each_mut(mc.exec, &mut trials, |_, tr| {
                let zs = standard_normal_vec(&mut tr.rng, d);
                let zo = standard_normal_vec(&mut tr.rng, s.obs_dim());
                tr.x = s.a().mul_vec(&tr.x) + s.b() + f.state.mul_vec(&zs);
                let y = s.h() * &tr.x + &f.obs * zo;
                let fm = s.a().mul_vec(&tr.m) + s.b();
                let innov = y - s.h() * &fm;
                tr.m = fm + gain * innov;
            });
        }
        let est = cov.estimator[k].factor().map_err(|_| Error::Singular {
            context: format!("estimator covariance at step {k}"),
        })?;
        let mut e = DMatrix::zeros(de, mc.trials);
        let mut mse = Vec::with_capacity(mc.trials);
        for (j, tr) in trials.iter().enumerate() {
            let err = &tr.x - &tr.m;
            for (a, &i) in idx.iter().enumerate() {
                e[(a, j)] = err[i];
            }
            mse.push(err.norm_squared() / d as f64);
        }
        let w = est.whiten(&e);
        let maha: Vec<f64> = (0..mc.trials).map(|j| w.column(j).norm_squared()).collect();
        if k >= average_from {
            for (j, tr) in trials.iter_mut().enumerate() {
                tr.maha_sum += maha[j];
                tr.mse_sum += mse[j];
            }
        }
        let (mm, ms) = mean_se(&maha);
        let (em, es) = mean_se(&mse);
        summary.maha.push(mm);
        summary.maha_se.push(ms);
        summary.mse.push(em);
        summary.mse_se.push(es);
        if mc.psi {
            let second = SymMatrix::symmetrized(&w * w.transpose() / t);
            let psi = second.max_eigenvalue().max(0.0);
            summary.psi.push(psi);
            summary.psi_se.push(psi * (2.0 / t).sqrt());
        }
    }
    let count = (n + 1).saturating_sub(average_from).max(1) as f64;
    Ok(MonteCarloRun {
        trial_maha_avg: trials
            .iter()
            .map(|tr| tr.maha_sum / count / de as f64)
            .collect(),
        trial_mse_avg: trials.iter().map(|tr| tr.mse_sum / count).collect(),
        summary,
        average_from,
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let t = v.len() as f64;
    let mean = v.iter().sum::<f64>() / t;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
    (mean, (var / t).sqrt())
}

/// `ψ_n` with its band and the RKF `β_n` for the recursion check.
#[derive(Clone, Debug, Serialize)]
pub struct PsiTrace {
    pub psi: Vec<f64>,
    pub psi_se: Vec<f64>,
    pub betas: Vec<f64>,
}

impl PsiTrace {
    /// `ψ_n ≤ 1 + 3·SE` for `n ≥ from`.
    pub fn check_dominated(&self, from: usize) -> Verdict {
        const NAME: &str = "covariance_domination";
        for n in from..self.psi.len() {
            if self.psi[n] > 1.0 + 3.0 * self.psi_se[n] {
                return Verdict::fail(
                    NAME,
                    Witness {
                        step: Some(n),
                        value: self.psi[n],
                        eigenvector: None,
                    },
                );
            }
        }
        Verdict::pass(NAME)
    }

    /// `ψ_{n+1} ≤ max(1, ψ_n β_{n+1}) + 3·SE`.
    pub fn check_recursion(&self) -> Verdict {
        const NAME: &str = "psi_recursion";
        for n in 0..self.psi.len().saturating_sub(1).min(self.betas.len()) {
            let bound = (self.psi[n] * self.betas[n]).max(1.0) + 3.0 * self.psi_se[n + 1];
            if self.psi[n + 1] > bound {
                return Verdict::fail(
                    NAME,
                    Witness {
                        step: Some(n + 1),
                        value: self.psi[n + 1] - bound,
                        eigenvector: None,
                    },
                );
            }
        }
        Verdict::pass(NAME)
    }
}

/// Monte Carlo `ψ_n = λmax(C⁺_n^{-1/2} 𝔼̂[e⊗e] C⁺_n^{-1/2})` with trials sharing `path`.
pub fn covariance_domination_monitor(
    path: &CoefficientPath,
    cov: &CovariancePath,
    m0: &DVector<f64>,
    p0: &SymMatrix,
    mc: &MonteCarloConfig,
) -> Result<PsiTrace> {
    if mc.trials < 100 {
        return Err(Error::TooFewTrials(mc.trials));
    }
    let mut cfg = *mc;
    cfg.psi = true;
    let run = monte_carlo(path, cov, m0, p0, &cfg, 0)?;
    Ok(PsiTrace {
        psi: run.summary.psi,
        psi_se: run.summary.psi_se,
        betas: cov.betas.clone(),
    })
}

/// `‖e_n‖²_C` along one observed trajectory.
pub fn mahalanobis_trace(
    traj: &Trajectory,
    means: &[DVector<f64>],
    cov: &CovariancePath,
) -> Result<Vec<f64>> {
    let idx = cov.estimator_indices();
    traj.states
        .iter()
        .zip(means)
        .zip(&cov.estimator)
        .map(|((x, m), c)| {
            let e = x - m;
            let el = DVector::from_iterator(idx.len(), idx.iter().map(|&i| e[i]));
            crate::matcore::mahalanobis_sq(&el, c)
        })
        .collect()
}

/// Flags `𝔼‖e_n‖² > β*^{n−n0}𝔼‖e_{n0}‖² + 2·dim/(1−β*) + 3·SE` for `n ≥ n0`.
pub fn mahalanobis_monitor(summary: &MonteCarloSummary, beta_star: f64, n0: usize) -> Verdict {
    const NAME: &str = "mahalanobis_dissipation";
    if n0 >= summary.maha.len() {
        return Verdict::pass(NAME);
    }
    let e0 = summary.maha[n0];
    let floor = 2.0 * summary.maha_dim as f64 / (1.0 - beta_star);
    for n in n0..summary.maha.len() {
        let bound = beta_star.powi((n - n0) as i32) * e0 + floor + 3.0 * summary.maha_se[n];
        if summary.maha[n] > bound {
            return Verdict::fail(
                NAME,
                Witness {
                    step: Some(n),
                    value: summary.maha[n] - bound,
                    eigenvector: None,
                },
            );
        }
    }
    Verdict::pass(NAME)
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub beta: Option<f64>,
    pub psi: Option<f64>,
    pub psi_se: Option<f64>,
    pub nu: Option<f64>,
    pub maha_per_dim: Option<f64>,
    pub mse: Option<f64>,
    pub loewner_ok: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DiagnosticsTrace {
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsTrace {
    /// Combines a covariance path, optional Monte Carlo moments and an optional reference
    /// sequence (`r_tilde[n]`, with `bound_n = r·R̃_n + D`).
    pub fn assemble(
        cov: &CovariancePath,
        mc: Option<&MonteCarloSummary>,
        reference: Option<(&[SymMatrix], f64, Option<&SymMatrix>)>,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(cov.estimator.len());
        for n in 0..cov.estimator.len() {
            let beta = if n >= 1 {
                cov.betas.get(n - 1).copied()
            } else {
                None
            };
            let (psi, psi_se, maha, mse) = match mc {
                Some(s) => (
                    s.psi.get(n).copied(),
                    s.psi_se.get(n).copied(),
                    s.maha.get(n).map(|m| m / s.maha_dim as f64),
                    s.mse.get(n).copied(),
                ),
                None => (None, None, None, None),
            };
            let (nu, ok) = match reference {
                Some((rt, r, extra)) if n < rt.len() => {
                    let c = match cov.kind {
                        FilterKind::Rkf => cov.c_l[n].embed(cov.split.large(), cov.split.dim()),
                        FilterKind::Drkf => cov.c_l[n].clone(),
                        FilterKind::Kalman => cov.estimator[n].clone(),
                    };
                    let nu = min_dominance_ratio(&c, &rt[n])?;
                    let mut bound = rt[n].scale(r);
                    if let Some(e) = extra {
                        bound = bound.add(e);
                    }
                    (
                        Some(nu),
                        Some(loewner_leq(&cov.estimator[n], &bound, 1e-8)?),
                    )
                }
                _ => (None, None),
            };
            rows.push(DiagnosticsRow {
                step: n,
                beta,
                psi,
                psi_se,
                nu,
                maha_per_dim: maha,
                mse,
                loewner_ok: ok,
            });
        }
        Ok(Self { rows })
    }

    /// Columns: `step, beta, psi, psi_se, nu, maha_per_dim, mse, loewner_ok`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        fn f(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        writeln!(w, "step,beta,psi,psi_se,nu,maha_per_dim,mse,loewner_ok")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.step,
                f(r.beta),
                f(r.psi),
                f(r.psi_se),
                f(r.nu),
                f(r.maha_per_dim),
                f(r.mse),
                r.loewner_ok.map(|b| b.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}
