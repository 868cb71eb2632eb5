//! TOML experiment configuration. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use twoscale_kf::matcore::Operator;
use twoscale_kf::reference::stationary_unfiltered;
use twoscale_kf::scaling::GridCell;
use twoscale_kf::ssmodel::{CoefficientProcess, ScaleSplit, SystemStep, TwoScaleSystem};
use twoscale_kf::turbulence::{
    build_turbulence_system, drkf_cutoff, intermittent_observation_turbulence, preset,
    rkf_smallscale_prior, ReductionParams, TurbulenceObservation, TurbulenceParams,
    KOLMOGOROV_PRESET,
};
use twoscale_kf::SymMatrix;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub out: Option<PathBuf>,
    pub system: Option<SystemSpec>,
    pub filter: Option<FilterSpec>,
    pub turbulence: Option<TurbulenceSpec>,
    pub bench: Option<BenchSpec>,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    200
}

fn default_horizon() -> usize {
    100
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            trials: default_trials(),
            horizon: default_horizon(),
            out: None,
            system: None,
            filter: None,
            turbulence: None,
            bench: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemSpec {
    /// One-dimensional `x' = a x + ξ`, `y = h x + ζ`, fully filtered.
    Scalar {
        a: f64,
        sigma: f64,
        h: f64,
        noise: f64,
    },
    /// Dense coefficients given row by row.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Option<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
        obs_noise: Vec<Vec<f64>>,
        large: Vec<usize>,
        gamma_bar: Option<f64>,
    },
    /// Stochastic turbulence from a named preset, optionally overriding its parameters.
    Turbulence {
        #[serde(default = "default_preset")]
        preset: String,
        k_max: usize,
        /// Defaults to the cutoff derived for the configured filter.
        cutoff: Option<usize>,
        observation: TurbulenceObservation,
        gamma_bar: Option<f64>,
        params: Option<TurbulenceParams>,
        reduction: Option<ReductionParams>,
    },
}

fn default_preset() -> String {
    KOLMOGOROV_PRESET.into()
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FilterSpec {
    Kalman {},
    Drkf {
        r: Option<f64>,
        /// DRKF cutoff tolerance used when the turbulence cutoff is left open.
        epsilon: Option<f64>,
    },
    Rkf {
        r: Option<f64>,
        r_prime: Option<f64>,
        beta_star: Option<f64>,
        #[serde(default)]
        d_s: DsSource,
    },
}

/// `"auto"` derives the small-scale prior, a list gives it explicitly.
#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
pub enum DsSource {
    #[default]
    #[serde(skip)]
    Auto,
    Keyword(String),
    Values(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceSpec {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_k")]
    pub k_max: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_sigma_o")]
    pub sigma_o: f64,
    pub gamma_bar: Option<f64>,
    /// Extra DRKF tolerances to tabulate.
    #[serde(default)]
    pub epsilon_sweep: Vec<f64>,
    pub params: Option<TurbulenceParams>,
    pub reduction: Option<ReductionParams>,
    /// Solve the inflated Riccati equation to confirm the RKF prior (dense, so keep K small).
    #[serde(default)]
    pub verify: bool,
}

fn default_k() -> usize {
    200
}

fn default_epsilon() -> f64 {
    0.2
}

fn default_sigma_o() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// `[d, q, p]` cells; the default grid when absent.
    pub grid: Option<Vec<[usize; 3]>>,
}

fn default_reps() -> usize {
    5
}

impl BenchSpec {
    pub fn cells(&self) -> Option<Vec<GridCell>> {
        self.grid
            .as_ref()
            .map(|g| g.iter().map(|&[d, q, p]| GridCell::new(d, q, p)).collect())
    }
}

pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            bail!("horizon must be positive");
        }
        if let Some(FilterSpec::Rkf {
            d_s: DsSource::Keyword(k),
            ..
        }) = &self.filter
        {
            if k != "auto" {
                bail!("filter.d_s must be \"auto\" or a list of values, got \"{k}\"");
            }
        }
        Ok(())
    }

    pub fn filter(&self) -> &FilterSpec {
        self.filter.as_ref().unwrap_or(&FilterSpec::Kalman {})
    }
}

/// Inflation constants after defaults, taken from the turbulence preset when there is one.
#[derive(Clone, Copy, Debug)]
pub struct Reduction {
    pub r: f64,
    pub r_prime: f64,
    pub beta_star: f64,
}

/// Fully built experiment: system, filter settings and initial statistics.
pub struct Built {
    pub system: TwoScaleSystem,
    /// Stationary (or otherwise chosen) covariance used for `X_0` and the filter priors.
    pub prior: SymMatrix,
    pub reduction: Reduction,
    pub d_s: Option<Operator>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("{name} must be a non-empty rectangular array of rows");
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn sym(name: &str, rows: &[Vec<f64>]) -> Result<SymMatrix> {
    SymMatrix::new(matrix(name, rows)?).with_context(|| format!("{name} must be symmetric"))
}

fn reduction_of(filter: &FilterSpec, base: Option<ReductionParams>) -> Reduction {
    let base = base.unwrap_or(ReductionParams {
        r: 1.2,
        r_prime: 1.21,
        beta_star: 0.9,
    });
    match *filter {
        FilterSpec::Kalman {} => Reduction {
            r: base.r,
            r_prime: base.r_prime,
            beta_star: base.beta_star,
        },
        FilterSpec::Drkf { r, .. } => Reduction {
            r: r.unwrap_or(base.r),
            r_prime: base.r_prime,
            beta_star: base.beta_star,
        },
        FilterSpec::Rkf {
            r,
            r_prime,
            beta_star,
            ..
        } => Reduction {
            r: r.unwrap_or(base.r),
            r_prime: r_prime.unwrap_or(base.r_prime),
            beta_star: beta_star.unwrap_or(base.beta_star),
        },
    }
}

/// `2r'V_kk/(β*r − 1)` on the small scales, the turbulence prior written in terms of the
/// stationary variance `V_kk = ½E_k`.
fn auto_prior(v: &SymMatrix, split: &ScaleSplit, red: &Reduction) -> Result<Operator> {
    if !(red.beta_star * red.r > 1.0) {
        bail!("automatic D_S needs beta* r > 1");
    }
    let scale = 2.0 * red.r_prime / (red.beta_star * red.r - 1.0);
    let vals: Vec<f64> = split
        .small()
        .iter()
        .map(|&i| scale * v.as_matrix()[(i, i)])
        .collect();
    Ok(Operator::diagonal(&vals))
}

fn explicit_prior(values: &[f64], split: &ScaleSplit) -> Result<Operator> {
    if values.len() != split.small().len() {
        bail!(
            "filter.d_s has {} entries but there are {} small-scale coordinates",
            values.len(),
            split.small().len()
        );
    }
    if values.iter().any(|&v| !(v >= 0.0)) {
        bail!("filter.d_s entries must be non-negative");
    }
    Ok(Operator::diagonal(values))
}

fn stationary_or_identity(step: &SystemStep) -> SymMatrix {
    stationary_unfiltered(step.a(), step.sigma(), 1e-12, 100_000)
        .unwrap_or_else(|_| SymMatrix::identity(step.state_dim()))
}

pub fn build(cfg: &ExperimentConfig) -> Result<Built> {
    let Some(spec) = &cfg.system else {
        bail!("missing [system] table");
    };
    let filter = cfg.filter();
    match spec {
        SystemSpec::Scalar { a, sigma, h, noise } => {
            let step = SystemStep::dense(
                DMatrix::from_element(1, 1, *a),
                DVector::zeros(1),
                SymMatrix::from_diagonal(&[*sigma]),
                DMatrix::from_element(1, 1, *h),
                SymMatrix::from_diagonal(&[*noise]),
            )?;
            if !matches!(filter, FilterSpec::Kalman {}) {
                bail!("the scalar system has no small scales; use filter kind = \"kalman\"");
            }
            let prior = stationary_or_identity(&step);
            let system = TwoScaleSystem::constant(step, ScaleSplit::leading(1, 1)?)?;
            Ok(Built {
                system,
                prior,
                reduction: reduction_of(filter, None),
                d_s: None,
            })
        }
        SystemSpec::Explicit {
            a,
            b,
            sigma,
            h,
            obs_noise,
            large,
            gamma_bar,
        } => {
            let a = matrix("system.a", a)?;
            let d = a.nrows();
            let b = match b {
                Some(v) => DVector::from_vec(v.clone()),
                None => DVector::zeros(d),
            };
            let step = SystemStep::dense(
                a,
                b,
                sym("system.sigma", sigma)?,
                matrix("system.h", h)?,
                sym("system.obs_noise", obs_noise)?,
            )?;
            let split = ScaleSplit::new(d, large.clone())?;
            let prior = stationary_or_identity(&step);
            let reduction = reduction_of(filter, None);
            let d_s = match filter {
                FilterSpec::Rkf { d_s, .. } => Some(match d_s {
                    DsSource::Values(v) => explicit_prior(v, &split)?,
                    _ => auto_prior(&prior, &split, &reduction)?,
                }),
                _ => None,
            };
            let process = match gamma_bar {
                Some(g) => CoefficientProcess::bernoulli(step, *g)?,
                None => CoefficientProcess::constant(step),
            };
            Ok(Built {
                system: TwoScaleSystem::new(process, split)?,
                prior,
                reduction,
                d_s,
            })
        }
        SystemSpec::Turbulence {
            preset: name,
            k_max,
            cutoff,
            observation,
            gamma_bar,
            params,
            reduction,
        } => {
            let (mut p, mut red) = preset(name, *k_max)?;
            if let Some(o) = params {
                p = o.clone();
            }
            if let Some(o) = reduction {
                red = *o;
            }
            let reduction = reduction_of(filter, Some(red));
            let red_eff = ReductionParams {
                r: reduction.r,
                r_prime: reduction.r_prime,
                beta_star: reduction.beta_star,
            };
            let (n, d_s) = match filter {
                FilterSpec::Rkf { d_s, .. } => match d_s {
                    DsSource::Values(v) => {
                        let n = cutoff.context("explicit filter.d_s needs system.cutoff")?;
                        let split = twoscale_kf::turbulence::cutoff_split(&p, n)?;
                        (n, Some(explicit_prior(v, &split)?))
                    }
                    _ => {
                        let prior = rkf_smallscale_prior(&p, &red_eff)?;
                        if let Some(c) = cutoff {
                            if *c != prior.n {
                                bail!(
                                    "automatic D_S is derived for cutoff {}; system.cutoff = {c} conflicts",
                                    prior.n
                                );
                            }
                        }
                        (prior.n, Some(prior.d_s()))
                    }
                },
                FilterSpec::Drkf { epsilon, .. } => match cutoff {
                    Some(c) => (*c, None),
                    None => (drkf_cutoff(&p, epsilon.unwrap_or(0.2), reduction.r)?, None),
                },
                FilterSpec::Kalman {} => (cutoff.unwrap_or(1), None),
            };
            if n > p.k_max {
                bail!("cutoff {n} exceeds K = {}", p.k_max);
            }
            let system = match gamma_bar {
                Some(g) => intermittent_observation_turbulence(&p, observation, n, *g)?,
                None => build_turbulence_system(&p, observation, n)?,
            };
            Ok(Built {
                system,
                prior: SymMatrix::from_diagonal(&p.stationary_diagonal()),
                reduction,
                d_s,
            })
        }
    }
}
