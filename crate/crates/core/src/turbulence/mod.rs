//! Fourier-domain linearized stochastic turbulence on the circle.
//!
//! Each wavenumber `k` is an Ornstein-Uhlenbeck pair `(u^r_k, u^i_k)` with damping
//! `γ_k = γ₀ + ν|k|^α` and energy `E_k = E₀|k|^{−β}`. Sampling at interval `h` gives an exact
//! linear Gaussian system. State coordinates are ordered by wavenumber:
//! index 0 holds `u_0`, index `2k−1` holds `u^r_k` and index `2k` holds `u^i_k`, so the
//! large scales `|k| < N` are the leading `2N−1` coordinates.

mod cutoffs;

pub use cutoffs::{
    drkf_cutoff, equispaced_gamma_sigma, intermittent_drkf_cutoff, intermittent_rkf_cutoff,
    rkf_cutoff_base10, rkf_smallscale_prior, verify_rkf_prior, RkfPrior,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Csr, SymMatrix};
use crate::ssmodel::{CoefficientProcess, ScaleSplit, SystemStep, TwoScaleSystem};

/// Phase speed `ω_k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Dispersion {
    #[default]
    None,
    /// `ω_k = c·k`.
    Linear { speed: f64 },
    /// `ω_k` listed for `k = 0..=K`.
    Table { omega: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceParams {
    #[serde(default)]
    pub gamma0: f64,
    pub nu: f64,
    pub alpha: f64,
    pub e0: f64,
    pub beta_spec: f64,
    pub h: f64,
    /// Galerkin truncation `K`; the state has `2K+1` coordinates.
    pub k_max: usize,
    #[serde(default)]
    pub dispersion: Dispersion,
    /// Constant forcing `(f^r_k, f^i_k)` for `k = 0..`; missing modes are unforced.
    #[serde(default)]
    pub forcing: Vec<[f64; 2]>,
}

/// Inflation and contraction targets that accompany a preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionParams {
    pub r: f64,
    pub r_prime: f64,
    pub beta_star: f64,
}

pub const KOLMOGOROV_PRESET: &str = "kolmogorov-mg13";

/// Kolmogorov spectrum setup: `α = 2`, `β = 5/3`, `h = 0.1`, `ν = 0.01`, `E₀ = 1`, with
/// `r = 1.2`, `r' = 1.21`, `β* = 0.9`. `K` is a free choice and is passed in.
pub fn kolmogorov_mg13(k_max: usize) -> (TurbulenceParams, ReductionParams) {
    (
        TurbulenceParams {
            gamma0: 0.0,
            nu: 0.01,
            alpha: 2.0,
            e0: 1.0,
            beta_spec: 5.0 / 3.0,
            h: 0.1,
            k_max,
            dispersion: Dispersion::None,
            forcing: Vec::new(),
        },
        ReductionParams {
            r: 1.2,
            r_prime: 1.21,
            beta_star: 0.9,
        },
    )
}

/// Looks up a preset by name.
pub fn preset(name: &str, k_max: usize) -> Result<(TurbulenceParams, ReductionParams)> {
    match name {
        KOLMOGOROV_PRESET => Ok(kolmogorov_mg13(k_max)),
        other => Err(Error::InvalidParameter(format!(
            "unknown turbulence preset '{other}'"
        ))),
    }
}

impl TurbulenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma0 >= 0.0
            && self.nu > 0.0
            && self.alpha > 0.0
            && self.e0 > 0.0
            && self.beta_spec >= 0.0
            && self.h > 0.0
            && self.k_max >= 1;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid turbulence parameters: {self:?}"
            )));
        }
        if let Dispersion::Table { omega } = &self.dispersion {
            if omega.len() != self.k_max + 1 {
                return Err(Error::InvalidParameter(format!(
                    "dispersion table has {} entries, expected {}",
                    omega.len(),
                    self.k_max + 1
                )));
            }
        }
        if self.forcing.len() > self.k_max + 1 {
            return Err(Error::InvalidParameter(
                "more forcing entries than modes".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.k_max + 1
    }

    /// The zero mode uses `|k| = 1` so that it is damped and has finite energy.
    fn wavenumber(k: usize) -> f64 {
        k.max(1) as f64
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 + self.nu * Self::wavenumber(k).powf(self.alpha)
    }

    pub fn energy(&self, k: usize) -> f64 {
        self.e0 * Self::wavenumber(k).powf(-self.beta_spec)
    }

    pub fn omega(&self, k: usize) -> f64 {
        match &self.dispersion {
            Dispersion::None => 0.0,
            Dispersion::Linear { speed } => speed * k as f64,
            Dispersion::Table { omega } => omega[k],
        }
    }

    /// `½E_k(1 − e^{−2γ_k h})`, the one-step noise variance of each coordinate of mode `k`.
    pub fn step_variance(&self, k: usize) -> f64 {
        0.5 * self.energy(k) * (1.0 - (-2.0 * self.gamma(k) * self.h).exp())
    }

    /// `e^{−γ_N h}`, the small-scale decay used by the cutoff calculators.
    pub fn lambda_s(&self, n: usize) -> f64 {
        (-self.gamma(n) * self.h).exp()
    }

    /// `e^{−2γ_N h}`, the decay of small-scale covariances under conjugation by `A`.
    pub fn lambda_s_conjugation(&self, n: usize) -> f64 {
        (-2.0 * self.gamma(n) * self.h).exp()
    }

    /// Stationary variance `½E_k` of every coordinate.
    pub fn stationary_diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| 0.5 * self.energy(mode_of(i)))
            .collect()
    }
}

/// Wavenumber `|k|` of a state coordinate.
pub fn mode_of(index: usize) -> usize {
    index.div_ceil(2)
}

/// Large/small split for the cutoff `N`: modes `|k| < N` are large.
pub fn cutoff_split(params: &TurbulenceParams, n: usize) -> Result<ScaleSplit> {
    if n == 0 || n > params.k_max {
        return Err(Error::InvalidParameter(format!(
            "cutoff N = {n} must lie in 1..={}",
            params.k_max
        )));
    }
    ScaleSplit::leading(params.dim(), 2 * n - 1)
}

/// Observation operator of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TurbulenceObservation {
    /// Every Fourier coordinate observed with noise variance `noise`.
    Direct { noise: f64 },
    /// `2K+1` equally spaced point sensors with noise `σ°`.
    Equispaced { sigma_o: f64 },
}

impl TurbulenceObservation {
    fn build(&self, params: &TurbulenceParams) -> Result<(DMatrix<f64>, SymMatrix)> {
        let d = params.dim();
        match *self {
            TurbulenceObservation::Direct { noise } => {
                if !(noise > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "observation noise must be positive, got {noise}"
                    )));
                }
                Ok((
                    DMatrix::identity(d, d),
                    SymMatrix::scaled_identity(d, noise),
                ))
            }
            TurbulenceObservation::Equispaced { sigma_o } => {
                let (net, _) = equispaced_network(params.k_max, params.k_max, sigma_o)?;
                Ok((net.h, SymMatrix::scaled_identity(d, sigma_o)))
            }
        }
    }
}

/// Point sensors at `x_j`: row `j` of `H` is `(1, 2cos(k x_j), 2sin(k x_j))` in state order.
#[derive(Clone, Debug)]
pub struct SensorNetwork {
    pub locations: Vec<f64>,
    pub sigma_o: f64,
    pub h: DMatrix<f64>,
}

impl SensorNetwork {
    pub fn new(locations: Vec<f64>, k_max: usize, sigma_o: f64) -> Result<Self> {
        if !(sigma_o > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sensor noise must be positive, got {sigma_o}"
            )));
        }
        let d = 2 * k_max + 1;
        let mut h = DMatrix::zeros(locations.len(), d);
        for (j, &x) in locations.iter().enumerate() {
            h[(j, 0)] = 1.0;
            for k in 1..=k_max {
                let kx = k as f64 * x;
                h[(j, 2 * k - 1)] = 2.0 * kx.cos();
                h[(j, 2 * k)] = 2.0 * kx.sin();
            }
        }
        Ok(Self {
            locations,
            sigma_o,
            h,
        })
    }

    pub fn obs_noise(&self) -> SymMatrix {
        SymMatrix::scaled_identity(self.locations.len(), self.sigma_o)
    }
}

/// `2J+1` sensors at `x_j = 2πj/(2J+1)` together with the transform `Ψ` that gives
/// `ΨH = I`. Only `J = K` is supported.
pub fn equispaced_network(
    k_max: usize,
    j: usize,
    sigma_o: f64,
) -> Result<(SensorNetwork, DMatrix<f64>)> {
    if j != k_max {
        return Err(Error::Unsupported(format!(
            "equispaced network needs J = K (got J = {j}, K = {k_max}); aliased networks are not modeled"
        )));
    }
    let q = 2 * j + 1;
    let qf = q as f64;
    let locations: Vec<f64> = (0..q)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / qf)
        .collect();
    let net = SensorNetwork::new(locations, k_max, sigma_o)?;
    let mut psi = DMatrix::zeros(q, q);
    for s in 0..q {
        psi[(0, s)] = 1.0 / qf;
        for i in 1..=j {
            let t = 2.0 * std::f64::consts::PI * (i * s) as f64 / qf;
            psi[(2 * i - 1, s)] = t.cos() / qf;
            psi[(2 * i, s)] = t.sin() / qf;
        }
    }
    Ok((net, psi))
}

fn dynamics(params: &TurbulenceParams, scale: impl Fn(usize) -> f64) -> (Csr, Csr, DVector<f64>) {
    let d = params.dim();
    let h = params.h;
    let mut a = Vec::with_capacity(4 * params.k_max + 1);
    let mut sig = Vec::with_capacity(d);
    let mut b = DVector::zeros(d);
    let force = |k: usize| params.forcing.get(k).copied().unwrap_or([0.0, 0.0]);
    a.push((0, 0, scale(0) * (-params.gamma(0) * h).exp()));
    sig.push(params.step_variance(0));
    b[0] = force(0)[0] * h;
    for k in 1..=params.k_max {
        let decay = scale(k) * (-params.gamma(k) * h).exp();
        let (sn, cs) = (params.omega(k) * h).sin_cos();
        let (re, im) = (2 * k - 1, 2 * k);
        a.extend([
            (re, re, decay * cs),
            (re, im, -decay * sn),
            (im, re, decay * sn),
            (im, im, decay * cs),
        ]);
        let v = params.step_variance(k);
        sig.extend([v, v]);
        let f = force(k);
        b[re] = f[0] * h;
        b[im] = f[1] * h;
    }
    (Csr::from_triplets(d, d, &a), Csr::diagonal(&sig), b)
}

/// One constant step of the sampled model with the given observations.
pub fn turbulence_step(
    params: &TurbulenceParams,
    obs: &TurbulenceObservation,
) -> Result<SystemStep> {
    params.validate()?;
    let (a, sigma, b) = dynamics(params, |_| 1.0);
    let (h, noise) = obs.build(params)?;
    SystemStep::new(a, b, sigma, h, noise)
}

/// Constant-coefficient system with large scales `|k| < cutoff`.
pub fn build_turbulence_system(
    params: &TurbulenceParams,
    obs: &TurbulenceObservation,
    cutoff: usize,
) -> Result<TwoScaleSystem> {
    let step = turbulence_step(params, obs)?;
    TwoScaleSystem::constant(step, cutoff_split(params, cutoff)?)
}

/// Same system with Bernoulli-masked observations `H_n = γ_n H`, `γ_n ~ Bernoulli(γ̄)`.
pub fn intermittent_observation_turbulence(
    params: &TurbulenceParams,
    obs: &TurbulenceObservation,
    cutoff: usize,
    gamma_bar: f64,
) -> Result<TwoScaleSystem> {
    let step = turbulence_step(params, obs)?;
    TwoScaleSystem::new(
        CoefficientProcess::bernoulli(step, gamma_bar)?,
        cutoff_split(params, cutoff)?,
    )
}

/// Markov chain of per-mode multipliers `[λ]_k` applied to the blocks of `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaChain {
    /// Wavenumbers the multipliers act on.
    pub modes: Vec<usize>,
    /// `values[s][i]` multiplies mode `modes[i]` in chain state `s`.
    pub values: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Require every switched mode to lie in the large scales.
    #[serde(default = "default_true")]
    pub constant_small: bool,
}

fn default_true() -> bool {
    true
}

/// `[A_n]_{k,−k} = [λ_n]_k [A]_{k,−k}` with `λ_n` a Markov chain; other blocks stay constant.
pub fn markov_switched_turbulence(
    params: &TurbulenceParams,
    obs: &TurbulenceObservation,
    cutoff: usize,
    chain: &LambdaChain,
) -> Result<TwoScaleSystem> {
    params.validate()?;
    let split = cutoff_split(params, cutoff)?;
    if let Some(&k) = chain.modes.iter().find(|&&k| k > params.k_max) {
        return Err(Error::InvalidParameter(format!(
            "switched mode {k} exceeds K = {}",
            params.k_max
        )));
    }
    if chain.constant_small {
        if let Some(&k) = chain.modes.iter().find(|&&k| k >= cutoff) {
            return Err(Error::Structure(format!(
                "switched mode {k} lies in the small scales (cutoff {cutoff}) while constant small-scale coefficients were requested"
            )));
        }
    }
    let s = chain.values.len();
    if s == 0 || chain.transition.len() != s || chain.transition.iter().any(|row| row.len() != s) {
        return Err(Error::InvalidParameter(
            "lambda chain transition must be square over the chain states".into(),
        ));
    }
    let (h, noise) = obs.build(params)?;
    let mut states = Vec::with_capacity(s);
    for vals in &chain.values {
        if vals.len() != chain.modes.len() {
            return Err(Error::InvalidParameter(
                "each chain state needs one multiplier per mode".into(),
            ));
        }
        let (a, sigma, b) = dynamics(params, |k| {
            chain
                .modes
                .iter()
                .position(|&m| m == k)
                .map_or(1.0, |i| vals[i])
        });
        states.push(SystemStep::new(a, b, sigma, h.clone(), noise.clone())?);
    }
    let transition = DMatrix::from_fn(s, s, |i, j| chain.transition[i][j]);
    let process = CoefficientProcess::markov(states, transition, chain.initial.clone())?;
    TwoScaleSystem::new(process, split)
}
