use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::SystemStep;
use crate::error::{dim_check, Error, Result};
use crate::rng::{stream_rng, STREAM_COEFFICIENTS};

#[derive(Clone, Debug)]
pub enum ProcessKind {
    Constant(Arc<SystemStep>),
    MarkovSwitching {
        states: Vec<Arc<SystemStep>>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
    },
    /// `H_n = γ_n H` with `γ_n ~ Bernoulli(γ̄)`; the masked step has `H = 0`.
    BernoulliObservation {
        base: Arc<SystemStep>,
        masked: Arc<SystemStep>,
        gamma_bar: f64,
    },
}

/// Generator of coefficient paths. `stream` selects the RNG stream used for sampling.
#[derive(Clone, Debug)]
pub struct CoefficientProcess {
    pub kind: ProcessKind,
    pub stream: u64,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "{name} is not a probability vector (sum {s})"
        )));
    }
    Ok(())
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, p: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in p.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl CoefficientProcess {
    pub fn constant(step: SystemStep) -> Self {
        Self {
            kind: ProcessKind::Constant(Arc::new(step)),
            stream: STREAM_COEFFICIENTS,
        }
    }

    pub fn markov(
        states: Vec<SystemStep>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let k = states.len();
        if k == 0 {
            return Err(Error::InvalidParameter(
                "Markov chain needs at least one state".into(),
            ));
        }
        dim_check("transition rows", k, transition.nrows())?;
        dim_check("transition cols", k, transition.ncols())?;
        dim_check("initial distribution", k, initial.len())?;
        for i in 0..k {
            let row: Vec<f64> = transition.row(i).iter().copied().collect();
            check_distribution(&format!("transition row {i}"), &row)?;
        }
        check_distribution("initial distribution", &initial)?;
        let (d, q) = (states[0].state_dim(), states[0].obs_dim());
        for s in &states {
            dim_check("regime state dim", d, s.state_dim())?;
            dim_check("regime obs dim", q, s.obs_dim())?;
        }
        Ok(Self {
            kind: ProcessKind::MarkovSwitching {
                states: states.into_iter().map(Arc::new).collect(),
                transition,
                initial,
            },
            stream: STREAM_COEFFICIENTS,
        })
    }

    pub fn bernoulli(base: SystemStep, gamma_bar: f64) -> Result<Self> {
        if !(gamma_bar > 0.0 && gamma_bar <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma_bar must lie in (0,1], got {gamma_bar}"
            )));
        }
        let masked = base.with_h(DMatrix::zeros(base.obs_dim(), base.state_dim()))?;
        Ok(Self {
            kind: ProcessKind::BernoulliObservation {
                base: Arc::new(base),
                masked: Arc::new(masked),
                gamma_bar,
            },
            stream: STREAM_COEFFICIENTS,
        })
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn distinct_steps(&self) -> Vec<&Arc<SystemStep>> {
        match &self.kind {
            ProcessKind::Constant(s) => vec![s],
            ProcessKind::MarkovSwitching { states, .. } => states.iter().collect(),
            ProcessKind::BernoulliObservation { base, masked, .. } => vec![base, masked],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.distinct_steps()[0].state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.distinct_steps()[0].obs_dim()
    }

    pub fn map_steps(&self, f: impl Fn(&SystemStep) -> Result<SystemStep>) -> Result<Self> {
        let kind = match &self.kind {
            ProcessKind::Constant(s) => ProcessKind::Constant(Arc::new(f(s)?)),
            ProcessKind::MarkovSwitching {
                states,
                transition,
                initial,
            } => ProcessKind::MarkovSwitching {
                states: states
                    .iter()
                    .map(|s| f(s).map(Arc::new))
                    .collect::<Result<_>>()?,
                transition: transition.clone(),
                initial: initial.clone(),
            },
            ProcessKind::BernoulliObservation {
                base, gamma_bar, ..
            } => {
                return Ok(Self::bernoulli(f(base)?, *gamma_bar)?.with_stream(self.stream));
            }
        };
        Ok(Self {
            kind,
            stream: self.stream,
        })
    }

    /// Stationary distribution of the regime chain (a point mass for non-switching kinds).
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        match &self.kind {
            ProcessKind::MarkovSwitching { transition, .. } => {
                let k = transition.nrows();
                let mut m = transition.transpose() - DMatrix::identity(k, k);
                for j in 0..k {
                    m[(k - 1, j)] = 1.0;
                }
                let mut rhs = DVector::zeros(k);
                rhs[k - 1] = 1.0;
                let pi = m.lu().solve(&rhs).ok_or_else(|| Error::Singular {
                    context: "transition matrix has no unique stationary distribution".into(),
                })?;
                Ok(pi.iter().copied().collect())
            }
            _ => Ok(vec![1.0]),
        }
    }

    /// Samples `n` steps using stream `self.stream` of `seed`.
    pub fn sample_path(&self, n: usize, seed: u64) -> CoefficientPath {
        let mut rng = stream_rng(seed, self.stream);
        let steps = match &self.kind {
            ProcessKind::Constant(s) => (0..n)
                .map(|_| RealizedStep {
                    step: s.clone(),
                    regime: 0,
                    observed: true,
                })
                .collect(),
            ProcessKind::MarkovSwitching {
                states,
                transition,
                initial,
            } => {
                let mut out = Vec::with_capacity(n);
                let mut regime = draw_index(&mut rng, initial.iter().copied());
                for k in 0..n {
                    if k > 0 {
                        regime = draw_index(&mut rng, transition.row(regime).iter().copied());
                    }
                    out.push(RealizedStep {
                        step: states[regime].clone(),
                        regime,
                        observed: true,
                    });
                }
                out
            }
            ProcessKind::BernoulliObservation {
                base,
                masked,
                gamma_bar,
            } => (0..n)
                .map(|_| {
                    let observed = rng.random::<f64>() < *gamma_bar;
                    RealizedStep {
                        step: if observed {
                            base.clone()
                        } else {
                            masked.clone()
                        },
                        regime: 0,
                        observed,
                    }
                })
                .collect(),
        };
        CoefficientPath { steps }
    }
}

/// Coefficients realized at one step: `step` drives `X_k → X_{k+1}` and `Y_{k+1}`.
#[derive(Clone, Debug)]
pub struct RealizedStep {
    pub step: Arc<SystemStep>,
    pub regime: usize,
    pub observed: bool,
}

/// A fixed realization of the coefficient sequence.
#[derive(Clone, Debug)]
pub struct CoefficientPath {
    pub steps: Vec<RealizedStep>,
}

impl CoefficientPath {
    pub fn constant(step: Arc<SystemStep>, n: usize) -> Self {
        Self {
            steps: (0..n)
                .map(|_| RealizedStep {
                    step: step.clone(),
                    regime: 0,
                    observed: true,
                })
                .collect(),
        }
    }

    /// A user-supplied path; each step is its own regime.
    pub fn from_steps(steps: Vec<SystemStep>) -> Result<Self> {
        if let Some(first) = steps.first() {
            for s in &steps {
                dim_check("path state dim", first.state_dim(), s.state_dim())?;
                dim_check("path obs dim", first.obs_dim(), s.obs_dim())?;
            }
        }
        Ok(Self {
            steps: steps
                .into_iter()
                .enumerate()
                .map(|(i, s)| RealizedStep {
                    step: Arc::new(s),
                    regime: i,
                    observed: true,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, k: usize) -> &SystemStep {
        &self.steps[k].step
    }

    pub fn iter(&self) -> impl Iterator<Item = &SystemStep> {
        self.steps.iter().map(|r| r.step.as_ref())
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
        }
    }
}
