//! Random-coefficient signal/observation systems and their two-scale split.

mod process;
mod simulate;

pub use process::{CoefficientPath, CoefficientProcess, ProcessKind, RealizedStep};
pub use simulate::{
    simulate, simulate_on_path, simulate_with_normals, unfiltered_covariance, Trajectory,
};

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::matcore::{psd_factor, Csr, Operator, PdFactor, SymMatrix};

/// One time slice `(A, B, Σ, H, σ)`.
#[derive(Clone, Debug)]
pub struct SystemStep {
    a: Operator,
    b: DVector<f64>,
    sigma: Operator,
    h: DMatrix<f64>,
    obs_noise: SymMatrix,
    factors: OnceLock<NoiseFactors>,
}

#[derive(Clone, Debug)]
pub(crate) struct NoiseFactors {
    pub state: Operator,
    pub obs: DMatrix<f64>,
}

/// Above this size the dense PSD check on `Σ` is skipped (it costs a d×d eigensolve).
const PSD_CHECK_LIMIT: usize = 600;

fn check_symmetric_psd(name: &str, s: &Operator) -> Result<()> {
    let d = s.nrows();
    dim_check(name, d, s.ncols())?;
    match s {
        Operator::Sparse(c) => {
            let t = c.transpose();
            let asym = Operator::Sparse(c.add(&t.scaled(-1.0))).amax();
            if asym > 1e-8 * s.amax().max(1.0) {
                return Err(Error::NotSymmetric {
                    context: name.into(),
                    asymmetry: asym,
                });
            }
            let diagonal_only = c.triplets().all(|(i, j, _)| i == j);
            if diagonal_only {
                if let Some((_, _, v)) = c.triplets().find(|t| t.2 < 0.0) {
                    return Err(Error::NotPsd {
                        context: name.into(),
                        min_eigenvalue: v,
                    });
                }
                return Ok(());
            }
        }
        Operator::Dense(m) => {
            SymMatrix::new(m.clone())?;
        }
    }
    if d <= PSD_CHECK_LIMIT {
        let sym = s.to_sym();
        let min = sym.min_eigenvalue();
        if min < -1e-10 * sym.norm().max(1e-300) {
            return Err(Error::NotPsd {
                context: name.into(),
                min_eigenvalue: min,
            });
        }
    }
    Ok(())
}

impl SystemStep {
    pub fn new(
        a: impl Into<Operator>,
        b: DVector<f64>,
        sigma: impl Into<Operator>,
        h: DMatrix<f64>,
        obs_noise: SymMatrix,
    ) -> Result<Self> {
        let a = a.into();
        let sigma = sigma.into();
        let d = a.nrows();
        dim_check("A (square)", d, a.ncols())?;
        dim_check("B", d, b.len())?;
        dim_check("Sigma", d, sigma.nrows())?;
        check_symmetric_psd("Sigma", &sigma)?;
        dim_check("H columns", d, h.ncols())?;
        dim_check("sigma", h.nrows(), obs_noise.dim())?;
        PdFactor::new(&obs_noise)?;
        Ok(Self {
            a,
            b,
            sigma,
            h,
            obs_noise,
            factors: OnceLock::new(),
        })
    }

    /// Dense constructor.
    pub fn dense(
        a: DMatrix<f64>,
        b: DVector<f64>,
        sigma: SymMatrix,
        h: DMatrix<f64>,
        obs_noise: SymMatrix,
    ) -> Result<Self> {
        Self::new(a, b, &sigma, h, obs_noise)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn a(&self) -> &Operator {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &Operator {
        &self.sigma
    }

    pub fn sigma_sym(&self) -> SymMatrix {
        self.sigma.to_sym()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn obs_noise(&self) -> &SymMatrix {
        &self.obs_noise
    }

    /// Same step with `H` replaced.
    pub fn with_h(&self, h: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.sigma.clone(),
            h,
            self.obs_noise.clone(),
        )
    }

    /// Same step with `A` and `Σ` replaced.
    pub fn with_dynamics(&self, a: Operator, sigma: Operator) -> Result<Self> {
        Self::new(
            a,
            self.b.clone(),
            sigma,
            self.h.clone(),
            self.obs_noise.clone(),
        )
    }

    /// `H ← ΨH`, `σ ← ΨσΨᵀ`.
    pub fn transform_observation(&self, psi: &DMatrix<f64>) -> Result<Self> {
        let q = self.obs_dim();
        dim_check("Psi rows", q, psi.nrows())?;
        dim_check("Psi cols", q, psi.ncols())?;
        let sv = psi.clone().singular_values();
        if q > 0 && sv.min() <= 1e-14 * sv.max() {
            return Err(Error::Singular {
                context: "transform_observation: Psi".into(),
            });
        }
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.sigma.clone(),
            psi * &self.h,
            self.obs_noise.congruence(psi),
        )
    }

    /// `Σ ← ε²Σ`, `σ ← ε²σ`.
    pub fn scale_noise(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be positive, got {epsilon}"
            )));
        }
        let e2 = epsilon * epsilon;
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.sigma.scaled(e2),
            self.h.clone(),
            self.obs_noise.scale(e2),
        )
    }

    /// Exact zeros in the off-diagonal scale blocks of `A` and `Σ`.
    pub fn is_block_decoupled(&self, split: &ScaleSplit) -> bool {
        let (l, s) = (split.large(), split.small());
        self.a.block_is_zero(l, s) && self.a.block_is_zero(s, l) && self.sigma.block_is_zero(l, s)
    }

    pub(crate) fn noise_factors(&self) -> &NoiseFactors {
        self.factors.get_or_init(|| {
            let state = match &self.sigma {
                Operator::Sparse(c) if c.triplets().all(|(i, j, _)| i == j) => {
                    let t: Vec<_> = c
                        .triplets()
                        .map(|(i, _, v)| (i, i, v.max(0.0).sqrt()))
                        .collect();
                    Operator::Sparse(Csr::from_triplets(c.nrows(), c.ncols(), &t))
                }
                s => Operator::Dense(psd_factor(&s.to_sym())),
            };
            NoiseFactors {
                state,
                obs: psd_factor(&self.obs_noise),
            }
        })
    }
}

/// Index sets of the large (filtered) and small (closed) scales.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaleSplit {
    dim: usize,
    large: Vec<usize>,
    small: Vec<usize>,
}

impl ScaleSplit {
    pub fn new(dim: usize, mut large: Vec<usize>) -> Result<Self> {
        large.sort_unstable();
        large.dedup();
        if large.iter().any(|&i| i >= dim) {
            return Err(Error::InvalidParameter(format!(
                "large-scale index out of range for dim {dim}"
            )));
        }
        if large.is_empty() {
            return Err(Error::InvalidParameter(
                "large-scale set must be non-empty".into(),
            ));
        }
        let mut mask = vec![false; dim];
        large.iter().for_each(|&i| mask[i] = true);
        let small = (0..dim).filter(|&i| !mask[i]).collect();
        Ok(Self { dim, large, small })
    }

    /// Large scales are the first `p` coordinates.
    pub fn leading(dim: usize, p: usize) -> Result<Self> {
        Self::new(dim, (0..p).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> usize {
        self.large.len()
    }

    pub fn large(&self) -> &[usize] {
        &self.large
    }

    pub fn small(&self) -> &[usize] {
        &self.small
    }

    pub fn gather(&self, v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
    }

    pub fn gather_large(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gather(v, &self.large)
    }

    pub fn gather_small(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gather(v, &self.small)
    }

    /// Reassembles a full vector from its two parts.
    pub fn join(&self, large: &DVector<f64>, small: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        self.large
            .iter()
            .zip(large.iter())
            .for_each(|(&i, &x)| v[i] = x);
        self.small
            .iter()
            .zip(small.iter())
            .for_each(|(&i, &x)| v[i] = x);
        v
    }

    /// Columns of `m` on `idx`.
    pub fn columns(&self, m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
    }
}

/// A coefficient process together with its scale split.
#[derive(Clone, Debug)]
pub struct TwoScaleSystem {
    pub process: CoefficientProcess,
    pub split: ScaleSplit,
    pub block_decoupled: bool,
}

impl TwoScaleSystem {
    /// `block_decoupled` is derived by checking every step of the process.
    pub fn new(process: CoefficientProcess, split: ScaleSplit) -> Result<Self> {
        dim_check("split dimension", process.state_dim(), split.dim())?;
        let block_decoupled = process
            .distinct_steps()
            .iter()
            .all(|s| s.is_block_decoupled(&split));
        Ok(Self {
            process,
            split,
            block_decoupled,
        })
    }

    pub fn constant(step: SystemStep, split: ScaleSplit) -> Result<Self> {
        Self::new(CoefficientProcess::constant(step), split)
    }

    pub fn d(&self) -> usize {
        self.split.dim()
    }

    pub fn q(&self) -> usize {
        self.process.obs_dim()
    }

    pub fn p(&self) -> usize {
        self.split.p()
    }

    /// The step of a constant process.
    pub fn constant_step(&self) -> Option<&Arc<SystemStep>> {
        match &self.process.kind {
            ProcessKind::Constant(s) => Some(s),
            _ => None,
        }
    }

    /// Applies `f` to every step, preserving the process structure.
    pub fn map_steps(&self, f: impl Fn(&SystemStep) -> Result<SystemStep>) -> Result<Self> {
        Self::new(self.process.map_steps(f)?, self.split.clone())
    }

    /// `Σ ← ε²Σ`, `σ ← ε²σ` on every step.
    pub fn scale_noise(&self, epsilon: f64) -> Result<Self> {
        self.map_steps(|s| s.scale_noise(epsilon))
    }
}

/// Free-function form of [`TwoScaleSystem::scale_noise`].
pub fn scale_noise(sys: &TwoScaleSystem, epsilon: f64) -> Result<TwoScaleSystem> {
    sys.scale_noise(epsilon)
}

/// Free-function form of [`SystemStep::transform_observation`].
pub fn transform_observation(step: &SystemStep, psi: &DMatrix<f64>) -> Result<SystemStep> {
    step.transform_observation(psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, s: f64, h: f64, o: f64) -> SystemStep {
        SystemStep::dense(
            DMatrix::from_element(1, 1, a),
            DVector::zeros(1),
            SymMatrix::from_diagonal(&[s]),
            DMatrix::from_element(1, 1, h),
            SymMatrix::from_diagonal(&[o]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_noise() {
        let r = SystemStep::dense(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            SymMatrix::identity(2),
            DMatrix::identity(1, 2),
            SymMatrix::identity(1),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let r = SystemStep::dense(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            SymMatrix::from_diagonal(&[-1.0]),
            DMatrix::identity(1, 1),
            SymMatrix::identity(1),
        );
        assert!(matches!(r, Err(Error::NotPsd { .. })));
        let r = SystemStep::dense(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            SymMatrix::identity(1),
            DMatrix::identity(1, 1),
            SymMatrix::zeros(1),
        );
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn identity_transform_is_noop() {
        let s = scalar(0.5, 1.0, 2.0, 3.0);
        let t = s.transform_observation(&DMatrix::identity(1, 1)).unwrap();
        assert_eq!(t.h(), s.h());
        assert_eq!(t.obs_noise(), s.obs_noise());
        assert!(s.transform_observation(&DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn scale_noise_rules() {
        let s = scalar(0.5, 1.0, 2.0, 3.0);
        assert!(s.scale_noise(0.0).is_err());
        let t = s.scale_noise(1.0).unwrap();
        assert_eq!(t.sigma_sym(), s.sigma_sym());
        let t = s.scale_noise(0.1).unwrap();
        assert!((t.obs_noise().as_matrix()[(0, 0)] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn split_complement() {
        let s = ScaleSplit::new(5, vec![3, 0]).unwrap();
        assert_eq!(s.large(), &[0, 3]);
        assert_eq!(s.small(), &[1, 2, 4]);
        let v = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.join(&s.gather_large(&v), &s.gather_small(&v)), v);
        assert!(ScaleSplit::new(2, vec![2]).is_err());
    }
}
