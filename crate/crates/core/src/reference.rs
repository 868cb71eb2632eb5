//! Inflated reference systems and their Riccati recursions.
//!
//! For RKF the reference has `A' = √r'·A`, `Σ' = r'Σ + r'·A D_S Aᵀ`. For DRKF it lives on
//! the large scales with `A' = √r·A^L`, `Σ' = Σ^L` and observation noise `σ^L`, which makes
//! `r·R̃^L_n = C^L_n` hold exactly when started from `R̃^L_0 = C^L_0 / r`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{dim_check, Error, Result};
use crate::filters::{kalman_update, DrkfBlocks};
use crate::matcore::{riemannian_delta, Operator, SymMatrix};
use crate::ssmodel::{CoefficientPath, ScaleSplit, SystemStep, TwoScaleSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReferenceKind {
    Drkf,
    Rkf,
}

/// A reduced filter's reference system.
#[derive(Clone, Debug)]
pub struct InflatedSystem {
    pub base: TwoScaleSystem,
    pub kind: ReferenceKind,
    pub r: f64,
    /// RKF only; equals `r` for the DRKF reference.
    pub r_prime: f64,
    /// RKF small-scale prior on the small-scale coordinates.
    pub d_s: Option<Operator>,
    /// DRKF initial small-scale covariance.
    pub v_s0: Option<SymMatrix>,
}

/// RKF reference step: `A' = √r'A`, `Σ' = r'(Σ + A D_S Aᵀ)`.
pub fn inflate_rkf_step(
    step: &SystemStep,
    split: &ScaleSplit,
    d_s: &Operator,
    r_prime: f64,
) -> Result<SystemStep> {
    dim_check("inflate_rkf_step D_S", split.small().len(), d_s.nrows())?;
    let a = step.a();
    let d_emb = d_s.embed(split.small(), split.dim());
    let sigma = step
        .sigma()
        .add(&a.mul(&d_emb).mul(&a.transpose()))
        .scaled(r_prime);
    step.with_dynamics(a.scaled(r_prime.sqrt()), sigma)
}

/// DRKF reference step on the large scales, given `V^S_{n+1}`.
pub fn inflate_drkf_step(blocks: &DrkfBlocks, v_s_next: &SymMatrix, r: f64) -> Result<SystemStep> {
    SystemStep::new(
        blocks.a_l.scaled(r.sqrt()),
        blocks.b_l.clone(),
        &blocks.sigma_l,
        blocks.h_l.clone(),
        blocks.representation_noise(v_s_next),
    )
}

impl InflatedSystem {
    pub fn rkf(base: TwoScaleSystem, r: f64, r_prime: f64, d_s: Operator) -> Result<Self> {
        if !(r > 1.0 && r_prime > r) {
            return Err(Error::InvalidParameter(format!(
                "RKF reference needs r' > r > 1, got r={r}, r'={r_prime}"
            )));
        }
        dim_check("RKF reference D_S", base.split.small().len(), d_s.nrows())?;
        Ok(Self {
            base,
            kind: ReferenceKind::Rkf,
            r,
            r_prime,
            d_s: Some(d_s),
            v_s0: None,
        })
    }

    pub fn drkf(base: TwoScaleSystem, r: f64, v_s0: SymMatrix) -> Result<Self> {
        if !(r > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "DRKF reference needs r > 1, got {r}"
            )));
        }
        if !base.block_decoupled {
            return Err(Error::Structure(
                "DRKF reference requires a block-decoupled system".into(),
            ));
        }
        dim_check("DRKF reference V_S", base.split.small().len(), v_s0.dim())?;
        Ok(Self {
            base,
            kind: ReferenceKind::Drkf,
            r,
            r_prime: r,
            d_s: None,
            v_s0: Some(v_s0),
        })
    }

    /// Reference coefficients along a realized path.
    pub fn steps_on_path(&self, path: &CoefficientPath) -> Result<Vec<SystemStep>> {
        let split = &self.base.split;
        match self.kind {
            ReferenceKind::Rkf => {
                let d_s = self.d_s.as_ref().expect("RKF reference has D_S");
                path.iter()
                    .map(|s| inflate_rkf_step(s, split, d_s, self.r_prime))
                    .collect()
            }
            ReferenceKind::Drkf => {
                let mut v = self.v_s0.clone().expect("DRKF reference has V_S");
                let mut out = Vec::with_capacity(path.len());
                for s in path.iter() {
                    let blocks = DrkfBlocks::new(s, split)?;
                    v = blocks.propagate_small(&v);
                    out.push(inflate_drkf_step(&blocks, &v, self.r)?);
                }
                Ok(out)
            }
        }
    }

    /// Reference step of a constant-coefficient system. For DRKF, `V^S` is propagated one
    /// step from `v_s0`, which is exact when `v_s0` is the small-scale stationary covariance.
    pub fn constant_step(&self) -> Result<SystemStep> {
        let step = self.base.constant_step().ok_or_else(|| {
            Error::Unsupported("constant_step needs constant coefficients".into())
        })?;
        let path = CoefficientPath::constant(step.clone(), 1);
        Ok(self.steps_on_path(&path)?.remove(0))
    }
}

/// `R ↦ 𝒦(A R Aᵀ + Σ)` for one reference step.
pub fn riccati_step(r: &SymMatrix, step: &SystemStep) -> Result<SymMatrix> {
    dim_check("riccati_step", step.state_dim(), r.dim())?;
    let forecast =
        SymMatrix::symmetrized(step.a().sandwich(r).into_matrix() + step.sigma().to_dense());
    kalman_update(&forecast, step.h(), step.obs_noise())
}

/// `R̃_0..R̃_n` along the given reference steps.
pub fn reference_sequence(steps: &[SystemStep], r0: &SymMatrix) -> Result<Vec<SymMatrix>> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(r0.clone());
    for s in steps {
        let next = riccati_step(out.last().unwrap(), s)?;
        out.push(next);
    }
    Ok(out)
}

/// Distance between two Riccati sequences started at different points.
pub fn contraction_profile(
    steps: &[SystemStep],
    r0: &SymMatrix,
    r0_alt: &SymMatrix,
) -> Result<Vec<f64>> {
    let a = reference_sequence(steps, r0)?;
    let b = reference_sequence(steps, r0_alt)?;
    a.iter()
        .zip(&b)
        .map(|(x, y)| riemannian_delta(x, y))
        .collect()
}

/// Fixed point of the stationary Riccati map.
#[derive(Clone, Debug, Serialize)]
pub struct StationarySolution {
    #[serde(skip)]
    pub r_tilde: SymMatrix,
    pub iterations: usize,
    pub residual: f64,
    pub delta_history: Vec<f64>,
    /// Riemannian distance `δ` between the fixed points reached from the two initializations
    /// (relative Frobenius distance if either is singular).
    pub init_gap: f64,
    pub unique: bool,
}

impl StationarySolution {
    /// Matrix as CSV, metadata as `<stem>.json` next to it.
    pub fn export(&self, csv_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        let m = self.r_tilde.as_matrix();
        for i in 0..m.nrows() {
            let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        let meta = serde_json::json!({
            "dim": m.nrows(),
            "iterations": self.iterations,
            "residual": self.residual,
            "init_gap": self.init_gap,
            "unique": self.unique,
            "final_delta": self.delta_history.last(),
        });
        std::fs::write(
            csv_path.with_extension("json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }
}

fn step_distance(a: &SymMatrix, b: &SymMatrix) -> f64 {
    let rel = a.sub(b).norm() / a.norm().max(f64::MIN_POSITIVE);
    match riemannian_delta(a, b) {
        Ok(d) => d.min(rel),
        Err(_) => rel,
    }
}

fn iterate_fixed_point(
    step: &SystemStep,
    r0: SymMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<(SymMatrix, usize, Vec<f64>)> {
    let mut r = r0;
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let next = riccati_step(&r, step)?;
        let d = step_distance(&r, &next);
        history.push(d);
        r = next;
        if d < tol {
            return Ok((r, it, history));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        delta_history: history,
    })
}

pub const DEFAULT_STATIONARY_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Plain fixed-point iteration from `Σ'` and from `10Σ' + I`.
pub fn stationary_covariance(
    step: &SystemStep,
    tol: f64,
    max_iter: usize,
) -> Result<StationarySolution> {
    let sigma = step.sigma_sym();
    let d = sigma.dim();
    let (r1, it1, hist) = iterate_fixed_point(step, sigma.clone(), tol, max_iter)?;
    let alt = sigma.scale(10.0).add(&SymMatrix::identity(d));
    let (r2, _, _) = iterate_fixed_point(step, alt, tol, max_iter)?;
    let init_gap = riemannian_delta(&r1, &r2)
        .unwrap_or_else(|_| r1.sub(&r2).norm() / r1.norm().max(f64::MIN_POSITIVE));
    let check = riccati_step(&r1, step)?;
    let residual = r1.sub(&check).norm() / r1.norm().max(f64::MIN_POSITIVE);
    // each run stops within tol·κ/(1−κ) of the fixed point, κ the observed contraction
    let kappa = match hist.as_slice() {
        [.., a, b] if *a > 0.0 => (b / a).min(0.999),
        _ => 0.5,
    };
    let slack = 10.0 * tol * (1.0 + kappa / (1.0 - kappa));
    Ok(StationarySolution {
        r_tilde: r1,
        iterations: it1,
        residual,
        delta_history: hist,
        init_gap,
        unique: init_gap <= slack,
    })
}

/// Stationary unfiltered covariance `V = AVAᵀ + Σ` by fixed-point iteration.
pub fn stationary_unfiltered(
    a: &Operator,
    sigma: &Operator,
    tol: f64,
    max_iter: usize,
) -> Result<SymMatrix> {
    let mut v = sigma.to_sym();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let next = SymMatrix::symmetrized(a.sandwich(&v).into_matrix() + sigma.to_dense());
        let d = next.sub(&v).norm() / next.norm().max(f64::MIN_POSITIVE);
        history.push(d);
        v = next;
        if d < tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        delta_history: history,
    })
}

/// Relative deviation `max_n ‖r R̃^L_n − C^L_n‖ / ‖C^L_n‖`.
pub fn proportionality_gap(reference: &[SymMatrix], c_l: &[SymMatrix], r: f64) -> f64 {
    reference
        .iter()
        .zip(c_l)
        .map(|(rt, c)| rt.scale(r).sub(c).norm() / c.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// `r R̃ + D_S` for an RKF reference covariance.
pub fn reference_bound(
    r_tilde: &SymMatrix,
    split: &ScaleSplit,
    d_s: &Operator,
    r: f64,
) -> SymMatrix {
    r_tilde
        .scale(r)
        .add(&d_s.embed(split.small(), split.dim()).to_sym())
}
