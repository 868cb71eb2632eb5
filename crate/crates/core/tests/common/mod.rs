//! Random generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use twoscale_kf::matcore::{spectral_norm, Csr, Operator};
use twoscale_kf::rng::{standard_normal_vec, stream_rng};
use twoscale_kf::ssmodel::{ScaleSplit, SystemStep};
use twoscale_kf::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0xacce)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(r, c, standard_normal_vec(rng, r * c).as_slice())
}

/// `GGᵀ` with `G` of rank `rank`.
pub fn psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> SymMatrix {
    let g = gaussian(rng, d, rank);
    SymMatrix::symmetrized(&g * g.transpose())
}

/// PSD plus `floor·I`.
pub fn pd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> SymMatrix {
    psd(rng, d, d).add(&SymMatrix::scaled_identity(d, floor))
}

pub fn symmetric(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let g = gaussian(rng, d, d);
    SymMatrix::symmetrized(&g + g.transpose())
}

/// Random matrix rescaled to spectral norm `norm`.
pub fn with_norm(rng: &mut ChaCha8Rng, d: usize, norm: f64) -> DMatrix<f64> {
    let g = gaussian(rng, d, d);
    let s = spectral_norm(&g);
    g * (norm / s)
}

pub fn vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    standard_normal_vec(rng, d)
}

/// Random dense step with `‖A‖ = a_norm`, PD `Σ` and `σ`.
pub fn random_step(rng: &mut ChaCha8Rng, d: usize, q: usize, a_norm: f64) -> SystemStep {
    let a = with_norm(rng, d, a_norm);
    let b = vector(rng, d) * 0.1;
    let sigma = pd(rng, d, 0.05).scale(0.3);
    let h = gaussian(rng, q, d);
    let noise = pd(rng, q, 0.1).scale(0.5);
    SystemStep::dense(a, b, sigma, h, noise).unwrap()
}

/// Random step that is block diagonal between the leading `p` coordinates and the rest.
pub fn random_decoupled_step(rng: &mut ChaCha8Rng, d: usize, q: usize, p: usize) -> (SystemStep, ScaleSplit) {
    let mut a = DMatrix::zeros(d, d);
    a.view_mut((0, 0), (p, p)).copy_from(&with_norm(rng, p, 0.95));
    a.view_mut((p, p), (d - p, d - p)).copy_from(&with_norm(rng, d - p, 0.7));
    let mut sigma = DMatrix::zeros(d, d);
    sigma.view_mut((0, 0), (p, p)).copy_from(pd(rng, p, 0.05).scale(0.3).as_matrix());
    sigma.view_mut((p, p), (d - p, d - p)).copy_from(pd(rng, d - p, 0.05).scale(0.1).as_matrix());
    let h = gaussian(rng, q, d);
    let noise = pd(rng, q, 0.1).scale(0.5);
    let step = SystemStep::dense(a, DVector::zeros(d), SymMatrix::symmetrized(sigma), h, noise).unwrap();
    (step, ScaleSplit::leading(d, p).unwrap())
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn size(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn diagonal_operator(values: &[f64]) -> Operator {
    Operator::Sparse(Csr::diagonal(values))
}

/// Relative Frobenius distance, normalized by `max(‖b‖, 1)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}
