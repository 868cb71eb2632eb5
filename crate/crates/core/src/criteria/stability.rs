use nalgebra::DMatrix;

use super::{CovariancePath, FilterKind};
use crate::error::{Error, Result};
use crate::matcore::spectral_norm;
use crate::ssmodel::CoefficientPath;

/// Error transition factors `(I − K_{k+1}H_k)A_k` of the filter mean. DRKF factors are
/// restricted to the large-scale block, where its estimator lives.
pub fn transition_factors(
    path: &CoefficientPath,
    cov: &CovariancePath,
) -> Result<Vec<DMatrix<f64>>> {
    let n = cov.len().min(path.len());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = path.step(k);
        let g = &cov.gains[k];
        let f = match cov.kind {
            FilterKind::Drkf => {
                let l = cov.split.large();
                let a = s.a().select(l, l).to_dense();
                let h = cov.split.columns(s.h(), l);
                let gl = g.select_rows(l);
                (DMatrix::identity(l.len(), l.len()) - gl * h) * a
            }
            _ => {
                let d = s.state_dim();
                let ikh = DMatrix::identity(d, d) - g * s.h();
                ikh * s.a().to_dense()
            }
        };
        out.push(f);
    }
    Ok(out)
}

/// `(1/n) log‖F_n ⋯ F_1‖`. The running product is renormalized every step and the scale
/// accumulated in logs, so long stable products never underflow.
pub fn exp_stability_rate(factors: &[DMatrix<f64>]) -> Result<f64> {
    let n = factors.len();
    if n < 50 {
        return Err(Error::InvalidParameter(format!(
            "stability rate needs at least 50 steps, got {n}"
        )));
    }
    let d = factors[0].ncols();
    let mut prod = DMatrix::<f64>::identity(d, d);
    let mut log_scale = 0.0;
    for f in factors {
        prod = f * prod;
        let s = prod.amax();
        if s == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        prod /= s;
        log_scale += s.ln();
    }
    Ok((log_scale + spectral_norm(&prod).ln()) / n as f64)
}
