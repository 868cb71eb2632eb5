use std::io::Write;

use nalgebra::DVector;
use rand::Rng;

use super::{CoefficientPath, SystemStep, TwoScaleSystem};
use crate::error::{dim_check, Result};
use crate::matcore::SymMatrix;
use crate::rng::{standard_normal_vec, stream_rng, STREAM_NOISE};

/// Realized states `X_0..X_n` and observations `Y_1..Y_n` (`observations[k]` is `Y_{k+1}`).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub path: CoefficientPath,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// CSV with columns `step, x_*, y_*, regime_id, obs_mask`. Step 0 has empty `y` cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, |x| x.len());
        let q = self.observations.first().map_or(0, |y| y.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|i| format!("x_{i}")));
        header.extend((0..q).map(|i| format!("y_{i}")));
        header.push("regime_id".into());
        header.push("obs_mask".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            if k == 0 {
                row.extend((0..q).map(|_| String::new()));
                row.push(String::new());
                row.push(String::new());
            } else {
                row.extend(self.observations[k - 1].iter().map(|v| v.to_string()));
                let r = &self.path.steps[k - 1];
                row.push(r.regime.to_string());
                row.push(u8::from(r.observed).to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the recursion on given standard normal draws: `ξ = L_Σ z`, `ζ = L_σ z'`.
pub fn simulate_with_normals(
    path: &CoefficientPath,
    x0: &DVector<f64>,
    z_state: &[DVector<f64>],
    z_obs: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let n = path.len();
    dim_check("state normals", n, z_state.len())?;
    dim_check("observation normals", n, z_obs.len())?;
    let mut states = Vec::with_capacity(n + 1);
    let mut obs = Vec::with_capacity(n);
    states.push(x0.clone());
    for k in 0..n {
        let step = path.step(k);
        dim_check("x0", step.state_dim(), x0.len())?;
        let f = step.noise_factors();
        let x = step.a().mul_vec(&states[k]) + step.b() + f.state.mul_vec(&z_state[k]);
        let y = step.h() * &x + &f.obs * &z_obs[k];
        states.push(x);
        obs.push(y);
    }
    Ok((states, obs))
}

/// Simulates on a fixed coefficient path, drawing noise from `rng`.
pub fn simulate_on_path<R: Rng + ?Sized>(
    path: &CoefficientPath,
    x0: &DVector<f64>,
    rng: &mut R,
    seed: u64,
) -> Result<Trajectory> {
    let mut zs = Vec::with_capacity(path.len());
    let mut zo = Vec::with_capacity(path.len());
    for step in path.iter() {
        zs.push(standard_normal_vec(rng, step.state_dim()));
        zo.push(standard_normal_vec(rng, step.obs_dim()));
    }
    let (states, observations) = simulate_with_normals(path, x0, &zs, &zo)?;
    Ok(Trajectory {
        states,
        observations,
        path: path.clone(),
        seed,
    })
}

/// Samples a coefficient path and simulates `n` steps; deterministic in `seed`.
pub fn simulate(
    sys: &TwoScaleSystem,
    x0: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    dim_check("x0", sys.d(), x0.len())?;
    let path = sys.process.sample_path(n, seed);
    let mut rng = stream_rng(seed, STREAM_NOISE);
    simulate_on_path(&path, x0, &mut rng, seed)
}

/// `V_{k+1} = A_k V_k A_kᵀ + Σ_k` along `steps`, returning `V_0..V_n`.
pub fn unfiltered_covariance<'a>(
    steps: impl IntoIterator<Item = &'a SystemStep>,
    v0: &SymMatrix,
) -> Result<Vec<SymMatrix>> {
    let mut out = vec![v0.clone()];
    for step in steps {
        dim_check("unfiltered_covariance V0", step.state_dim(), v0.dim())?;
        let v = step.a().sandwich(out.last().unwrap());
        out.push(SymMatrix::symmetrized(
            v.into_matrix() + step.sigma().to_dense(),
        ));
    }
    Ok(out)
}
