//! Wall-clock scaling of one filter step in `(d, q, p)`.
//!
//! Test systems have tridiagonal `A` within each scale block (so they are dynamically
//! decoupled), diagonal `Σ`, dense Gaussian `H` and `σ = I`. Timing runs single-threaded.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{
    drkf_step_blocks, kalman_step, rkf_step, rkf_step_fast, DrkfBlocks, DrkfState, KalmanState,
    RkfState, SmallScaleCache,
};
use crate::matcore::{Csr, Operator, SymMatrix};
use crate::rng::{standard_normal_vec, stream_rng};
use crate::ssmodel::{ScaleSplit, SystemStep};

/// Batches of calls shorter than this are repeated until they are not.
const MIN_BATCH_TIME: Duration = Duration::from_millis(2);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GridCell {
    pub d: usize,
    pub q: usize,
    pub p: usize,
}

impl GridCell {
    pub fn new(d: usize, q: usize, p: usize) -> Self {
        Self { d, q, p }
    }
}

/// A `d` sweep at `(q, p) = (20, 10)`, a `q` sweep at `(d, p) = (400, 10)` and the large cell
/// `(2000, 100, 20)`.
pub fn default_grid() -> Vec<GridCell> {
    let mut g: Vec<GridCell> = [100, 200, 400, 800]
        .iter()
        .map(|&d| GridCell::new(d, 20, 10))
        .collect();
    g.extend([10, 40, 80].iter().map(|&q| GridCell::new(400, q, 10)));
    g.push(GridCell::new(2000, 100, 20));
    g
}

/// Median per-step seconds of each filter on one cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellTiming {
    pub cell: GridCell,
    /// Non-zeros of `A` over `d²`.
    pub density: f64,
    pub kalman: f64,
    pub drkf_cached: f64,
    pub drkf_uncached: f64,
    pub rkf_fast: f64,
    pub rkf_slow: f64,
    /// Relative difference between the fast and direct RKF outputs.
    pub equivalence_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub filter: String,
    /// `"d"` or `"q"`.
    pub variable: String,
    /// The two held-fixed dimensions.
    pub fixed: (usize, usize),
    pub slope: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<CellTiming>,
    pub slopes: Vec<SlopeFit>,
}

/// Random decoupled test system for one cell.
pub fn test_system(cell: GridCell, seed: u64) -> Result<(SystemStep, ScaleSplit)> {
    let GridCell { d, q, p } = cell;
    if p == 0 || p >= d || q == 0 {
        return Err(Error::InvalidParameter(format!(
            "infeasible grid cell {cell:?}"
        )));
    }
    let mut rng = stream_rng(seed, (d * 1_000_003 + q * 1009 + p) as u64);
    let mut trip = Vec::with_capacity(3 * d);
    for i in 0..d {
        trip.push((i, i, 0.5 + 0.2 * rng.random::<f64>()));
        let same_block = |j: usize| (i < p) == (j < p);
        if i + 1 < d && same_block(i + 1) {
            trip.push((i, i + 1, 0.1 * rng.random::<f64>()));
            trip.push((i + 1, i, 0.1 * rng.random::<f64>()));
        }
    }
    let a = Csr::from_triplets(d, d, &trip);
    let sig: Vec<f64> = (0..d).map(|i| if i < p { 1.0 } else { 0.1 }).collect();
    let h = DMatrix::from_fn(q, d, |_, _| rng.random::<f64>() - 0.5) / (d as f64).sqrt();
    let step = SystemStep::new(
        a,
        DVector::zeros(d),
        Csr::diagonal(&sig),
        h,
        SymMatrix::identity(q),
    )?;
    Ok((step, ScaleSplit::leading(d, p)?))
}

/// Median seconds per call of `f`, with calls batched above the timer resolution.
pub fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let t0 = Instant::now();
    f();
    let single = t0.elapsed();
    let batch = if single >= MIN_BATCH_TIME {
        1
    } else {
        (MIN_BATCH_TIME.as_secs_f64() / single.as_secs_f64().max(1e-9)).ceil() as usize
    };
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..batch {
                f();
            }
            t.elapsed().as_secs_f64() / batch as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn relative_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Times every filter on one cell.
pub fn time_cell(cell: GridCell, reps: usize, seed: u64) -> Result<CellTiming> {
    let (step, split) = test_system(cell, seed)?;
    let GridCell { d, p, .. } = cell;
    let mut rng = stream_rng(seed, 7);
    let y = standard_normal_vec(&mut rng, cell.q);

    let kstate = KalmanState {
        mean: DVector::zeros(d),
        cov: SymMatrix::identity(d),
    };
    let mut err = None;
    let kalman = median_time(reps, || {
        if let Err(e) = kalman_step(&kstate, &step, &y) {
            err = Some(e);
        }
    });

    let v_s = SymMatrix::scaled_identity(d - p, 0.2);
    let dstate = DrkfState::new(
        split.clone(),
        DVector::zeros(p),
        SymMatrix::identity(p),
        DVector::zeros(d - p),
        v_s.clone(),
        1.2,
    )?;
    let blocks = DrkfBlocks::new(&step, &split)?;
    let cache = SmallScaleCache::new(&blocks, v_s);
    let drkf_cached = median_time(reps, || {
        if let Err(e) = drkf_step_blocks(&dstate, &blocks, &y, Some(&cache)) {
            err = Some(e);
        }
    });
    let drkf_uncached = median_time(reps, || {
        if let Err(e) = drkf_step_blocks(&dstate, &blocks, &y, None) {
            err = Some(e);
        }
    });

    let rstate = RkfState::new(
        split.clone(),
        DVector::zeros(d),
        SymMatrix::identity(p),
        Operator::diagonal(&vec![0.3; d - p]),
        1.2,
    )?;
    let rkf_fast = median_time(reps, || {
        if let Err(e) = rkf_step_fast(&rstate, &step, &y) {
            err = Some(e);
        }
    });
    let rkf_slow = median_time(reps, || {
        if let Err(e) = rkf_step(&rstate, &step, &y) {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }

    let fast = rkf_step_fast(&rstate, &step, &y)?;
    let slow = rkf_step(&rstate, &step, &y)?.state;
    let mu_res = (&fast.mu - &slow.mu).norm() / slow.mu.norm().max(f64::MIN_POSITIVE);
    let c_res = relative_diff(fast.c_l.as_matrix(), slow.c_l.as_matrix());
    let nnz = match step.a() {
        Operator::Sparse(c) => c.nnz(),
        Operator::Dense(m) => m.iter().filter(|x| **x != 0.0).count(),
    };
    Ok(CellTiming {
        cell,
        density: nnz as f64 / (d * d) as f64,
        kalman,
        drkf_cached,
        drkf_uncached,
        rkf_fast,
        rkf_slow,
        equivalence_residual: mu_res.max(c_res),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

const FILTERS: [&str; 5] = [
    "kalman",
    "drkf_cached",
    "drkf_uncached",
    "rkf_fast",
    "rkf_slow",
];

fn filter_time(c: &CellTiming, name: &str) -> f64 {
    match name {
        "kalman" => c.kalman,
        "drkf_cached" => c.drkf_cached,
        "drkf_uncached" => c.drkf_uncached,
        "rkf_fast" => c.rkf_fast,
        _ => c.rkf_slow,
    }
}

/// Slopes in `d` for every `(q, p)` group and in `q` for every `(d, p)` group that has at
/// least two distinct values.
pub fn fit_slopes(cells: &[CellTiming]) -> Vec<SlopeFit> {
    let mut out = Vec::new();
    for variable in ["d", "q"] {
        let key = |c: &GridCell| {
            if variable == "d" {
                (c.q, c.p)
            } else {
                (c.d, c.p)
            }
        };
        let val = |c: &GridCell| if variable == "d" { c.d } else { c.q };
        let mut groups: Vec<(usize, usize)> = cells.iter().map(|c| key(&c.cell)).collect();
        groups.sort_unstable();
        groups.dedup();
        for g in groups {
            let members: Vec<&CellTiming> = cells.iter().filter(|c| key(&c.cell) == g).collect();
            let mut xs: Vec<usize> = members.iter().map(|c| val(&c.cell)).collect();
            xs.sort_unstable();
            xs.dedup();
            if xs.len() < 2 {
                continue;
            }
            for f in FILTERS {
                let pts: Vec<(f64, f64)> = members
                    .iter()
                    .map(|c| (val(&c.cell) as f64, filter_time(c, f)))
                    .collect();
                out.push(SlopeFit {
                    filter: f.into(),
                    variable: variable.into(),
                    fixed: g,
                    slope: loglog_slope(&pts),
                    points: pts.len(),
                });
            }
        }
    }
    out
}

/// Times every cell of `grid` with `reps ≥ 5` repetitions and fits the slopes.
pub fn run_scaling(grid: &[GridCell], reps: usize, seed: u64) -> Result<BenchReport> {
    if reps < 5 {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least 5, got {reps}"
        )));
    }
    let cells = grid
        .iter()
        .map(|&c| time_cell(c, reps, seed))
        .collect::<Result<Vec<_>>>()?;
    let slopes = fit_slopes(&cells);
    Ok(BenchReport {
        reps,
        seed,
        cells,
        slopes,
    })
}

impl BenchReport {
    pub fn slope(&self, filter: &str, variable: &str, fixed: (usize, usize)) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.filter == filter && s.variable == variable && s.fixed == fixed)
            .map(|s| s.slope)
    }

    /// One row per cell; `kalman_slope_d` and `rkf_fast_slope_d` repeat the slope fitted for
    /// the cell's `(q, p)` group and are blank where no fit exists.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "d,q,p,density,kalman_s,drkf_cached_s,drkf_uncached_s,rkf_fast_s,rkf_slow_s,equivalence_residual,kalman_slope_d,rkf_fast_slope_d"
        )?;
        let fmt = |s: Option<f64>| s.map(|x| format!("{x:.4}")).unwrap_or_default();
        for c in &self.cells {
            let g = (c.cell.q, c.cell.p);
            writeln!(
                w,
                "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3e},{},{}",
                c.cell.d,
                c.cell.q,
                c.cell.p,
                c.density,
                c.kalman,
                c.drkf_cached,
                c.drkf_uncached,
                c.rkf_fast,
                c.rkf_slow,
                c.equivalence_residual,
                fmt(self.slope("kalman", "d", g)),
                fmt(self.slope("rkf_fast", "d", g)),
            )?;
        }
        Ok(())
    }

    pub fn write_slopes_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "filter,variable,fixed_a,fixed_b,slope,points")?;
        for s in &self.slopes {
            writeln!(
                w,
                "{},{},{},{},{:.4},{}",
                s.filter, s.variable, s.fixed.0, s.fixed.1, s.slope, s.points
            )?;
        }
        Ok(())
    }
}

/// Gnuplot script drawing time against `d` on log axes from the cell CSV.
pub fn plot_script(csv_name: &str, png_name: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str(&format!("set output '{png_name}'\n"));
    s.push_str(
        "set logscale xy\nset xlabel 'd'\nset ylabel 'seconds per step'\nset key left top\n",
    );
    let cols = [
        (5, "kalman"),
        (6, "drkf cached"),
        (7, "drkf uncached"),
        (8, "rkf fast"),
        (9, "rkf direct"),
    ];
    let plots: Vec<String> = cols
        .iter()
        .map(|(c, t)| format!("'{csv_name}' every ::1 using 1:{c} with linespoints title '{t}'"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&x| (x, 3.0 * x * x))
            .collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_system_is_decoupled() {
        let (step, split) = test_system(GridCell::new(30, 5, 8), 1).unwrap();
        assert!(step.is_block_decoupled(&split));
    }

    #[test]
    fn few_reps_rejected() {
        assert!(run_scaling(&[GridCell::new(20, 4, 5)], 1, 0).is_err());
    }

    #[test]
    fn small_cell_runs() {
        let r = run_scaling(&[GridCell::new(20, 4, 5), GridCell::new(40, 4, 5)], 5, 3).unwrap();
        assert!(r.cells.iter().all(|c| c.equivalence_residual < 1e-8));
        assert!(r.slope("kalman", "d", (4, 5)).is_some());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
