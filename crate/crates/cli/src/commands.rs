use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;
use twoscale_kf::criteria::{
    adjustment_time, check_acceptable_reduction, check_nu_recursion, check_reference_projection,
    covariance_path, drkf_error_bound, gamma_sigma, mahalanobis_monitor, mahalanobis_trace,
    monte_carlo, nu_sequence, CovariancePath, DiagnosticsTrace, DrkfBoundInputs, FilterConfig,
    MonteCarloConfig, MonteCarloSummary, PsiTrace, Verdict, Witness,
};
use twoscale_kf::filters::{FilterTrace, FilterTraceRow};
use twoscale_kf::matcore::{psd_factor, spectral_norm};
use twoscale_kf::reference::{
    proportionality_gap, reference_sequence, stationary_covariance, InflatedSystem,
    DEFAULT_MAX_ITER, DEFAULT_STATIONARY_TOL,
};
use twoscale_kf::rng::{standard_normal_vec, stream_rng, STREAM_INITIAL};
use twoscale_kf::scaling::{default_grid, plot_script, run_scaling};
use twoscale_kf::ssmodel::{simulate, CoefficientPath, ScaleSplit, Trajectory};
use twoscale_kf::turbulence::{
    drkf_cutoff, intermittent_drkf_cutoff, intermittent_rkf_cutoff, mode_of, preset,
    rkf_cutoff_base10, rkf_smallscale_prior, verify_rkf_prior, ReductionParams,
    TurbulenceObservation,
};
use twoscale_kf::{Error, Execution, SymMatrix};

use crate::config::{build, Built, ExperimentConfig, FilterSpec};

/// Settings shared by every subcommand after command-line overrides.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Execution,
    pub plot: bool,
}

/// Whether every verdict held.
pub type Outcome = bool;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Run metadata kept apart from the data files so those stay byte-identical across reruns.
pub fn write_meta(run: &Run, command: &str) -> Result<()> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &run.out.join("meta.json"),
        &serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": run.cfg.seed,
            "trials": run.cfg.trials,
            "horizon": run.cfg.horizon,
            "execution": run.exec,
            "created_unix": created,
        }),
    )
}

fn report(verdicts: &[Verdict]) -> Outcome {
    for v in verdicts {
        let status = if v.passed { "PASS" } else { "FAIL" };
        match &v.witness {
            Some(w) => eprintln!(
                "{status} {} (step {:?}, value {:.6e})",
                v.name, w.step, w.value
            ),
            None => eprintln!("{status} {}", v.name),
        }
    }
    verdicts.iter().all(|v| v.passed)
}

fn initial_state(built: &Built, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, STREAM_INITIAL);
    psd_factor(&built.prior) * standard_normal_vec(&mut rng, built.prior.dim())
}

fn filter_config(built: &Built, spec: &FilterSpec) -> Result<FilterConfig> {
    let split = &built.system.split;
    let r = built.reduction.r;
    Ok(match spec {
        FilterSpec::Kalman {} => FilterConfig::Kalman {
            r0: built.prior.clone(),
        },
        FilterSpec::Drkf { .. } => FilterConfig::Drkf {
            r,
            c_l0: built.prior.principal(split.large()).scale(r),
            v_s0: built.prior.principal(split.small()),
        },
        FilterSpec::Rkf { .. } => FilterConfig::Rkf {
            r,
            c_l0: built.prior.principal(split.large()).scale(r),
            d_s: built
                .d_s
                .clone()
                .context("RKF configuration lacks a small-scale prior")?,
        },
    })
}

/// Reference sequence for the reduced filters, the verdicts that follow from it and the
/// adjustment time `n0`.
struct ReferenceCheck {
    r_tilde: Vec<SymMatrix>,
    extra: Option<SymMatrix>,
    n0: usize,
    verdicts: Vec<Verdict>,
}

fn reference_check(
    built: &Built,
    path: &CoefficientPath,
    fcfg: &FilterConfig,
    cov: &CovariancePath,
) -> Result<Option<ReferenceCheck>> {
    let sys = &built.system;
    let split = &sys.split;
    let red = built.reduction;
    match fcfg {
        FilterConfig::Kalman { .. } => Ok(None),
        FilterConfig::Drkf { r, c_l0, v_s0 } => {
            let inflated = InflatedSystem::drkf(sys.clone(), *r, v_s0.clone())?;
            let steps = inflated.steps_on_path(path)?;
            let r_tilde = reference_sequence(&steps, &c_l0.scale(1.0 / r))?;
            let gap = proportionality_gap(&r_tilde, &cov.c_l, *r);
            let v = if gap <= 1e-8 {
                Verdict::pass("drkf_proportionality")
            } else {
                Verdict::fail(
                    "drkf_proportionality",
                    Witness {
                        step: None,
                        value: gap,
                        eigenvector: None,
                    },
                )
            };
            Ok(Some(ReferenceCheck {
                r_tilde,
                extra: None,
                n0: 0,
                verdicts: vec![v],
            }))
        }
        FilterConfig::Rkf { r, c_l0, d_s } => {
            let inflated = InflatedSystem::rkf(sys.clone(), *r, red.r_prime, d_s.clone())?;
            let mut verdicts = Vec::new();
            let c0 = c_l0.embed(split.large(), split.dim());
            let d_full = d_s.embed(split.small(), split.dim()).to_sym();
            let r0 = if sys.constant_step().is_some() {
                let sol = stationary_covariance(
                    &inflated.constant_step()?,
                    DEFAULT_STATIONARY_TOL,
                    DEFAULT_MAX_ITER,
                )?;
                verdicts.push(check_reference_projection(
                    &sol.r_tilde,
                    split,
                    d_s,
                    *r,
                    red.beta_star,
                )?);
                sol.r_tilde
            } else {
                c0.add(&d_full).scale(1.0 / r)
            };
            let n0 = adjustment_time(&r0, &c0, *r, red.r_prime)?;
            eprintln!("adjustment time n0 = {n0}");
            let steps = inflated.steps_on_path(path)?;
            let r_tilde = reference_sequence(&steps, &r0)?;
            verdicts.push(check_acceptable_reduction(&cov.betas, n0, red.beta_star));
            // the recursion needs a reference with no cross-scale blocks
            if r_tilde.iter().all(|rt| is_block_diagonal(rt, split)) {
                let c: Vec<SymMatrix> = cov
                    .c_l
                    .iter()
                    .map(|c| c.embed(split.large(), split.dim()))
                    .collect();
                let nu = nu_sequence(&c, &r_tilde)?;
                verdicts.push(check_nu_recursion(&nu, *r, red.r_prime));
            }
            Ok(Some(ReferenceCheck {
                r_tilde,
                extra: Some(d_full),
                n0,
                verdicts,
            }))
        }
    }
}

fn is_block_diagonal(m: &SymMatrix, split: &ScaleSplit) -> bool {
    let m = m.as_matrix();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    split
        .large()
        .iter()
        .all(|&i| split.small().iter().all(|&j| m[(i, j)].abs() <= 1e-12 * scale))
}

fn bound_verdict(diag: &DiagnosticsTrace, from: usize) -> Option<Verdict> {
    let mut seen = false;
    for row in diag.rows.iter().filter(|r| r.step >= from) {
        match row.loewner_ok {
            Some(false) => {
                return Some(Verdict::fail(
                    "reference_bound",
                    Witness {
                        step: Some(row.step),
                        value: row.nu.unwrap_or(f64::NAN),
                        eigenvector: None,
                    },
                ))
            }
            Some(true) => seen = true,
            None => {}
        }
    }
    seen.then(|| Verdict::pass("reference_bound"))
}

fn reference_tuple(rc: &Option<ReferenceCheck>, r: f64) -> Option<(&[SymMatrix], f64, Option<&SymMatrix>)> {
    rc.as_ref()
        .map(|rc| (rc.r_tilde.as_slice(), r, rc.extra.as_ref()))
}

fn simulate_run(run: &Run, built: &Built) -> Result<Trajectory> {
    let x0 = initial_state(built, run.cfg.seed);
    Ok(simulate(&built.system, &x0, run.cfg.horizon, run.cfg.seed)?)
}

pub fn simulate_cmd(run: &Run) -> Result<Outcome> {
    let built = build(&run.cfg)?;
    let traj = simulate_run(run, &built)?;
    write_with(&run.out.join("trajectory.csv"), |w| traj.write_csv(w))?;
    Ok(true)
}

pub fn filter_cmd(run: &Run) -> Result<Outcome> {
    let built = build(&run.cfg)?;
    let spec = run.cfg.filter();
    let traj = simulate_run(run, &built)?;
    let fcfg = filter_config(&built, spec)?;
    let split = &built.system.split;
    let cov = covariance_path(&traj.path, split, &fcfg)?;
    let m0 = DVector::zeros(split.dim());
    let means = cov.run_means(&traj.path, &traj, &m0);
    let maha = mahalanobis_trace(&traj, &means, &cov)?;

    let trace = FilterTrace {
        rows: means
            .iter()
            .enumerate()
            .map(|(n, m)| FilterTraceRow {
                step: n,
                mean: m.clone(),
                cov_trace: cov.estimator[n].trace(),
                cov_norm: cov.estimator[n].norm(),
                maha_sq: maha.get(n).copied(),
                beta: n.checked_sub(1).and_then(|k| cov.betas.get(k).copied()),
            })
            .collect(),
    };

    let rc = reference_check(&built, &traj.path, &fcfg, &cov)?;
    let diag = DiagnosticsTrace::assemble(&cov, None, reference_tuple(&rc, built.reduction.r))?;
    let mut verdicts = Vec::new();
    if let Some(rc) = &rc {
        verdicts.extend(rc.verdicts.iter().cloned());
        verdicts.extend(bound_verdict(&diag, rc.n0));
    }

    write_with(&run.out.join("trajectory.csv"), |w| traj.write_csv(w))?;
    write_with(&run.out.join("filter_trace.csv"), |w| trace.write_csv(w))?;
    write_with(&run.out.join("diagnostics.csv"), |w| diag.write_csv(w))?;
    write_json(&run.out.join("verdicts.json"), &verdicts)?;
    Ok(report(&verdicts))
}

/// `max ‖A_S‖` over the coefficient values, the decay rate the DRKF bound needs.
fn small_scale_decay(built: &Built) -> f64 {
    let small = built.system.split.small();
    built
        .system
        .process
        .distinct_steps()
        .iter()
        .map(|s| spectral_norm(&s.a().select(small, small).to_dense()))
        .fold(0.0, f64::max)
}

fn drkf_bound_verdict(
    built: &Built,
    path: &CoefficientPath,
    summary: &MonteCarloSummary,
    v_s0: &SymMatrix,
) -> Result<Option<Verdict>> {
    const NAME: &str = "drkf_error_bound";
    let lambda_s = small_scale_decay(built);
    if !(lambda_s < 1.0) {
        eprintln!("skipping {NAME}: small scales do not decay (norm {lambda_s})");
        return Ok(None);
    }
    let g = gamma_sigma(path, &built.system.split, v_s0, path.len())?;
    let e0 = summary.maha[0];
    for n in 0..summary.maha.len() {
        let bound = drkf_error_bound(&DrkfBoundInputs {
            r: built.reduction.r,
            lambda_s,
            gamma_sigma: g,
            p: built.system.p(),
            e0_maha: e0,
            n,
        })?;
        if summary.maha[n] > bound + 3.0 * summary.maha_se[n] {
            return Ok(Some(Verdict::fail(
                NAME,
                Witness {
                    step: Some(n),
                    value: summary.maha[n] - bound,
                    eigenvector: None,
                },
            )));
        }
    }
    Ok(Some(Verdict::pass(NAME)))
}

pub fn criteria_cmd(run: &Run) -> Result<Outcome> {
    let built = build(&run.cfg)?;
    let spec = run.cfg.filter();
    let trials = run.cfg.trials;
    if trials < 100 {
        return Err(Error::TooFewTrials(trials).into());
    }
    let path = built
        .system
        .process
        .sample_path(run.cfg.horizon, run.cfg.seed);
    let fcfg = filter_config(&built, spec)?;
    let split = &built.system.split;
    let cov = covariance_path(&path, split, &fcfg)?;
    let m0 = DVector::zeros(split.dim());
    let mut mc = MonteCarloConfig::new(trials, run.cfg.seed);
    mc.exec = run.exec;
    let mc_run = monte_carlo(&path, &cov, &m0, &built.prior, &mc, 0)?;
    let summary = &mc_run.summary;
    let psi = PsiTrace {
        psi: summary.psi.clone(),
        psi_se: summary.psi_se.clone(),
        betas: cov.betas.clone(),
    };

    let rc = reference_check(&built, &path, &fcfg, &cov)?;
    let diag =
        DiagnosticsTrace::assemble(&cov, Some(summary), reference_tuple(&rc, built.reduction.r))?;
    let mut verdicts = Vec::new();
    match &fcfg {
        FilterConfig::Kalman { .. } => verdicts.push(psi.check_dominated(0)),
        FilterConfig::Rkf { .. } => {
            let n0 = rc.as_ref().map_or(0, |rc| rc.n0);
            verdicts.push(psi.check_dominated(n0));
            verdicts.push(psi.check_recursion());
            verdicts.push(mahalanobis_monitor(
                summary,
                built.reduction.beta_star,
                n0,
            ));
        }
        FilterConfig::Drkf { v_s0, .. } => {
            verdicts.extend(drkf_bound_verdict(&built, &path, summary, v_s0)?);
        }
    }
    if let Some(rc) = &rc {
        verdicts.extend(rc.verdicts.iter().cloned());
        verdicts.extend(bound_verdict(&diag, rc.n0));
    }

    write_with(&run.out.join("diagnostics.csv"), |w| diag.write_csv(w))?;
    write_with(&run.out.join("trials.csv"), |w| {
        writeln!(w, "trial,maha_per_dim_avg,mse_avg")?;
        for (i, (m, e)) in mc_run
            .trial_maha_avg
            .iter()
            .zip(&mc_run.trial_mse_avg)
            .enumerate()
        {
            writeln!(w, "{i},{m},{e}")?;
        }
        Ok(())
    })?;
    write_json(&run.out.join("verdicts.json"), &verdicts)?;
    Ok(report(&verdicts))
}

#[derive(Serialize)]
struct CutoffTable {
    preset: String,
    k_max: usize,
    reduction: ReductionParams,
    epsilon: f64,
    sigma_o: f64,
    drkf: usize,
    rkf: usize,
    rkf_base10: usize,
    intermittent: Option<IntermittentCutoffs>,
}

#[derive(Serialize)]
struct IntermittentCutoffs {
    gamma_bar: f64,
    drkf: usize,
    rkf: usize,
    rkf_mean_beta: f64,
}

pub fn turbulence_cmd(run: &Run) -> Result<Outcome> {
    let spec = run
        .cfg
        .turbulence
        .as_ref()
        .context("missing [turbulence] table")?;
    let (mut params, mut red) = preset(&spec.preset, spec.k_max)?;
    if let Some(p) = &spec.params {
        params = p.clone();
    }
    if let Some(r) = spec.reduction {
        red = r;
    }
    let prior = rkf_smallscale_prior(&params, &red)?;
    let intermittent = match spec.gamma_bar {
        Some(g) => {
            let (rkf, model) = intermittent_rkf_cutoff(&params, &red, g, spec.sigma_o)?;
            Some(IntermittentCutoffs {
                gamma_bar: g,
                drkf: intermittent_drkf_cutoff(&params, spec.epsilon, red.r, spec.sigma_o)?,
                rkf,
                rkf_mean_beta: model.mean_beta(),
            })
        }
        None => None,
    };
    let table = CutoffTable {
        preset: spec.preset.clone(),
        k_max: params.k_max,
        reduction: red,
        epsilon: spec.epsilon,
        sigma_o: spec.sigma_o,
        drkf: drkf_cutoff(&params, spec.epsilon, red.r)?,
        rkf: prior.n,
        rkf_base10: rkf_cutoff_base10(&params, &red)?,
        intermittent,
    };
    write_json(&run.out.join("cutoffs.json"), &table)?;

    write_with(&run.out.join("delta.csv"), |w| {
        writeln!(w, "index,mode,delta")?;
        let first = 2 * prior.n - 1;
        for (j, d) in prior.delta.iter().enumerate() {
            writeln!(w, "{},{},{}", first + j, mode_of(first + j), d)?;
        }
        Ok(())
    })?;

    let mut eps: Vec<f64> = spec.epsilon_sweep.clone();
    if !eps.contains(&spec.epsilon) {
        eps.push(spec.epsilon);
    }
    eps.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for e in eps {
        let plain = drkf_cutoff(&params, e, red.r).map_err(|err| anyhow::anyhow!("epsilon {e}: {err}"))?;
        let inter = intermittent_drkf_cutoff(&params, e, red.r, spec.sigma_o)
            .map_err(|err| anyhow::anyhow!("epsilon {e}: {err}"))?;
        rows.push((e, plain, inter));
    }
    write_with(&run.out.join("sweep.csv"), |w| {
        writeln!(w, "epsilon,drkf_cutoff,intermittent_drkf_cutoff")?;
        for (e, a, b) in &rows {
            writeln!(w, "{e},{a},{b}")?;
        }
        Ok(())
    })?;

    let mut verdicts = Vec::new();
    if spec.verify {
        let obs = TurbulenceObservation::Equispaced {
            sigma_o: spec.sigma_o,
        };
        let (v, sol) = verify_rkf_prior(&params, &obs, &red, &prior, DEFAULT_STATIONARY_TOL)?;
        sol.export(&run.out.join("reference.csv"))?;
        verdicts.push(v);
        write_json(&run.out.join("verdicts.json"), &verdicts)?;
    }
    println!(
        "drkf cutoff {}, rkf cutoff {} (base-10 variant {})",
        table.drkf, table.rkf, table.rkf_base10
    );
    if let Some(i) = &table.intermittent {
        println!(
            "intermittent (gamma_bar {}): drkf {}, rkf {}",
            i.gamma_bar, i.drkf, i.rkf
        );
    }
    Ok(report(&verdicts))
}

pub fn bench_cmd(run: &Run) -> Result<Outcome> {
    let spec = run.cfg.bench.as_ref();
    let reps = spec.map_or(5, |b| b.reps);
    if reps < 5 {
        bail!("bench.reps must be at least 5, got {reps}");
    }
    let grid = spec.and_then(|b| b.cells()).unwrap_or_else(default_grid);
    let report = run_scaling(&grid, reps, run.cfg.seed)?;
    write_with(&run.out.join("bench.csv"), |w| report.write_csv(w))?;
    write_with(&run.out.join("slopes.csv"), |w| report.write_slopes_csv(w))?;
    if run.plot {
        std::fs::write(run.out.join("bench.gp"), plot_script("bench.csv", "bench.png"))?;
    }
    for s in &report.slopes {
        println!(
            "{} vs {} at {:?}: slope {:.2} ({} points)",
            s.filter, s.variable, s.fixed, s.slope, s.points
        );
    }
    Ok(true)
}
