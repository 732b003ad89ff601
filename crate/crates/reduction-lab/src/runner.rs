//! Experiment orchestration behind the CLI: build the model from a
//! [`RunConfig`], run the requested experiment, write output files atomically,
//! and report pass/fail flags.

use crate::analysis::{bridge_transform, ensemble_report, finite_time_equivalence, EnsembleReport};
use crate::config::{ExperimentKind, RunConfig};
use crate::coupling::CouplingSchedule;
use crate::error::{Error, Result};
use crate::exact_solver::{
    energy_and_moments, filter_posterior, path_seed, run_exact, sample_path, trajectory_csv,
    ReductionTrajectory, SamplePath, TimeGrid,
};
use crate::filter_oracles::{
    bayes_path_posterior, increment_posterior, DiscretizedPath, IncrementObservations,
};
use crate::sde_integrator::integrate_pi;
use crate::spectrum::Spectrum;
use crate::stats::{median, sample_variance};
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// Result of a run: files written plus the conjunction of the experiment's
/// pass/fail flags (None when the experiment has no flags).
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub checks: Option<bool>,
}

/// Write-then-rename so long runs never leave torn files behind.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::validation("output", "missing file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!("{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Run the configured experiment, writing outputs under `out_dir`.
/// `threads` caps the worker pool for path-parallel experiments; the outputs
/// are byte-identical for any thread count.
pub fn run(config: &RunConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::validation("threads", e.to_string()))?;
            pool.install(|| run_inner(config, out_dir))
        }
        None => run_inner(config, out_dir),
    }
}

fn run_inner(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    match config.experiment {
        ExperimentKind::Trajectory => run_trajectory(config, out_dir),
        ExperimentKind::Ensemble | ExperimentKind::PartialMeasurement => {
            run_ensemble(config, out_dir)
        }
        ExperimentKind::OracleCompare => run_oracle_compare(config, out_dir),
        ExperimentKind::FiniteTime => run_finite_time(config, out_dir),
        ExperimentKind::Convergence => run_convergence(config, out_dir),
    }
}

fn run_trajectory(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (spectrum, basis) = config.build_spectrum()?;
    let schedule = config.build_schedule()?;
    let grid = config.build_grid(&schedule)?;
    let basis_ref = config.with_states.then_some(&basis);
    let (path, traj) = run_exact(&spectrum, &schedule, &grid, config.seed, basis_ref)?;
    let csv = trajectory_csv(&path, &traj, None);
    let file = out_dir.join("trajectory.csv");
    atomic_write(&file, &csv)?;
    Ok(RunOutcome {
        files: vec![file],
        checks: None,
    })
}

fn run_ensemble(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (spectrum, _) = config.build_spectrum()?;
    let schedule = config.build_schedule()?;
    let grid = config.build_grid(&schedule)?;
    let report: EnsembleReport =
        ensemble_report(&spectrum, &schedule, &grid, config.paths, config.seed)?;
    let json = out_dir.join("ensemble_report.json");
    let text = out_dir.join("ensemble_report.txt");
    let curves = out_dir.join("ensemble_curves.csv");
    atomic_write(&json, &serde_json::to_string_pretty(&report)?)?;
    atomic_write(&text, &report.text())?;
    atomic_write(&curves, &report.curves_csv())?;
    Ok(RunOutcome {
        files: vec![json, text, curves],
        checks: Some(report.flags.all_ok()),
    })
}

#[derive(Debug, Serialize)]
pub struct OracleRecord {
    #[serde(rename = "n")]
    pub intervals: usize,
    pub max_abs_error: f64,
    pub max_abs_error_bayes: f64,
    pub max_abs_error_increment: f64,
    /// Per-level maxima over paths and both oracle routes.
    pub per_level_errors: Vec<f64>,
    pub path_seed: u64,
}

#[derive(Debug, Serialize)]
pub struct OracleCompareReport {
    pub t_end: f64,
    pub paths: usize,
    pub master_seed: u64,
    pub threshold: f64,
    pub records: Vec<OracleRecord>,
    pub errors_decrease: bool,
    pub finest_below_threshold: bool,
    pub passed: bool,
}

fn run_oracle_compare(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (spectrum, _) = config.build_spectrum()?;
    let schedule = config.build_schedule()?;
    let t_end = config
        .grid
        .t_end
        .ok_or_else(|| Error::validation("grid.t_end", "required for the oracle comparison"))?;
    let mut intervals = config.oracle.intervals.clone();
    intervals.sort_unstable();
    intervals.dedup();
    let n_max = *intervals.last().unwrap();
    let fine = TimeGrid::uniform(t_end, n_max)?;
    fine.validate_for(&schedule)?;
    let n_levels = spectrum.len();

    // One fixed realization per path at the finest partition; coarser
    // partitions see subsampled values of the same trajectory.
    struct PathErrors {
        bayes: Vec<Vec<f64>>, // [interval][level]
        incr: Vec<Vec<f64>>,
    }
    let per_path: Result<Vec<PathErrors>> = (0..config.oracle.paths)
        .into_par_iter()
        .map(|p| {
            let seed = path_seed(config.seed, p as u64);
            let path = sample_path(&spectrum, &schedule, &fine, seed)?;
            let exact = filter_posterior(&spectrum, &schedule, *path.eta.last().unwrap(), t_end)?;
            let mut bayes = Vec::with_capacity(intervals.len());
            let mut incr = Vec::with_capacity(intervals.len());
            for &n in &intervals {
                let factor = n_max / n;
                let xi: Vec<f64> = path.xi.iter().step_by(factor).cloned().collect();
                let disc = DiscretizedPath::new(t_end, xi)?;
                let bp = bayes_path_posterior(&spectrum, &schedule, &disc)?;
                let obs = IncrementObservations::from_xi_path(&schedule, &disc)?;
                let ip = increment_posterior(&spectrum, &obs)?;
                bayes.push(bp.iter().zip(&exact).map(|(a, b)| (a - b).abs()).collect());
                incr.push(ip.iter().zip(&exact).map(|(a, b)| (a - b).abs()).collect());
            }
            Ok(PathErrors { bayes, incr })
        })
        .collect();
    let per_path = per_path?;

    let mut records = Vec::with_capacity(intervals.len());
    for (k, &n) in intervals.iter().enumerate() {
        let mut per_level = vec![0.0f64; n_levels];
        let mut max_b = 0.0f64;
        let mut max_i = 0.0f64;
        for pe in &per_path {
            for i in 0..n_levels {
                per_level[i] = per_level[i].max(pe.bayes[k][i]).max(pe.incr[k][i]);
                max_b = max_b.max(pe.bayes[k][i]);
                max_i = max_i.max(pe.incr[k][i]);
            }
        }
        records.push(OracleRecord {
            intervals: n,
            max_abs_error: max_b.max(max_i),
            max_abs_error_bayes: max_b,
            max_abs_error_increment: max_i,
            per_level_errors: per_level,
            path_seed: config.seed,
        });
    }

    let errors_decrease = records
        .windows(2)
        .all(|w| w[1].max_abs_error <= w[0].max_abs_error);
    let threshold = 1e-3;
    let finest_below_threshold = records.last().unwrap().max_abs_error < threshold;
    let report = OracleCompareReport {
        t_end,
        paths: config.oracle.paths,
        master_seed: config.seed,
        threshold,
        records,
        errors_decrease,
        finest_below_threshold,
        passed: errors_decrease && finest_below_threshold,
    };
    let file = out_dir.join("oracle_compare.json");
    atomic_write(&file, &serde_json::to_string_pretty(&report)?)?;
    Ok(RunOutcome {
        files: vec![file],
        checks: Some(report.passed),
    })
}

#[derive(Debug, Serialize)]
pub struct BetaVarianceCheck {
    pub t: f64,
    pub sample_variance: f64,
    pub expected: f64,
    pub three_sigma: f64,
    pub ok: bool,
}

#[derive(Debug, Serialize)]
pub struct FiniteTimeFlags {
    pub route_agreement_ok: bool,
    pub collapse_ok: bool,
    pub reconstruction_ok: bool,
    pub beta_variance_ok: bool,
    pub beta_terminal_ok: bool,
}

#[derive(Debug, Serialize)]
pub struct FiniteTimeReport {
    pub horizon: f64,
    pub sigma: f64,
    pub steps: usize,
    pub paths: usize,
    pub master_seed: u64,
    /// Max over paths of the two-route energy difference for `t ≤ 0.9 T`.
    pub max_route_diff_to_09t: f64,
    pub route_tolerance: f64,
    pub collapse_fraction_info: f64,
    pub collapse_fraction_bridge: f64,
    /// Max over paths of the round-trip error for `t ≤ 0.9 T`.
    pub reconstruction_max_err: f64,
    /// First-order budget `10 Δt / T` for the round trip.
    pub reconstruction_tolerance: f64,
    pub beta_checks: Vec<BetaVarianceCheck>,
    /// `4 sqrt(T · terminal_eps)`.
    pub beta_terminal_bound: f64,
    pub beta_terminal_ok_fraction: f64,
    pub flags: FiniteTimeFlags,
}

fn run_finite_time(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (spectrum, _) = config.build_spectrum()?;
    let schedule = config.build_schedule()?;
    let (sigma, horizon) = match &schedule {
        CouplingSchedule::FiniteTime { sigma, horizon } => (*sigma, *horizon),
        other => {
            return Err(Error::Regime(format!(
                "finite_time experiment needs a finite_time schedule, got {:?}",
                other.classify().tag
            )))
        }
    };
    let steps = config.grid.steps;
    let terminal_eps = config.grid.terminal_eps.unwrap_or(1e-6);
    let grid = crate::analysis::finite_time_grid(horizon, steps, terminal_eps)?;

    // Checkpoints for the bridge-noise law at T/4, T/2, 3T/4 (uniform part).
    let check_idx: Vec<usize> = (1..4).map(|k| k * steps / 4).collect();
    let check_times: Vec<f64> = check_idx.iter().map(|&j| grid.times()[j]).collect();

    struct PathSummary {
        route_diff: f64,
        collapsed_info: bool,
        collapsed_bridge: bool,
        recon_err: f64,
        beta_at_checks: Vec<f64>,
        beta_terminal: f64,
    }
    let summaries: Result<Vec<PathSummary>> = (0..config.paths)
        .into_par_iter()
        .map(|p| {
            let seed = path_seed(config.seed, p as u64);
            let path = sample_path(&spectrum, &schedule, &grid, seed)?;
            let eq = finite_time_equivalence(&spectrum, &schedule, &path)?;
            let bridge = bridge_transform(&path, &schedule)?;
            let mut recon = 0.0f64;
            for (j, &t) in grid.times().iter().enumerate() {
                if t <= 0.9 * horizon {
                    recon = recon.max((bridge.xi_reconstructed[j] - path.xi[j]).abs());
                }
            }
            Ok(PathSummary {
                route_diff: eq.max_diff_to_09t,
                collapsed_info: eq.terminal_max_pi_info > 0.999,
                collapsed_bridge: eq.terminal_max_pi_bridge > 0.999,
                recon_err: recon,
                beta_at_checks: check_idx.iter().map(|&j| bridge.beta[j]).collect(),
                beta_terminal: *bridge.beta_exact.last().unwrap(),
            })
        })
        .collect();
    let summaries = summaries?;

    let n = summaries.len() as f64;
    let max_route_diff = summaries.iter().map(|s| s.route_diff).fold(0.0, f64::max);
    let frac_info = summaries.iter().filter(|s| s.collapsed_info).count() as f64 / n;
    let frac_bridge = summaries.iter().filter(|s| s.collapsed_bridge).count() as f64 / n;
    let recon_max = summaries.iter().map(|s| s.recon_err).fold(0.0, f64::max);

    let mut beta_checks = Vec::new();
    for (c, &t) in check_times.iter().enumerate() {
        let vals: Vec<f64> = summaries.iter().map(|s| s.beta_at_checks[c]).collect();
        let var = sample_variance(&vals);
        let expected = t * (horizon - t) / horizon;
        let three_sigma = 3.0 * expected * (2.0 / (n - 1.0)).sqrt();
        beta_checks.push(BetaVarianceCheck {
            t,
            sample_variance: var,
            expected,
            three_sigma,
            ok: (var - expected).abs() < three_sigma,
        });
    }

    let beta_terminal_bound = 4.0 * (horizon * terminal_eps).sqrt();
    let beta_terminal_ok_fraction = summaries
        .iter()
        .filter(|s| s.beta_terminal.abs() < beta_terminal_bound)
        .count() as f64
        / n;

    let route_tolerance = 1e-6;
    let reconstruction_tolerance = 10.0 / steps as f64;
    let flags = FiniteTimeFlags {
        route_agreement_ok: max_route_diff < route_tolerance,
        collapse_ok: frac_info >= 0.99 && frac_bridge >= 0.99,
        reconstruction_ok: recon_max < reconstruction_tolerance,
        beta_variance_ok: beta_checks.iter().all(|b| b.ok),
        beta_terminal_ok: beta_terminal_ok_fraction >= 0.99,
    };
    let passed = flags.route_agreement_ok
        && flags.collapse_ok
        && flags.reconstruction_ok
        && flags.beta_variance_ok
        && flags.beta_terminal_ok;
    let report = FiniteTimeReport {
        horizon,
        sigma,
        steps,
        paths: config.paths,
        master_seed: config.seed,
        max_route_diff_to_09t: max_route_diff,
        route_tolerance,
        collapse_fraction_info: frac_info,
        collapse_fraction_bridge: frac_bridge,
        reconstruction_max_err: recon_max,
        reconstruction_tolerance,
        beta_checks,
        beta_terminal_bound,
        beta_terminal_ok_fraction,
        flags,
    };
    let file = out_dir.join("finite_time.json");
    atomic_write(&file, &serde_json::to_string_pretty(&report)?)?;
    Ok(RunOutcome {
        files: vec![file],
        checks: Some(passed),
    })
}

#[derive(Debug, Serialize)]
pub struct ConvergenceReport {
    pub t_end: f64,
    pub paths: usize,
    pub master_seed: u64,
    /// Step sizes, largest first.
    pub dts: Vec<f64>,
    /// Median over paths of `max_t |π_EM − π_exact|`, same order as `dts`.
    pub median_max_error: Vec<f64>,
    pub monotone: bool,
    pub finest_threshold: f64,
    pub finest_median: f64,
    pub passed: bool,
}

fn run_convergence(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (spectrum, _) = config.build_spectrum()?;
    let schedule = config.build_schedule()?;
    let t_end = config
        .grid
        .t_end
        .ok_or_else(|| Error::validation("grid.t_end", "required for the convergence sweep"))?;
    let mut dts = config.convergence.dts.clone();
    dts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    dts.dedup();
    let fine_dt = *dts.last().unwrap();
    let fine_steps = (t_end / fine_dt).round() as usize;
    let fine = TimeGrid::uniform(t_end, fine_steps)?;
    fine.validate_for(&schedule)?;

    let errors: Result<Vec<Vec<f64>>> = (0..config.convergence.paths)
        .into_par_iter()
        .map(|p| {
            let seed = path_seed(config.seed, p as u64);
            let (_, traj) = run_exact(&spectrum, &schedule, &fine, seed, None)?;
            let mut per_dt = Vec::with_capacity(dts.len());
            for &dt in &dts {
                let factor = (dt / fine_dt).round() as usize;
                per_dt.push(em_max_error(&spectrum, &schedule, &fine, &traj, factor)?);
            }
            Ok(per_dt)
        })
        .collect();
    let errors = errors?;

    let median_max_error: Vec<f64> = (0..dts.len())
        .map(|k| median(&errors.iter().map(|e| e[k]).collect::<Vec<_>>()))
        .collect();
    let monotone = median_max_error.windows(2).all(|w| w[1] <= w[0]);
    let finest_threshold = 1e-2;
    let finest_median = *median_max_error.last().unwrap();
    let passed = monotone && finest_median < finest_threshold;

    let report = ConvergenceReport {
        t_end,
        paths: config.convergence.paths,
        master_seed: config.seed,
        dts: dts.clone(),
        median_max_error,
        monotone,
        finest_threshold,
        finest_median,
        passed,
    };
    let json = out_dir.join("convergence.json");
    atomic_write(&json, &serde_json::to_string_pretty(&report)?)?;

    // Sample trajectory export with a source tag per integration route.
    let sample_seed = path_seed(config.seed, 0);
    let (path, traj) = run_exact(&spectrum, &schedule, &fine, sample_seed, None)?;
    let mut csv = trajectory_csv(&path, &traj, Some("exact"));
    let body = |s: String| {
        s.split_once('\n')
            .map(|x| x.1.to_string())
            .unwrap_or_default()
    };
    let em = em_trajectory(&spectrum, &schedule, &fine, &path, &traj)?;
    csv.push_str(&body(trajectory_csv(&path, &em, Some("em_pi"))));
    let em_state = em_state_trajectory(&spectrum, &schedule, &fine, &path, &traj)?;
    csv.push_str(&body(trajectory_csv(&path, &em_state, Some("em_state"))));
    let sample_file = out_dir.join("convergence_sample.csv");
    atomic_write(&sample_file, &csv)?;

    Ok(RunOutcome {
        files: vec![json, sample_file],
        checks: Some(passed),
    })
}

/// Max over the coarse grid of the posterior gap between the Euler–Maruyama
/// route (driven by the exact trajectory's innovation increments) and the
/// exact posterior.
fn em_max_error(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    fine: &TimeGrid,
    traj: &ReductionTrajectory,
    factor: usize,
) -> Result<f64> {
    let times: Vec<f64> = fine.times().iter().step_by(factor).cloned().collect();
    let coarse = TimeGrid::new(times)?;
    let w: Vec<f64> = traj.innovation.iter().step_by(factor).cloned().collect();
    let dw: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
    let em = integrate_pi(spectrum, schedule, &coarse, &dw)?;
    let mut worst = 0.0f64;
    for (j, post) in em.iter().enumerate() {
        for (a, b) in post.iter().zip(&traj.posteriors[j * factor]) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Full EM posterior trajectory on the fine grid, packaged for CSV export.
fn em_trajectory(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    path: &SamplePath,
    traj: &ReductionTrajectory,
) -> Result<ReductionTrajectory> {
    let dw: Vec<f64> = traj.innovation.windows(2).map(|p| p[1] - p[0]).collect();
    let posteriors = integrate_pi(spectrum, schedule, grid, &dw)?;
    let mut energy = Vec::with_capacity(posteriors.len());
    let mut variance = Vec::with_capacity(posteriors.len());
    let mut third = Vec::with_capacity(posteriors.len());
    for post in &posteriors {
        let (h, v, k) = energy_and_moments(spectrum, post);
        energy.push(h);
        variance.push(v);
        third.push(k);
    }
    Ok(ReductionTrajectory {
        grid: path.grid.clone(),
        posteriors,
        energy,
        variance,
        third_moment: third,
        innovation: traj.innovation.clone(),
        states: None,
    })
}

/// State-equation EM route in the canonical frame (diagonal Hamiltonian,
/// amplitudes `sqrt(π_i)`), packaged for CSV export.
fn em_state_trajectory(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    path: &SamplePath,
    traj: &ReductionTrajectory,
) -> Result<ReductionTrajectory> {
    let n = spectrum.len();
    let h = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            num_complex::Complex64::new(spectrum.energies()[i], 0.0)
        } else {
            num_complex::Complex64::new(0.0, 0.0)
        }
    });
    let psi0 = crate::spectrum::StateVector::new(
        spectrum
            .priors()
            .iter()
            .map(|p| num_complex::Complex64::new(p.sqrt(), 0.0))
            .collect(),
    )?;
    let dw: Vec<f64> = traj.innovation.windows(2).map(|p| p[1] - p[0]).collect();
    let states = crate::sde_integrator::integrate_state(&psi0, &h, schedule, grid, &dw)?;
    let posteriors: Vec<Vec<f64>> = states
        .iter()
        .map(|s| s.amplitudes().iter().map(|a| a.norm_sqr()).collect())
        .collect();
    let mut energy = Vec::with_capacity(posteriors.len());
    let mut variance = Vec::with_capacity(posteriors.len());
    let mut third = Vec::with_capacity(posteriors.len());
    for post in &posteriors {
        let (h_t, v, k) = energy_and_moments(spectrum, post);
        energy.push(h_t);
        variance.push(v);
        third.push(k);
    }
    Ok(ReductionTrajectory {
        grid: path.grid.clone(),
        posteriors,
        energy,
        variance,
        third_moment: third,
        innovation: traj.innovation.clone(),
        states: Some(states),
    })
}
