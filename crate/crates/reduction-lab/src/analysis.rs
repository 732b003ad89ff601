//! Analytic predictions and ensemble diagnostics: the collapse-tail formula,
//! variance bounds, partial-measurement checks, Born/martingale statistics
//! over path ensembles, and the finite-time Brownian-bridge equivalence.

use crate::coupling::{CollapseRegime, CouplingSchedule, RegimeTag};
use crate::error::{Error, Result};
use crate::exact_solver::{
    energy_and_moments, path_seed, posterior_from_eta, sample_path, SamplePath, TimeGrid,
};
use crate::spectrum::Spectrum;
use crate::stats::{mean_and_stderr, normal_cdf, normalize_log_weights, pairwise_sum};
use rayon::prelude::*;
use serde::Serialize;

/// Terminal posterior mass threshold used when counting collapsed paths.
pub const COLLAPSE_THRESHOLD: f64 = 0.999;

/// Probability that the off-term amplitude factor
/// `M_t = exp(½ω ∫σ dB − ¼ω² ∫σ² ds)` still exceeds `eps` at time `t`.
///
/// Since `∫σ dB / sqrt(∫σ² ds)` is standard normal and `B → −B` maps
/// `ω → −ω`, the probability depends on `|ω|` only:
///
/// ```text
/// P(M_t > ε) = 1 − N(½|ω|·sqrt(I) + 2 ln ε / (|ω|·sqrt(I))),  I = ∫₀ᵗ σ² ds.
/// ```
pub fn collapse_tail_probability(
    omega: f64,
    eps: f64,
    schedule: &CouplingSchedule,
    t: f64,
) -> Result<f64> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(Error::Domain(format!(
            "degenerate energy gap omega = {omega}"
        )));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::validation("eps", "must be finite and > 0"));
    }
    let int_sq = schedule.int_sigma_sq(0.0, t)?;
    if int_sq == 0.0 {
        return Ok(if eps < 1.0 { 1.0 } else { 0.0 });
    }
    if int_sq.is_infinite() {
        return Ok(0.0);
    }
    let root = omega.abs() * int_sq.sqrt();
    Ok(1.0 - normal_cdf(0.5 * root + 2.0 * eps.ln() / root))
}

/// Upper bound on the expected energy variance at time `t`:
/// `(−1 + sqrt(1 + 4 V₀ I)) / (2I)` with `I = ∫₀ᵗ σ² ds`, evaluated in the
/// cancellation-free form `2V₀ / (1 + sqrt(1 + 4 V₀ I))` so the `I → 0` limit
/// is exact.
pub fn variance_upper_bound(v0: f64, schedule: &CouplingSchedule, t: f64) -> Result<f64> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(Error::validation("v0", "must be finite and >= 0"));
    }
    let int_sq = schedule.int_sigma_sq(0.0, t)?;
    if int_sq.is_infinite() {
        return Ok(0.0);
    }
    Ok(2.0 * v0 / (1.0 + (1.0 + 4.0 * v0 * int_sq).sqrt()))
}

/// Lower bound on the terminal expected variance of a partial measurement:
/// `max(0, V₀ − V_max² ∫₀^∞ σ² ds)`. Errors unless the schedule's regime is
/// partial (square-integrable coupling).
pub fn variance_lower_bound(v0: f64, v_max: f64, schedule: &CouplingSchedule) -> Result<f64> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(Error::validation("v0", "must be finite and >= 0"));
    }
    if !(v_max >= 0.0) || !v_max.is_finite() {
        return Err(Error::validation("v_max", "must be finite and >= 0"));
    }
    let regime = schedule.classify();
    if regime.tag != RegimeTag::Partial {
        return Err(Error::Regime(format!(
            "variance lower bound needs a partial-regime schedule, got {:?}",
            regime.tag
        )));
    }
    let total = schedule.total_int_sigma_sq();
    Ok((v0 - v_max * v_max * total).max(0.0))
}

/// Largest energy variance over all states of a bounded spectrum, attained by
/// the equal superposition of the two extreme levels: `(E_N − E_1)² / 4`.
pub fn max_energy_variance(spectrum: &Spectrum) -> f64 {
    let r = spectrum.range();
    0.25 * r * r
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialMeasurementCheck {
    pub total_int_sigma_sq: f64,
    pub lower_bound: f64,
    pub terminal_mean_v: f64,
    pub terminal_stderr_v: f64,
    pub above_lower_bound: bool,
    pub strictly_positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleFlags {
    pub born_ok: bool,
    pub energy_martingale_ok: bool,
    pub pi_martingale_ok: bool,
    pub variance_bound_ok: bool,
    pub variance_supermartingale_ok: bool,
    pub partial_bounds_ok: Option<bool>,
}

impl EnsembleFlags {
    pub fn all_ok(&self) -> bool {
        self.born_ok
            && self.energy_martingale_ok
            && self.pi_martingale_ok
            && self.variance_bound_ok
            && self.variance_supermartingale_ok
            && self.partial_bounds_ok.unwrap_or(true)
    }
}

/// Aggregated Born frequencies, martingale diagnostics and variance curves
/// with their pass/fail flags. All thresholds are three standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub path_count: usize,
    pub master_seed: u64,
    pub regime: CollapseRegime,
    pub energies: Vec<f64>,
    pub priors: Vec<f64>,
    pub h0: f64,
    pub v0: f64,
    pub v_max: f64,
    /// Fraction of paths whose terminal argmax equals each level.
    pub born_frequencies: Vec<f64>,
    /// Binomial standard error under the prior probabilities.
    pub born_stderr: Vec<f64>,
    pub checkpoint_times: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub stderr_h: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub stderr_v: Vec<f64>,
    pub variance_upper_bound: Vec<f64>,
    /// Posterior means per checkpoint and level.
    pub mean_pi: Vec<Vec<f64>>,
    pub stderr_pi: Vec<Vec<f64>>,
    /// Fraction of paths with terminal max posterior above
    /// [`COLLAPSE_THRESHOLD`].
    pub terminal_collapse_fraction: f64,
    pub partial: Option<PartialMeasurementCheck>,
    pub flags: EnsembleFlags,
}

struct PathRecord {
    argmax: usize,
    collapsed: bool,
    h: Vec<f64>,
    v: Vec<f64>,
    pi: Vec<Vec<f64>>,
}

/// Pick up to `max` checkpoint indices with strictly positive times, evenly
/// spread over the grid and always ending at the final time.
fn checkpoint_indices(grid: &TimeGrid, max: usize) -> Vec<usize> {
    let steps = grid.steps();
    let count = max.min(steps);
    (1..=count)
        .map(|k| (k * steps) / count)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Run `path_count` exact paths (in parallel, deterministically seeded) and
/// aggregate the ensemble diagnostics. Aggregation is a fixed-order pairwise
/// reduction, so the result is identical across thread counts.
pub fn ensemble_report(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    path_count: usize,
    master_seed: u64,
) -> Result<EnsembleReport> {
    if path_count < 100 {
        return Err(Error::validation(
            "path_count",
            format!("must be at least 100, got {path_count}"),
        ));
    }
    grid.validate_for(schedule)?;
    let checkpoints = checkpoint_indices(grid, 10);
    let times: Vec<f64> = checkpoints.iter().map(|&j| grid.times()[j]).collect();
    let int_sq: Result<Vec<f64>> = times
        .iter()
        .map(|&t| schedule.int_sigma_sq(0.0, t))
        .collect();
    let int_sq = int_sq?;

    let records: Result<Vec<PathRecord>> = (0..path_count)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(master_seed, i as u64);
            let path = sample_path(spectrum, schedule, grid, seed)?;
            let n_check = checkpoints.len();
            let mut h = Vec::with_capacity(n_check);
            let mut v = Vec::with_capacity(n_check);
            let mut pi = Vec::with_capacity(n_check);
            for (c, &j) in checkpoints.iter().enumerate() {
                let post = posterior_from_eta(spectrum, path.eta[j], int_sq[c]);
                let (hh, vv, _) = energy_and_moments(spectrum, &post);
                h.push(hh);
                v.push(vv);
                pi.push(post);
            }
            let terminal = pi.last().unwrap();
            let (argmax, &max_p) = terminal
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            Ok(PathRecord {
                argmax,
                collapsed: max_p > COLLAPSE_THRESHOLD,
                h,
                v,
                pi,
            })
        })
        .collect();
    let records = records?;

    let n = path_count as f64;
    let n_levels = spectrum.len();
    let n_check = checkpoints.len();

    // Born statistics from the terminal argmax.
    let mut born = vec![0.0; n_levels];
    for r in &records {
        born[r.argmax] += 1.0;
    }
    for b in &mut born {
        *b /= n;
    }
    let born_stderr: Vec<f64> = spectrum
        .priors()
        .iter()
        .map(|p| (p * (1.0 - p) / n).sqrt())
        .collect();
    let born_ok = born
        .iter()
        .zip(spectrum.priors())
        .zip(&born_stderr)
        .all(|((f, p), se)| (f - p).abs() < 3.0 * se.max(1e-12));

    // Checkpoint statistics.
    let column = |f: &dyn Fn(&PathRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let mut mean_h = Vec::with_capacity(n_check);
    let mut stderr_h = Vec::with_capacity(n_check);
    let mut mean_v = Vec::with_capacity(n_check);
    let mut stderr_v = Vec::with_capacity(n_check);
    let mut mean_pi = Vec::with_capacity(n_check);
    let mut stderr_pi = Vec::with_capacity(n_check);
    for c in 0..n_check {
        let (mh, sh) = mean_and_stderr(&column(&|r: &PathRecord| r.h[c]));
        let (mv, sv) = mean_and_stderr(&column(&|r: &PathRecord| r.v[c]));
        mean_h.push(mh);
        stderr_h.push(sh);
        mean_v.push(mv);
        stderr_v.push(sv);
        let mut mp = Vec::with_capacity(n_levels);
        let mut sp = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let (m, s) = mean_and_stderr(&column(&|r: &PathRecord| r.pi[c][i]));
            mp.push(m);
            sp.push(s);
        }
        mean_pi.push(mp);
        stderr_pi.push(sp);
    }

    let h0 = spectrum.prior_mean();
    let (_, v0, _) = energy_and_moments(spectrum, spectrum.priors());
    let energy_martingale_ok = mean_h
        .iter()
        .zip(&stderr_h)
        .all(|(m, se)| (m - h0).abs() < 3.0 * se.max(1e-12));
    let pi_martingale_ok = (0..n_check).all(|c| {
        (0..n_levels).all(|i| {
            (mean_pi[c][i] - spectrum.priors()[i]).abs() < 3.0 * stderr_pi[c][i].max(1e-12)
        })
    });

    let bound: Result<Vec<f64>> = times
        .iter()
        .map(|&t| variance_upper_bound(v0, schedule, t))
        .collect();
    let bound = bound?;
    let variance_bound_ok = mean_v
        .iter()
        .zip(&bound)
        .zip(&stderr_v)
        .all(|((m, b), se)| *m <= b + 3.0 * se);

    // Supermartingale: paired per-path differences between checkpoints must
    // not drift significantly upward.
    let mut variance_supermartingale_ok = true;
    for c in 1..n_check {
        let diffs: Vec<f64> = records.iter().map(|r| r.v[c] - r.v[c - 1]).collect();
        let (md, sd) = mean_and_stderr(&diffs);
        if md >= 3.0 * sd.max(1e-12) {
            variance_supermartingale_ok = false;
        }
    }

    let collapsed = records.iter().filter(|r| r.collapsed).count() as f64 / n;

    let regime = schedule.classify();
    let v_max = max_energy_variance(spectrum);
    let partial = if regime.tag == RegimeTag::Partial {
        let total = schedule.total_int_sigma_sq();
        let lower = variance_lower_bound(v0, v_max, schedule)?;
        let tm = *mean_v.last().unwrap();
        let ts = *stderr_v.last().unwrap();
        Some(PartialMeasurementCheck {
            total_int_sigma_sq: total,
            lower_bound: lower,
            terminal_mean_v: tm,
            terminal_stderr_v: ts,
            above_lower_bound: tm >= lower - 3.0 * ts,
            strictly_positive: tm >= 3.0 * ts,
        })
    } else {
        None
    };
    let partial_bounds_ok = partial
        .as_ref()
        .map(|p| p.above_lower_bound && p.strictly_positive);

    Ok(EnsembleReport {
        path_count,
        master_seed,
        regime,
        energies: spectrum.energies().to_vec(),
        priors: spectrum.priors().to_vec(),
        h0,
        v0,
        v_max,
        born_frequencies: born,
        born_stderr,
        checkpoint_times: times,
        mean_h,
        stderr_h,
        mean_v,
        stderr_v,
        variance_upper_bound: bound,
        mean_pi,
        stderr_pi,
        terminal_collapse_fraction: collapsed,
        partial,
        flags: EnsembleFlags {
            born_ok,
            energy_martingale_ok,
            pi_martingale_ok,
            variance_bound_ok,
            variance_supermartingale_ok,
            partial_bounds_ok,
        },
    })
}

impl EnsembleReport {
    /// Curve export: `t,mean_V,stderr_V,upper_bound,mean_H,stderr_H`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("t,mean_V,stderr_V,upper_bound,mean_H,stderr_H\n");
        for c in 0..self.checkpoint_times.len() {
            let cells = [
                self.checkpoint_times[c],
                self.mean_v[c],
                self.stderr_v[c],
                self.variance_upper_bound[c],
                self.mean_h[c],
                self.stderr_h[c],
            ];
            let row: Vec<String> = cells.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned-column text rendering for humans.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let ok = |b: bool| if b { "pass" } else { "FAIL" };
        out.push_str(&format!(
            "ensemble: {} paths, seed {}, regime {:?}\n",
            self.path_count, self.master_seed, self.regime.tag
        ));
        out.push_str(&format!(
            "h0 = {:.6}  v0 = {:.6}  v_max = {:.6}\n\n",
            self.h0, self.v0, self.v_max
        ));
        out.push_str("born statistics (terminal argmax)\n");
        out.push_str(&format!(
            "{:>12} {:>12} {:>12} {:>12}\n",
            "energy", "prior", "frequency", "3*stderr"
        ));
        for i in 0..self.energies.len() {
            out.push_str(&format!(
                "{:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                self.energies[i],
                self.priors[i],
                self.born_frequencies[i],
                3.0 * self.born_stderr[i]
            ));
        }
        out.push_str(&format!("born flag: {}\n\n", ok(self.flags.born_ok)));
        out.push_str(&format!(
            "{:>10} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
            "t", "mean_H", "stderr_H", "mean_V", "stderr_V", "bound"
        ));
        for c in 0..self.checkpoint_times.len() {
            out.push_str(&format!(
                "{:>10.4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
                self.checkpoint_times[c],
                self.mean_h[c],
                self.stderr_h[c],
                self.mean_v[c],
                self.stderr_v[c],
                self.variance_upper_bound[c]
            ));
        }
        out.push('\n');
        if let Some(p) = &self.partial {
            out.push_str(&format!(
                "partial measurement: total ∫σ² = {:.6}, lower bound {:.6}, terminal mean V {:.6} ± {:.6}\n",
                p.total_int_sigma_sq, p.lower_bound, p.terminal_mean_v, p.terminal_stderr_v
            ));
        }
        out.push_str(&format!(
            "terminal collapse fraction (max π > {COLLAPSE_THRESHOLD}): {:.4}\n\n",
            self.terminal_collapse_fraction
        ));
        out.push_str(&format!(
            "flags: born {}  energy-martingale {}  pi-martingale {}  variance-bound {}  supermartingale {}",
            ok(self.flags.born_ok),
            ok(self.flags.energy_martingale_ok),
            ok(self.flags.pi_martingale_ok),
            ok(self.flags.variance_bound_ok),
            ok(self.flags.variance_supermartingale_ok)
        ));
        if let Some(p) = self.flags.partial_bounds_ok {
            out.push_str(&format!("  partial-bounds {}", ok(p)));
        }
        out.push('\n');
        out
    }
}

/// Bridge-transformed processes of a finite-time path.
///
/// The discretized fields (`xi_star`, `beta`, `xi_reconstructed`) come from
/// left-endpoint Ito sums over the grid, which is all an observer of pointwise
/// `ξ` values can form; they carry O(Δ) quadrature error. The `_exact` fields
/// instead use the exactly-sampled stochastic integrals carried by the path,
/// for which the bridge identities hold to rounding.
#[derive(Debug, Clone)]
pub struct BridgePaths {
    /// `(T−t) Σ_{l<j} Δξ_l/(T−t_l)` — the pinned transform of `ξ`.
    pub xi_star: Vec<f64>,
    /// `ξ*_t − σ t H`, the bridge noise implied by the transform.
    pub beta: Vec<f64>,
    /// Round trip `ξ*_t + ∫₀ᵗ ξ*_s/(T−s) ds` back to `ξ`, with the ds
    /// integral by the trapezoidal rule; first-order overall because of the
    /// Ito sums feeding it.
    pub xi_reconstructed: Vec<f64>,
    /// `(T−t) η_t/(σT)` from the exact integrals.
    pub xi_star_exact: Vec<f64>,
    /// `(T−t) (∫σ dB)_t/(σT)`, the exact bridge-noise representation.
    pub beta_exact: Vec<f64>,
}

fn finite_time_params(schedule: &CouplingSchedule) -> Result<(f64, f64)> {
    match schedule {
        CouplingSchedule::FiniteTime { sigma, horizon } => Ok((*sigma, *horizon)),
        other => Err(Error::Regime(format!(
            "bridge transform needs a finite-time schedule, got {:?}",
            other.classify().tag
        ))),
    }
}

/// Transform a finite-time path into its Brownian-bridge representation.
pub fn bridge_transform(path: &SamplePath, schedule: &CouplingSchedule) -> Result<BridgePaths> {
    let (sigma, horizon) = finite_time_params(schedule)?;
    let times = path.grid.times();
    let n = times.len();
    let h = path.outcome_energy;

    let mut xi_star = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut xi_rec = Vec::with_capacity(n);
    let mut xi_star_exact = Vec::with_capacity(n);
    let mut beta_exact = Vec::with_capacity(n);

    let mut ito_sum = 0.0; // Σ Δξ_l / (T − t_l)
    let mut rec_int = 0.0; // trapezoid of ξ*_s / (T − s) = S_s
    for j in 0..n {
        if j > 0 {
            let dt = times[j] - times[j - 1];
            let prev_sum = ito_sum;
            ito_sum += (path.xi[j] - path.xi[j - 1]) / (horizon - times[j - 1]);
            rec_int += 0.5 * (prev_sum + ito_sum) * dt;
        }
        let remaining = horizon - times[j];
        let star = remaining * ito_sum;
        xi_star.push(star);
        beta.push(star - sigma * times[j] * h);
        xi_rec.push(star + rec_int);
        let star_exact = remaining * path.eta[j] / (sigma * horizon);
        xi_star_exact.push(star_exact);
        beta_exact.push(remaining * path.stoch_int_sigma_db[j] / (sigma * horizon));
    }

    Ok(BridgePaths {
        xi_star,
        beta,
        xi_reconstructed: xi_rec,
        xi_star_exact,
        beta_exact,
    })
}

/// Comparison of the two finite-time energy evaluations (information-process
/// route vs bridge route) along a single path.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteTimeEquivalence {
    pub h_info: Vec<f64>,
    pub h_bridge: Vec<f64>,
    /// Largest |difference| over grid times `t ≤ 0.9 T`.
    pub max_diff_to_09t: f64,
    /// Largest |difference| over the whole grid.
    pub max_diff_all: f64,
    pub terminal_max_pi_info: f64,
    pub terminal_max_pi_bridge: f64,
}

/// Evaluate the conditional energy along a finite-time path through both
/// algebraic routes on the same exactly-transformed data: directly from
/// `(η_t, ∫σ²)`, and from the bridge transform `ξ*_t` with the `T/(T−t)`
/// prefactor.
pub fn finite_time_equivalence(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &SamplePath,
) -> Result<FiniteTimeEquivalence> {
    let (sigma, horizon) = finite_time_params(schedule)?;
    let times = path.grid.times();
    let n = times.len();
    let mut h_info = Vec::with_capacity(n);
    let mut h_bridge = Vec::with_capacity(n);
    let mut max_09 = 0.0f64;
    let mut max_all = 0.0f64;
    let mut pi_info = Vec::new();
    let mut pi_bridge = Vec::new();
    for j in 0..n {
        let t = times[j];
        let int_sq = schedule.int_sigma_sq(0.0, t)?;
        let info = posterior_from_eta(spectrum, path.eta[j], int_sq);
        let (hi, _, _) = energy_and_moments(spectrum, &info);

        let xi_star = (horizon - t) * path.eta[j] / (sigma * horizon);
        let pre = horizon / (horizon - t);
        let log_w: Vec<f64> = spectrum
            .energies()
            .iter()
            .zip(spectrum.priors())
            .map(|(&e, &p)| p.ln() + pre * (sigma * e * xi_star - 0.5 * sigma * sigma * e * e * t))
            .collect();
        let bridge = normalize_log_weights(&log_w);
        let (hb, _, _) = energy_and_moments(spectrum, &bridge);

        let diff = (hi - hb).abs();
        max_all = max_all.max(diff);
        if t <= 0.9 * horizon {
            max_09 = max_09.max(diff);
        }
        h_info.push(hi);
        h_bridge.push(hb);
        if j == n - 1 {
            pi_info = info;
            pi_bridge = bridge;
        }
    }
    let max_pi = |p: &[f64]| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(FiniteTimeEquivalence {
        h_info,
        h_bridge,
        max_diff_to_09t: max_09,
        max_diff_all: max_all,
        terminal_max_pi_info: max_pi(&pi_info),
        terminal_max_pi_bridge: max_pi(&pi_bridge),
    })
}

/// Uniform grid of `steps` intervals on `[0, T(1 − 1/steps)]`, then a
/// geometric tail refining down to `T(1 − terminal_eps)`.
pub fn finite_time_grid(horizon: f64, steps: usize, terminal_eps: f64) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::validation("horizon", "must be finite and > 0"));
    }
    if steps < 2 {
        return Err(Error::validation("steps", "must be at least 2"));
    }
    if !(terminal_eps > 0.0 && terminal_eps < 1.0) {
        return Err(Error::validation("terminal_eps", "must lie in (0, 1)"));
    }
    let mut times: Vec<f64> = (0..steps)
        .map(|j| horizon * j as f64 / steps as f64)
        .collect();
    let mut frac = 1.0 / steps as f64 / 10.0;
    while frac > terminal_eps {
        let t = horizon * (1.0 - frac);
        if t > *times.last().unwrap() {
            times.push(t);
        }
        frac /= 10.0;
    }
    let terminal = horizon * (1.0 - terminal_eps);
    if terminal > *times.last().unwrap() {
        times.push(terminal);
    }
    TimeGrid::new(times)
}

/// Sum of per-path squared values divided by count, in deterministic order.
pub fn mean_of(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}
