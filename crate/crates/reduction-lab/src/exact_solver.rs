//! Exact trajectory generation from independent random data.
//!
//! A trajectory is determined by a drawn terminal energy `H` (distributed by
//! the priors) and a Brownian motion `B`. The information process
//! `ξ_t = H ∫₀ᵗ σ ds + B_t` and the driving integral `η_t = ∫₀ᵗ σ dξ`
//! follow by construction, and the conditional filter
//!
//! ```text
//! π_it ∝ π_i · exp(E_i η_t − ½ E_i² ∫₀ᵗ σ² ds)
//! ```
//!
//! yields the posterior, energy, variance and third central moment along the
//! path in closed form. The per-step pair `(ΔB, Δ∫σ dB)` is drawn jointly
//! Gaussian with its exact covariance, so the filter inputs are exact in
//! distribution at the grid times; the only discretization left anywhere is
//! the quadrature in the innovation drift integral.
//!
//! All operations are pure given their inputs and a seed, so paths can be
//! simulated concurrently with per-path seeds derived via [`path_seed`].

use crate::coupling::CouplingSchedule;
use crate::error::{Error, Result};
use crate::spectrum::{assemble_state, LuedersBasis, Spectrum, StateVector};
use crate::stats::normalize_log_weights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Default rejection threshold for random-data recovery: trajectories whose
/// terminal max posterior is below `1 - RECOVERY_TOL` are considered ambiguous.
pub const RECOVERY_TOL: f64 = 1e-4;

/// Strictly increasing simulation times starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::validation("grid", "needs at least two time points"));
        }
        if times[0] != 0.0 {
            return Err(Error::validation("grid", "must start at t = 0"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("grid times".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation(
                "grid",
                "times must be strictly increasing",
            ));
        }
        Ok(TimeGrid { times })
    }

    /// `steps` equal intervals covering `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::validation("grid.t_end", "must be finite and > 0"));
        }
        if steps == 0 {
            return Err(Error::validation("grid.steps", "must be at least 1"));
        }
        let times = (0..=steps)
            .map(|j| t_end * j as f64 / steps as f64)
            .collect();
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least two points
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Check the grid fits inside the schedule's domain.
    pub fn validate_for(&self, schedule: &CouplingSchedule) -> Result<()> {
        match schedule {
            CouplingSchedule::FiniteTime { horizon, .. } => {
                if self.last() >= *horizon {
                    return Err(Error::Domain(format!(
                        "grid reaches {} but the finite-time horizon is T = {horizon}",
                        self.last()
                    )));
                }
            }
            CouplingSchedule::Tabulated { table } => {
                let end = table.last().unwrap().0;
                if self.last() > end {
                    return Err(Error::Domain(format!(
                        "grid reaches {} beyond the tabulated domain end {end}",
                        self.last()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// One realization of the independent random data and the processes built
/// from it, evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: TimeGrid,
    /// Index of the drawn outcome in the spectrum.
    pub outcome_index: usize,
    /// Drawn terminal energy `E_k`.
    pub outcome_energy: f64,
    /// Brownian noise `B` at grid times.
    pub b: Vec<f64>,
    /// Information process `ξ_t = H ∫σ ds + B_t`.
    pub xi: Vec<f64>,
    /// Driving integral `η_t = H ∫σ² ds + ∫σ dB`.
    pub eta: Vec<f64>,
    /// `∫₀ᵗ σ dB`, sampled jointly with `B`.
    pub stoch_int_sigma_db: Vec<f64>,
    /// Number of steps on which the per-step covariance of `(ΔB, Δ∫σ dB)` was
    /// singular (σ effectively constant over the step) and the conditional
    /// relation `Δ∫σ dB = (∫σ ds/Δt)·ΔB` was used with no independent noise.
    pub degenerate_steps: usize,
}

/// Per-path seed derived from a master seed; stable across execution order.
pub fn path_seed(master_seed: u64, path_index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z ^= z >> 30;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master_seed ^ mix(path_index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Draw a full sample path: the outcome from the priors, then the Brownian
/// layers step by step.
pub fn sample_path(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SamplePath> {
    grid.validate_for(schedule)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let k = draw_outcome(spectrum, &mut rng);
    build_path(spectrum, schedule, grid, k, &mut rng)
}

/// Sample a path conditional on a fixed outcome index (no outcome draw).
pub fn sample_path_with_outcome(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    seed: u64,
    outcome_index: usize,
) -> Result<SamplePath> {
    grid.validate_for(schedule)?;
    if outcome_index >= spectrum.len() {
        return Err(Error::Index {
            index: outcome_index,
            len: spectrum.len(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    build_path(spectrum, schedule, grid, outcome_index, &mut rng)
}

fn draw_outcome(spectrum: &Spectrum, rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in spectrum.priors().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    spectrum.len() - 1
}

fn build_path(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    outcome_index: usize,
    rng: &mut ChaCha12Rng,
) -> Result<SamplePath> {
    let energy = spectrum.energies()[outcome_index];
    let times = grid.times();
    let n = times.len();
    let mut b = vec![0.0; n];
    let mut sdb = vec![0.0; n];
    let mut degenerate = 0usize;

    for j in 1..n {
        let (t0, t1) = (times[j - 1], times[j]);
        let dt = t1 - t0;
        let c12 = schedule.int_sigma(t0, t1)?;
        let c22 = schedule.int_sigma_sq(t0, t1)?;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let db = dt.sqrt() * z1;
        // Conditional variance of Δ∫σdB given ΔB; zero exactly when σ is
        // constant over the step (Cauchy-Schwarz equality).
        let resid = c22 - c12 * c12 / dt;
        if resid <= 1e-12 * c22 {
            degenerate += 1;
        }
        let dsdb = (c12 / dt) * db + resid.max(0.0).sqrt() * z2;
        b[j] = b[j - 1] + db;
        sdb[j] = sdb[j - 1] + dsdb;
    }

    let mut xi = vec![0.0; n];
    let mut eta = vec![0.0; n];
    for j in 1..n {
        xi[j] = energy * schedule.int_sigma(0.0, times[j])? + b[j];
        eta[j] = energy * schedule.int_sigma_sq(0.0, times[j])? + sdb[j];
    }

    Ok(SamplePath {
        grid: grid.clone(),
        outcome_index,
        outcome_energy: energy,
        b,
        xi,
        eta,
        stoch_int_sigma_db: sdb,
        degenerate_steps: degenerate,
    })
}

/// Log-domain conditional posterior given `η_t` and `∫₀ᵗ σ² ds`.
pub(crate) fn posterior_from_eta(spectrum: &Spectrum, eta: f64, int_sq: f64) -> Vec<f64> {
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(spectrum.priors())
        .map(|(&e, &p)| p.ln() + e * eta - 0.5 * e * e * int_sq)
        .collect();
    normalize_log_weights(&log_w)
}

/// Conditional probability vector `π_it` given the driving value `η_t`.
pub fn filter_posterior(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    eta_t: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if !eta_t.is_finite() {
        return Err(Error::NonFinite("eta".into()));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("filter time t = {t}")));
    }
    let int_sq = schedule.int_sigma_sq(0.0, t)?;
    Ok(posterior_from_eta(spectrum, eta_t, int_sq))
}

/// Restart the filter at time `s` from an intermediate posterior, consuming
/// only the increments `η_t − η_s` and `∫ₛᵗ σ² du`. Algebraically identical to
/// running the full-history filter.
pub fn restart_filter(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    posterior_at_s: &[f64],
    s: f64,
    eta_increment: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if posterior_at_s.len() != spectrum.len() {
        return Err(Error::Dimension {
            expected: spectrum.len(),
            got: posterior_at_s.len(),
        });
    }
    if !eta_increment.is_finite() {
        return Err(Error::NonFinite("eta increment".into()));
    }
    if !(0.0 <= s && s <= t) {
        return Err(Error::Domain(format!("restart interval [{s}, {t}]")));
    }
    let int_sq = schedule.int_sigma_sq(s, t)?;
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(posterior_at_s)
        .map(|(&e, &p)| p.ln() + e * eta_increment - 0.5 * e * e * int_sq)
        .collect();
    Ok(normalize_log_weights(&log_w))
}

/// Posterior mean, variance and third central moment of the energy.
pub fn energy_and_moments(spectrum: &Spectrum, posteriors: &[f64]) -> (f64, f64, f64) {
    debug_assert_eq!(posteriors.len(), spectrum.len());
    let energies = spectrum.energies();
    let h: f64 = energies.iter().zip(posteriors).map(|(e, p)| e * p).sum();
    let mut v = 0.0;
    let mut kappa = 0.0;
    for (&e, &p) in energies.iter().zip(posteriors) {
        let d = e - h;
        v += p * d * d;
        kappa += p * d * d * d;
    }
    (h, v, kappa)
}

/// Innovation process `W_t = ξ_t − ∫₀ᵗ σ_s H_s ds`. The drift integral is
/// trapezoidal in the energy with the exact σ measure per step,
/// `∫ σ ds · ½(H_j + H_{j+1})`, which reduces to the plain trapezoidal rule
/// for constant σ and stays finite for couplings unbounded at `t = 0`.
pub fn innovation_path(
    schedule: &CouplingSchedule,
    path: &SamplePath,
    energy: &[f64],
) -> Result<Vec<f64>> {
    let times = path.grid.times();
    if energy.len() != times.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: energy.len(),
        });
    }
    let mut w = vec![0.0; times.len()];
    let mut drift = 0.0;
    for j in 1..times.len() {
        let step = schedule.int_sigma(times[j - 1], times[j])?;
        drift += step * 0.5 * (energy[j - 1] + energy[j]);
        w[j] = path.xi[j] - drift;
    }
    Ok(w)
}

/// Filter outputs along a full path.
#[derive(Debug, Clone)]
pub struct ReductionTrajectory {
    pub grid: TimeGrid,
    /// Posterior vector per grid time.
    pub posteriors: Vec<Vec<f64>>,
    /// Conditional energy `H_t`.
    pub energy: Vec<f64>,
    /// Conditional variance `V_t`.
    pub variance: Vec<f64>,
    /// Third central moment `κ_t`.
    pub third_moment: Vec<f64>,
    /// Innovation `W_t`.
    pub innovation: Vec<f64>,
    /// Assembled states when requested.
    pub states: Option<Vec<StateVector>>,
}

impl ReductionTrajectory {
    pub fn terminal_posteriors(&self) -> &[f64] {
        self.posteriors.last().unwrap()
    }

    pub fn terminal_max_posterior(&self) -> f64 {
        self.terminal_posteriors()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluate the conditional filter along an existing sample path.
pub fn trajectory_from_path(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &SamplePath,
    basis: Option<&LuedersBasis>,
) -> Result<ReductionTrajectory> {
    let times = path.grid.times();
    let n = times.len();
    let mut posteriors = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut third = Vec::with_capacity(n);
    for j in 0..n {
        let int_sq = schedule.int_sigma_sq(0.0, times[j])?;
        let post = posterior_from_eta(spectrum, path.eta[j], int_sq);
        let (h, v, k) = energy_and_moments(spectrum, &post);
        posteriors.push(post);
        energy.push(h);
        variance.push(v);
        third.push(k);
    }
    let innovation = innovation_path(schedule, path, &energy)?;
    let states = match basis {
        Some(basis) => Some(assemble_states(spectrum, basis, &posteriors, times)?),
        None => None,
    };
    Ok(ReductionTrajectory {
        grid: path.grid.clone(),
        posteriors,
        energy,
        variance,
        third_moment: third,
        innovation,
        states,
    })
}

/// Draw a path and evaluate the filter along it.
pub fn run_exact(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    seed: u64,
    basis: Option<&LuedersBasis>,
) -> Result<(SamplePath, ReductionTrajectory)> {
    let path = sample_path(spectrum, schedule, grid, seed)?;
    let trajectory = trajectory_from_path(spectrum, schedule, &path, basis)?;
    Ok((path, trajectory))
}

/// Solution conditional on a fixed outcome `E_k`, written purely in terms of
/// the noise: with `ω_i = E_i − E_k`,
///
/// ```text
/// π_it ∝ π_i · exp(ω_i ∫₀ᵗ σ dB − ½ ω_i² ∫₀ᵗ σ² ds)
/// ```
///
/// On a path whose drawn outcome is `k` this reproduces
/// [`trajectory_from_path`] through a different factorization of the same
/// weights. Only the noise layers of `path` are read; its drawn outcome is
/// ignored.
pub fn conditional_solution(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &SamplePath,
    outcome_index: usize,
    basis: Option<&LuedersBasis>,
) -> Result<ReductionTrajectory> {
    if outcome_index >= spectrum.len() {
        return Err(Error::Index {
            index: outcome_index,
            len: spectrum.len(),
        });
    }
    let e_k = spectrum.energies()[outcome_index];
    let times = path.grid.times();
    let n = times.len();
    let mut posteriors = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut third = Vec::with_capacity(n);
    for j in 0..n {
        let int_sq = schedule.int_sigma_sq(0.0, times[j])?;
        let sdb = path.stoch_int_sigma_db[j];
        let log_w: Vec<f64> = spectrum
            .energies()
            .iter()
            .zip(spectrum.priors())
            .map(|(&e, &p)| {
                let omega = e - e_k;
                p.ln() + omega * sdb - 0.5 * omega * omega * int_sq
            })
            .collect();
        let post = normalize_log_weights(&log_w);
        let (h, v, k) = energy_and_moments(spectrum, &post);
        posteriors.push(post);
        energy.push(h);
        variance.push(v);
        third.push(k);
    }
    // Information process implied by the fixed outcome and the shared noise.
    let mut cond_path = path.clone();
    cond_path.outcome_index = outcome_index;
    cond_path.outcome_energy = e_k;
    for j in 0..n {
        cond_path.xi[j] = e_k * schedule.int_sigma(0.0, times[j])? + path.b[j];
    }
    let innovation = innovation_path(schedule, &cond_path, &energy)?;
    let states = match basis {
        Some(basis) => Some(assemble_states(spectrum, basis, &posteriors, times)?),
        None => None,
    };
    Ok(ReductionTrajectory {
        grid: path.grid.clone(),
        posteriors,
        energy,
        variance,
        third_moment: third,
        innovation,
        states,
    })
}

/// Random data recovered from a collapsed trajectory.
#[derive(Debug, Clone)]
pub struct RecoveredData {
    pub outcome_index: usize,
    pub outcome_energy: f64,
    /// Reconstructed noise `B̂_t = ξ_t − Ĥ ∫₀ᵗ σ ds`.
    pub noise: Vec<f64>,
}

/// Invert the construction: read the terminal outcome off the collapsed
/// posterior (argmax) and subtract its signal from the information process.
pub fn recover_random_data(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    trajectory: &ReductionTrajectory,
    xi: &[f64],
    recovery_tol: f64,
) -> Result<RecoveredData> {
    let times = trajectory.grid.times();
    if xi.len() != times.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: xi.len(),
        });
    }
    let terminal = trajectory.terminal_posteriors();
    let (k, &max_p) = terminal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if max_p < 1.0 - recovery_tol {
        return Err(Error::NotCollapsed {
            max_posterior: max_p,
            tol: recovery_tol,
            terminal_posteriors: terminal.to_vec(),
        });
    }
    let e = spectrum.energies()[k];
    let mut noise = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        noise.push(xi[j] - e * schedule.int_sigma(0.0, t)?);
    }
    Ok(RecoveredData {
        outcome_index: k,
        outcome_energy: e,
        noise,
    })
}

fn assemble_states(
    spectrum: &Spectrum,
    basis: &LuedersBasis,
    posteriors: &[Vec<f64>],
    times: &[f64],
) -> Result<Vec<StateVector>> {
    posteriors
        .iter()
        .zip(times)
        .map(|(post, &t)| assemble_state(spectrum, basis, post, t))
        .collect()
}

/// Render a trajectory as CSV (`t,xi,eta,B,W,H_t,V_t,kappa_t,pi_1,...,pi_N`),
/// full double precision. An optional `source` tag appends a last column used
/// when exporting integrator comparisons.
pub fn trajectory_csv(
    path: &SamplePath,
    trajectory: &ReductionTrajectory,
    source: Option<&str>,
) -> String {
    let n_levels = trajectory.posteriors[0].len();
    let mut out = String::new();
    out.push_str("t,xi,eta,B,W,H_t,V_t,kappa_t");
    for i in 1..=n_levels {
        out.push_str(&format!(",pi_{i}"));
    }
    if source.is_some() {
        out.push_str(",source");
    }
    out.push('\n');
    for (j, &t) in path.grid.times().iter().enumerate() {
        let cells = [
            t,
            path.xi[j],
            path.eta[j],
            path.b[j],
            trajectory.innovation[j],
            trajectory.energy[j],
            trajectory.variance[j],
            trajectory.third_moment[j],
        ];
        let mut row: Vec<String> = cells.iter().map(|x| format!("{x:.16e}")).collect();
        row.extend(trajectory.posteriors[j].iter().map(|x| format!("{x:.16e}")));
        if let Some(tag) = source {
            row.push(tag.to_string());
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{correlation, mean_and_stderr, sample_variance};
    use approx::assert_abs_diff_eq;

    fn desk_spectrum() -> Spectrum {
        Spectrum::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn grid_construction_rules() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 2.0]).is_ok());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let ft = CouplingSchedule::finite_time(1.0, 1.5).unwrap();
        assert!(g.validate_for(&ft).is_err());
    }

    #[test]
    fn filter_at_time_zero_returns_priors() {
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let post = filter_posterior(&spec, &sched, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(post[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(post[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn filter_symmetry_point() {
        // exponent of level 2 is E η − ½E² I = 0 at η = ½ I for E = 1.
        let spec = desk_spectrum();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let post = filter_posterior(&spec, &sched, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(post[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(post[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn filter_matches_independent_evaluation() {
        // π₂ = e/(1+e) at η = 1.5, I = 1, computed independently.
        let spec = desk_spectrum();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let post = filter_posterior(&spec, &sched, 1.5, 1.0).unwrap();
        let e1 = std::f64::consts::E;
        assert_abs_diff_eq!(post[1], e1 / (1.0 + e1), epsilon = 1e-14);
        assert_abs_diff_eq!(post[1], 0.731059, epsilon = 1e-6);
        assert!(filter_posterior(&spec, &sched, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn moments_of_eigenstate_and_symmetric_state() {
        let spec = desk_spectrum();
        let (h, v, k) = energy_and_moments(&spec, &[1.0, 0.0]);
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.0, epsilon = 1e-15);
        let (h, v, k) = energy_and_moments(&spec, &[0.5, 0.5]);
        assert_abs_diff_eq!(h, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_against_brute_force_oracle() {
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        // Mass 0.731059 on E = 1, 0.268941 on E = 0.
        let post = vec![0.2689414213699951, 0.7310585786300049];
        let (h, v, k) = energy_and_moments(&spec, &post);
        // Brute-force oracle sums, written out explicitly.
        let oh: f64 = post[0] * 0.0 + post[1] * 1.0;
        let ov: f64 = post[0] * (0.0 - oh).powi(2) + post[1] * (1.0 - oh).powi(2);
        let ok: f64 = post[0] * (0.0 - oh).powi(3) + post[1] * (1.0 - oh).powi(3);
        assert_abs_diff_eq!(h, oh, epsilon = 1e-15);
        assert_abs_diff_eq!(v, ov, epsilon = 1e-15);
        assert_abs_diff_eq!(k, ok, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 0.196612, epsilon = 1e-6);
        assert_abs_diff_eq!(k, -0.090858, epsilon = 1e-6);
    }

    #[test]
    fn single_level_path_is_pure_signal_plus_noise() {
        let spec = Spectrum::new(vec![2.0], vec![1.0]).unwrap();
        let sched = CouplingSchedule::constant(1.5).unwrap();
        let grid = TimeGrid::uniform(2.0, 50).unwrap();
        let (path, traj) = run_exact(&spec, &sched, &grid, 11, None).unwrap();
        assert_eq!(path.outcome_energy, 2.0);
        for (j, &t) in grid.times().iter().enumerate() {
            assert_abs_diff_eq!(path.xi[j], 2.0 * 1.5 * t + path.b[j], epsilon = 1e-12);
            // With a single level the innovation reduces to the noise.
            assert_abs_diff_eq!(traj.innovation[j], path.b[j], epsilon = 1e-12);
            assert_abs_diff_eq!(traj.energy[j], 2.0, epsilon = 1e-15);
            assert_abs_diff_eq!(traj.variance[j], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn outcome_frequencies_match_priors() {
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let n = 100_000;
        let mut count = 0usize;
        for i in 0..n {
            let path = sample_path(&spec, &sched, &grid, path_seed(7, i as u64)).unwrap();
            if path.outcome_index == 0 {
                count += 1;
            }
        }
        let freq = count as f64 / n as f64;
        let sigma = (0.3 * 0.7 / n as f64).sqrt();
        assert!(
            (freq - 0.3).abs() < 3.0 * sigma,
            "freq {freq} deviates from 0.3 by more than 3 binomial sigma {sigma}"
        );
    }

    #[test]
    fn stochastic_integral_second_moment_matches_isometry() {
        // E[(∫σ dB)_t²] = ∫σ² ds, checked on a non-constant schedule.
        let spec = Spectrum::new(vec![1.0], vec![1.0]).unwrap();
        let sched = CouplingSchedule::exponential_decay(1.3, 0.7).unwrap();
        let grid = TimeGrid::uniform(2.0, 16).unwrap();
        let n = 4000;
        let mut sq = Vec::with_capacity(n);
        for i in 0..n {
            let path = sample_path(&spec, &sched, &grid, path_seed(21, i as u64)).unwrap();
            let x = *path.stoch_int_sigma_db.last().unwrap();
            sq.push(x * x);
        }
        let target = sched.int_sigma_sq(0.0, 2.0).unwrap();
        let m = crate::stats::mean(&sq);
        let rel = (m - target).abs() / target;
        assert!(
            rel < 3.0 / (n as f64).sqrt(),
            "relative error {rel} exceeds 3/sqrt(n)"
        );
    }

    #[test]
    fn constant_sigma_steps_are_degenerate_and_consistent() {
        let spec = desk_spectrum();
        let sched = CouplingSchedule::constant(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let path = sample_path(&spec, &sched, &grid, 3).unwrap();
        assert_eq!(path.degenerate_steps, 10);
        // Δ∫σdB = σ ΔB exactly for constant σ.
        for j in 0..grid.len() {
            assert_abs_diff_eq!(path.stoch_int_sigma_db[j], 2.0 * path.b[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_reproduces_bit_identical_paths() {
        let spec = desk_spectrum();
        let sched = CouplingSchedule::exponential_decay(1.0, 0.3).unwrap();
        let grid = TimeGrid::uniform(3.0, 64).unwrap();
        let a = sample_path(&spec, &sched, &grid, 12345).unwrap();
        let b = sample_path(&spec, &sched, &grid, 12345).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&spec, &sched, &grid, 12346).unwrap();
        assert_ne!(a.b, c.b);
    }

    #[test]
    fn innovation_increments_follow_the_brownian_law() {
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let steps = 20;
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        let dt = 1.0 / steps as f64;
        let n = 2000;
        let mut inc10 = Vec::with_capacity(n);
        let mut inc11 = Vec::with_capacity(n);
        for i in 0..n {
            let (_, traj) = run_exact(&spec, &sched, &grid, path_seed(99, i as u64), None).unwrap();
            inc10.push(traj.innovation[11] - traj.innovation[10]);
            inc11.push(traj.innovation[12] - traj.innovation[11]);
            assert_abs_diff_eq!(traj.innovation[0], 0.0, epsilon = 1e-15);
        }
        let (m, se) = mean_and_stderr(&inc10);
        assert!(
            m.abs() < 3.0 * se,
            "increment mean {m} not within 3 stderr {se}"
        );
        let var = sample_variance(&inc10);
        let se_var = dt * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (var - dt).abs() < 3.0 * se_var,
            "increment variance {var} vs dt {dt} beyond 3 sigma {se_var}"
        );
        let rho = correlation(&inc10, &inc11);
        assert!(
            rho.abs() < 3.0 / (n as f64).sqrt(),
            "lag-1 autocorrelation {rho} not within 3 sigma"
        );
    }

    #[test]
    fn posterior_martingale_initial_values() {
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let (_, traj) = run_exact(&spec, &sched, &grid, 4, None).unwrap();
        assert_abs_diff_eq!(traj.posteriors[0][0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(traj.energy[0], 0.7, epsilon = 1e-14);
    }

    #[test]
    fn restart_filter_identities() {
        let spec = Spectrum::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let sched = CouplingSchedule::exponential_decay(1.2, 0.4).unwrap();
        let grid = TimeGrid::uniform(2.0, 32).unwrap();
        let path = sample_path(&spec, &sched, &grid, 77).unwrap();

        // s = t leaves the posterior unchanged.
        let mid = 16;
        let t_mid = grid.times()[mid];
        let post_mid = filter_posterior(&spec, &sched, path.eta[mid], t_mid).unwrap();
        let same = restart_filter(&spec, &sched, &post_mid, t_mid, 0.0, t_mid).unwrap();
        for (a, b) in same.iter().zip(&post_mid) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }

        // s = 0 from the priors is the plain filter.
        let t_end = grid.last();
        let full = filter_posterior(&spec, &sched, path.eta[grid.len() - 1], t_end).unwrap();
        let from_zero = restart_filter(
            &spec,
            &sched,
            spec.priors(),
            0.0,
            path.eta[grid.len() - 1],
            t_end,
        )
        .unwrap();
        for (a, b) in from_zero.iter().zip(&full) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }

        // Restart midway agrees with the full-history filter.
        let inc = path.eta[grid.len() - 1] - path.eta[mid];
        let restarted = restart_filter(&spec, &sched, &post_mid, t_mid, inc, t_end).unwrap();
        for (a, b) in restarted.iter().zip(&full) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_solution_matches_unconditional_on_shared_data() {
        let spec = Spectrum::new(vec![0.0, 1.0, 2.5], vec![0.25, 0.35, 0.4]).unwrap();
        let sched = CouplingSchedule::exponential_decay(1.0, 0.25).unwrap();
        let grid = TimeGrid::uniform(4.0, 40).unwrap();
        let (path, traj) = run_exact(&spec, &sched, &grid, 2024, None).unwrap();
        let cond = conditional_solution(&spec, &sched, &path, path.outcome_index, None).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in cond.posteriors.iter().zip(&traj.posteriors) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-12, "max posterior difference {worst}");
        for (x, y) in cond.innovation.iter().zip(&traj.innovation) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        assert!(matches!(
            conditional_solution(&spec, &sched, &path, 5, None),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn recovery_round_trip_on_collapsed_paths() {
        // ∫σ²·gap² = 100 makes residual posterior mass negligible.
        let spec = Spectrum::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let grid = TimeGrid::uniform(100.0, 200).unwrap();
        for i in 0..20 {
            let (path, traj) = run_exact(&spec, &sched, &grid, path_seed(5, i), None).unwrap();
            let rec = recover_random_data(&spec, &sched, &traj, &path.xi, RECOVERY_TOL).unwrap();
            assert_eq!(rec.outcome_index, path.outcome_index);
            let s_end = sched.int_sigma(0.0, grid.last()).unwrap();
            let bound = (rec.outcome_energy.abs() * s_end * 1e-4).max(1e-9);
            for (bh, b) in rec.noise.iter().zip(&path.b) {
                assert!((bh - b).abs() <= bound);
            }
        }
    }

    #[test]
    fn recovery_rejects_ambiguous_trajectories() {
        let spec = desk_spectrum();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let grid = TimeGrid::uniform(0.01, 4).unwrap();
        let (path, traj) = run_exact(&spec, &sched, &grid, 1, None).unwrap();
        match recover_random_data(&spec, &sched, &traj, &path.xi, RECOVERY_TOL) {
            Err(Error::NotCollapsed {
                terminal_posteriors,
                ..
            }) => assert_eq!(terminal_posteriors.len(), 2),
            other => panic!("expected NotCollapsed, got {other:?}"),
        }
    }

    #[test]
    fn energy_is_monotone_in_eta_with_slope_equal_to_variance() {
        let spec = Spectrum::new(vec![-0.5, 0.7, 2.0], vec![0.3, 0.45, 0.25]).unwrap();
        let sched = CouplingSchedule::exponential_decay(1.1, 0.3).unwrap();
        let h_step = 1e-5 / spec.range();
        for (eta, t) in [(0.0, 0.5), (0.8, 1.0), (-1.3, 2.0), (2.4, 3.0)] {
            let post = filter_posterior(&spec, &sched, eta, t).unwrap();
            let (_, v, _) = energy_and_moments(&spec, &post);
            let up = filter_posterior(&spec, &sched, eta + h_step, t).unwrap();
            let dn = filter_posterior(&spec, &sched, eta - h_step, t).unwrap();
            let (h_up, _, _) = energy_and_moments(&spec, &up);
            let (h_dn, _, _) = energy_and_moments(&spec, &dn);
            let slope = (h_up - h_dn) / (2.0 * h_step);
            assert!(slope > 0.0);
            assert!(
                ((slope - v) / v).abs() < 1e-6,
                "finite-difference slope {slope} vs variance {v}"
            );
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let spec = desk_spectrum();
        let sched = CouplingSchedule::constant(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let (path, traj) = run_exact(&spec, &sched, &grid, 8, None).unwrap();
        let csv = trajectory_csv(&path, &traj, None);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,xi,eta,B,W,H_t,V_t,kappa_t,pi_1,pi_2"
        );
        assert_eq!(csv.lines().count(), 6);
        let tagged = trajectory_csv(&path, &traj, Some("exact"));
        assert!(tagged.lines().next().unwrap().ends_with(",source"));
        assert!(tagged.lines().nth(1).unwrap().ends_with(",exact"));
    }

    proptest::proptest! {
        #[test]
        fn posteriors_normalized_everywhere(
            seed in 0u64..1000,
            steps in 2usize..30,
        ) {
            let spec = Spectrum::new(vec![0.0, 1.0, 3.0], vec![0.2, 0.5, 0.3]).unwrap();
            let sched = CouplingSchedule::constant(1.0).unwrap();
            let grid = TimeGrid::uniform(2.0, steps).unwrap();
            let (_, traj) = run_exact(&spec, &sched, &grid, seed, None).unwrap();
            for post in &traj.posteriors {
                let total: f64 = post.iter().sum();
                proptest::prop_assert!((total - 1.0).abs() < 1e-12);
                proptest::prop_assert!(post.iter().all(|p| (-1e-15..=1.0 + 1e-12).contains(p)));
            }
            for (j, v) in traj.variance.iter().enumerate() {
                proptest::prop_assert!(*v >= 0.0);
                // Consistency with the alternative variance route Σπ E² − H².
                let e2: f64 = spec.energies().iter().zip(&traj.posteriors[j])
                    .map(|(e, p)| e * e * p).sum();
                let alt = e2 - traj.energy[j] * traj.energy[j];
                proptest::prop_assert!((v - alt).abs() < 1e-10);
            }
        }
    }
}
