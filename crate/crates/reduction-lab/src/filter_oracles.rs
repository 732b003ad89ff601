//! Independent posterior computations used as ground truth for the main
//! filter: a discretized path-density Bayes filter built from the Brownian
//! covariance structure, and a filter over increments of the noise-moderated
//! process `ζ` with `dζ = σ⁻¹ dξ`.
//!
//! Both work from pointwise `ξ` samples only (no exact stochastic integrals),
//! so they approach the exact filter at rate O(Δ) as the partition refines.
//! Ito convention throughout: sums use the left-endpoint value of σ on each
//! interval.

use crate::coupling::CouplingSchedule;
use crate::error::{Error, Result};
use crate::exact_solver::TimeGrid;
use crate::spectrum::Spectrum;
use crate::stats::normalize_log_weights;
use nalgebra::DMatrix;

/// Dense covariance matrices are only built up to this size; the posterior
/// operations themselves use O(n) telescoped sums.
pub const COVARIANCE_CHECK_CAP: usize = 500;

/// Equally spaced samples of the information process on `[0, t]`.
#[derive(Debug, Clone)]
pub struct DiscretizedPath {
    xi: Vec<f64>,
    delta: f64,
    t_end: f64,
}

impl DiscretizedPath {
    /// `xi_values` holds `ξ` at `s_k = k·t_end/n` for `k = 0..=n`, starting
    /// with `ξ_0 = 0`.
    pub fn new(t_end: f64, xi_values: Vec<f64>) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::validation("path.t_end", "must be finite and > 0"));
        }
        if xi_values.is_empty() {
            return Err(Error::validation("path.xi", "must be non-empty"));
        }
        if xi_values[0] != 0.0 {
            return Err(Error::validation("path.xi", "must start at xi_0 = 0"));
        }
        if xi_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("path.xi".into()));
        }
        let n = xi_values.len() - 1;
        let delta = if n > 0 { t_end / n as f64 } else { t_end };
        Ok(DiscretizedPath {
            xi: xi_values,
            delta,
            t_end,
        })
    }

    /// Number of intervals n.
    pub fn intervals(&self) -> usize {
        self.xi.len() - 1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    fn s(&self, k: usize) -> f64 {
        // Equal spacing exact to one ulp of t/n.
        self.t_end * k as f64 / self.intervals().max(1) as f64
    }
}

/// Discretized path-density Bayes posterior (telescoped evaluation):
///
/// ```text
/// π_i ∝ π_i · exp(E_i Σ_k σ(s_k)(ξ_{k+1}−ξ_k) − ½ E_i² Σ_k σ(s_k)² Δ)
/// ```
pub fn bayes_path_posterior(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &DiscretizedPath,
) -> Result<Vec<f64>> {
    let n = path.intervals();
    if n == 0 {
        return Ok(spectrum.priors().to_vec());
    }
    let mut lin = 0.0; // Σ σ(s_k) Δξ_k
    let mut quad = 0.0; // Σ σ(s_k)² Δ
    for k in 0..n {
        let s = schedule.sigma(path.s(k))?;
        lin += s * (path.xi[k + 1] - path.xi[k]);
        quad += s * s * path.delta;
    }
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(spectrum.priors())
        .map(|(&e, &p)| p.ln() + e * lin - 0.5 * e * e * quad)
        .collect();
    Ok(normalize_log_weights(&log_w))
}

/// The same posterior evaluated through the quadratic form of the Gaussian
/// path density, using the tridiagonal inverse of the Brownian covariance
/// directly: exponent `−½ αᵀ Σ⁻¹ α` with `α_i(s_k) = ξ_k − E_i c_k` and
/// `c_k = Σ_{l<k} σ(s_l) Δ`. The `E_i`-independent part of the form cancels
/// in the normalization.
pub fn bayes_path_posterior_quadratic(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &DiscretizedPath,
) -> Result<Vec<f64>> {
    let n = path.intervals();
    if n == 0 {
        return Ok(spectrum.priors().to_vec());
    }
    let delta = path.delta;
    // Discrete signal integral at each node, same Ito convention as the
    // telescoped route so the two evaluations are algebraically equal.
    let mut c = vec![0.0; n + 1];
    for k in 0..n {
        c[k + 1] = c[k] + schedule.sigma(path.s(k))? * delta;
    }
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(spectrum.priors())
        .map(|(&e, &p)| {
            let alpha = |k: usize| path.xi[k] - e * c[k];
            // (Σ⁻¹ α)_k row by row; rows 1..n-1 are (−α_{k−1} + 2α_k − α_{k+1})/Δ
            // with α_0 = 0, and the last row is (α_n − α_{n−1})/Δ.
            let mut q = 0.0;
            for k in 1..=n {
                let row = if k < n {
                    (2.0 * alpha(k) - alpha(k - 1) - alpha(k + 1)) / delta
                } else {
                    (alpha(n) - alpha(n - 1)) / delta
                };
                q += alpha(k) * row;
            }
            p.ln() - 0.5 * q
        })
        .collect();
    Ok(normalize_log_weights(&log_w))
}

/// Increments of the noise-moderated process with their per-step variances.
#[derive(Debug, Clone)]
pub struct IncrementObservations {
    /// `y_k = ζ_{k+1} − ζ_k`.
    y: Vec<f64>,
    /// `v_k = ∫ σ⁻² du` over step k; may be `+inf` (zero-information step).
    v: Vec<f64>,
    delta: f64,
}

impl IncrementObservations {
    pub fn new(y: Vec<f64>, v: Vec<f64>, delta: f64) -> Result<Self> {
        if y.len() != v.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: v.len(),
            });
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::validation(
                "observations.delta",
                "must be finite and > 0",
            ));
        }
        if v.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::validation("observations.v", "variances must be > 0"));
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observations.y".into()));
        }
        Ok(IncrementObservations { y, v, delta })
    }

    /// Build observations from a sampled `ξ` path via `Δζ_k = σ(s_k)⁻¹ Δξ_k`,
    /// with the exact per-step variance integral rather than its `σ⁻² Δ`
    /// approximation.
    pub fn from_xi_path(schedule: &CouplingSchedule, path: &DiscretizedPath) -> Result<Self> {
        let n = path.intervals();
        let mut y = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for k in 0..n {
            let s = schedule.sigma(path.s(k))?;
            y.push((path.xi[k + 1] - path.xi[k]) / s);
            v.push(schedule.int_inv_sigma_sq(path.s(k), path.s(k + 1))?);
        }
        IncrementObservations::new(y, v, path.delta())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Gaussian-likelihood posterior over the increments:
///
/// ```text
/// π_i ∝ π_i · exp(E_i Δ Σ_k v_k⁻¹ y_k − ½ E_i² Δ² Σ_k v_k⁻¹)
/// ```
pub fn increment_posterior(
    spectrum: &Spectrum,
    observations: &IncrementObservations,
) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Ok(spectrum.priors().to_vec());
    }
    let mut sy = 0.0; // Σ y_k / v_k
    let mut sv = 0.0; // Σ 1 / v_k
    for (y, v) in observations.y.iter().zip(&observations.v) {
        if v.is_infinite() {
            continue;
        }
        sy += y / v;
        sv += 1.0 / v;
    }
    let d = observations.delta;
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(spectrum.priors())
        .map(|(&e, &p)| p.ln() + e * d * sy - 0.5 * e * e * d * d * sv)
        .collect();
    Ok(normalize_log_weights(&log_w))
}

/// Build the Brownian covariance `Σ_kl = min(s_k, s_l)` over the grid's
/// positive times along with its tridiagonal inverse. Intended as a structural
/// check; capped at [`COVARIANCE_CHECK_CAP`] because the dense product is
/// O(n³).
pub fn covariance_check(grid: &TimeGrid) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = &grid.times()[1..];
    let n = s.len();
    if n == 0 {
        return Err(Error::validation(
            "grid",
            "needs at least one positive time",
        ));
    }
    if n > COVARIANCE_CHECK_CAP {
        return Err(Error::validation(
            "grid",
            format!("covariance check capped at n = {COVARIANCE_CHECK_CAP}, got {n}"),
        ));
    }
    let sigma = DMatrix::from_fn(n, n, |i, j| s[i.min(j)]);
    let mut inv = DMatrix::zeros(n, n);
    let step = |k: usize| if k == 0 { s[0] } else { s[k] - s[k - 1] };
    for k in 0..n {
        let mut diag = 1.0 / step(k);
        if k + 1 < n {
            diag += 1.0 / step(k + 1);
            inv[(k, k + 1)] = -1.0 / step(k + 1);
            inv[(k + 1, k)] = -1.0 / step(k + 1);
        }
        inv[(k, k)] = diag;
    }
    Ok((sigma, inv))
}
