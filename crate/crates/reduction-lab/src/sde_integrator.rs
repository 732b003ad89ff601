//! Direct numerical integration of the nonlinear state equation, the
//! posterior dynamics and the density-matrix master equation.
//!
//! These integrators are the cross-validation counterweight to the exact
//! solver: they never see the closed-form filter, only the stochastic
//! differentials
//!
//! ```text
//! dψ = −iĤψ dt − ⅛σ²(Ĥ−H_t)²ψ dt + ½σ(Ĥ−H_t)ψ dW
//! dπ_i = σ (E_i − H_t) π_i dW
//! dρ/dt = −i[Ĥ,ρ] + ¼σ² (ĤρĤ − ½Ĥ²ρ − ½ρĤ²)
//! ```
//!
//! Explicit Euler–Maruyama steps are renormalized after every step: the
//! continuous dynamics preserve the norm exactly, the discrete step does not.

use crate::coupling::CouplingSchedule;
use crate::error::{Error, Result};
use crate::exact_solver::{SamplePath, TimeGrid};
use crate::spectrum::{Spectrum, StateVector};
use crate::stats::normalize_log_weights;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Euler–Maruyama configuration. Only the fixed-grid explicit scheme is
/// implemented; renormalization after each step is the default and what the
/// step functions do.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub renormalize_each_step: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            renormalize_each_step: true,
        }
    }
}

fn matvec(m: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let d = v.len();
    (0..d)
        .map(|i| (0..d).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// One explicit step of the nonlinear state equation, then renormalization.
pub fn em_step_state(
    state: &StateVector,
    h_matrix: &DMatrix<Complex64>,
    sigma_t: f64,
    dt: f64,
    dw: f64,
) -> Result<StateVector> {
    let d = state.dim();
    if h_matrix.nrows() != d || h_matrix.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: h_matrix.nrows(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::validation("dt", "must be > 0"));
    }
    let psi = state.amplitudes();
    let hpsi = matvec(h_matrix, psi);
    let h_t: f64 = psi.iter().zip(&hpsi).map(|(a, b)| (a.conj() * b).re).sum();
    // y = (Ĥ − H_t)ψ, z = (Ĥ − H_t)²ψ
    let y: Vec<Complex64> = hpsi.iter().zip(psi).map(|(hp, a)| hp - a * h_t).collect();
    let hy = matvec(h_matrix, &y);
    let z: Vec<Complex64> = hy.iter().zip(&y).map(|(a, b)| a - b * h_t).collect();

    let i = Complex64::new(0.0, 1.0);
    let next: Vec<Complex64> = (0..d)
        .map(|k| {
            psi[k] - i * hpsi[k] * dt - z[k] * (0.125 * sigma_t * sigma_t * dt)
                + y[k] * (0.5 * sigma_t * dw)
        })
        .collect();
    StateVector::normalized(next)
}

/// One explicit step of the posterior dynamics: update, clip to `[0, 1]`,
/// renormalize. Clipping preserves the absorbing property of eigenstates.
pub fn em_step_pi(posteriors: &[f64], spectrum: &Spectrum, sigma_t: f64, dw: f64) -> Vec<f64> {
    debug_assert_eq!(posteriors.len(), spectrum.len());
    let energies = spectrum.energies();
    let h: f64 = energies.iter().zip(posteriors).map(|(e, p)| e * p).sum();
    let mut next: Vec<f64> = energies
        .iter()
        .zip(posteriors)
        .map(|(&e, &p)| (p + sigma_t * (e - h) * p * dw).clamp(0.0, 1.0))
        .collect();
    let total: f64 = next.iter().sum();
    for p in &mut next {
        *p /= total;
    }
    next
}

/// Integrate the posterior equation along a grid with given per-step noise
/// increments, evaluating σ at the left endpoint of each step.
pub fn integrate_pi(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    dw: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let times = grid.times();
    if dw.len() != times.len() - 1 {
        return Err(Error::Dimension {
            expected: times.len() - 1,
            got: dw.len(),
        });
    }
    let mut out = Vec::with_capacity(times.len());
    out.push(spectrum.priors().to_vec());
    for j in 1..times.len() {
        let sigma = schedule.sigma(times[j - 1])?;
        let next = em_step_pi(out.last().unwrap(), spectrum, sigma, dw[j - 1]);
        out.push(next);
    }
    Ok(out)
}

/// Integrate the state equation along a grid with given noise increments.
pub fn integrate_state(
    initial: &StateVector,
    h_matrix: &DMatrix<Complex64>,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
    dw: &[f64],
) -> Result<Vec<StateVector>> {
    let times = grid.times();
    if dw.len() != times.len() - 1 {
        return Err(Error::Dimension {
            expected: times.len() - 1,
            got: dw.len(),
        });
    }
    let mut out = Vec::with_capacity(times.len());
    out.push(initial.clone());
    for j in 1..times.len() {
        let sigma = schedule.sigma(times[j - 1])?;
        let dt = times[j] - times[j - 1];
        let next = em_step_state(out.last().unwrap(), h_matrix, sigma, dt, dw[j - 1])?;
        out.push(next);
    }
    Ok(out)
}

/// Component weights of the linearized (unnormalized) solution at one grid
/// point, together with their normalization.
#[derive(Debug, Clone)]
pub struct LinearizedSolution {
    /// Raw weights `π_i · exp(E_i η_t − ½ E_i² ∫σ² ds)`. These can overflow
    /// for strongly collapsed trajectories; the linearized route is a
    /// desk-scale verification tool, not the production sampler.
    pub weights: Vec<f64>,
    /// The same weights normalized (stable in the log domain).
    pub posteriors: Vec<f64>,
}

/// Evaluate the linearized route at grid point `index` of a sample path. Its
/// normalization must reproduce the conditional filter exactly; the route
/// differs only in factorization.
pub fn linearized_solution(
    spectrum: &Spectrum,
    schedule: &CouplingSchedule,
    path: &SamplePath,
    index: usize,
) -> Result<LinearizedSolution> {
    let times = path.grid.times();
    if index >= times.len() {
        return Err(Error::Index {
            index,
            len: times.len(),
        });
    }
    let t = times[index];
    let eta = path.eta[index];
    let int_sq = schedule.int_sigma_sq(0.0, t)?;
    let log_w: Vec<f64> = spectrum
        .energies()
        .iter()
        .zip(spectrum.priors())
        .map(|(&e, &p)| p.ln() + e * eta - 0.5 * e * e * int_sq)
        .collect();
    let weights = log_w.iter().map(|l| l.exp()).collect();
    let posteriors = normalize_log_weights(&log_w);
    Ok(LinearizedSolution {
        weights,
        posteriors,
    })
}

/// Trace-one Hermitian positive density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(rho: DMatrix<Complex64>) -> Result<Self> {
        let d = rho.nrows();
        if d == 0 || rho.ncols() != d {
            return Err(Error::validation("rho", "must be square and non-empty"));
        }
        let trace = rho.trace();
        if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return Err(Error::validation(
                "rho",
                format!("trace must be 1 within 1e-10, got {trace}"),
            ));
        }
        let mut defect = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                defect = defect.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
            }
        }
        if defect > 1e-10 {
            return Err(Error::validation(
                "rho",
                format!("not Hermitian: defect {defect:e}"),
            ));
        }
        let herm = (&rho + rho.adjoint()).scale(0.5);
        let min_eig = herm
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::validation(
                "rho",
                format!("not positive semidefinite: min eigenvalue {min_eig:e}"),
            ));
        }
        Ok(DensityMatrix { rho })
    }

    /// Pure-state projector |ψ⟩⟨ψ|.
    pub fn from_pure(state: &StateVector) -> Self {
        let d = state.dim();
        let a = state.amplitudes();
        let rho = DMatrix::from_fn(d, d, |i, j| a[i] * a[j].conj());
        DensityMatrix { rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// `Re tr(ρ Ĥ)`.
    pub fn energy_expectation(&self, h_matrix: &DMatrix<Complex64>) -> f64 {
        (h_matrix * &self.rho).trace().re
    }
}

/// One explicit step of the master equation; Hermiticity is restored by
/// symmetrization and the trace renormalized.
pub fn density_step(
    rho: &DensityMatrix,
    h_matrix: &DMatrix<Complex64>,
    sigma_t: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    let d = rho.dim();
    if h_matrix.nrows() != d || h_matrix.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: h_matrix.nrows(),
        });
    }
    let r = &rho.rho;
    let hr = h_matrix * r;
    let rh = r * h_matrix;
    let comm = &hr - &rh;
    let hrh = &hr * h_matrix;
    let h2 = h_matrix * h_matrix;
    let anti = &h2 * r + r * &h2;
    let i = Complex64::new(0.0, 1.0);
    let quarter = 0.25 * sigma_t * sigma_t;
    let drho = comm.map(|x| -i * x) + (hrh - anti.scale(0.5)).scale(quarter);
    let mut next = r + drho.scale(dt);
    next = (&next + next.adjoint()).scale(0.5);
    let trace = next.trace().re;
    next = next.scale(1.0 / trace);
    Ok(DensityMatrix { rho: next })
}

/// Integrate the master equation over the grid (left-endpoint σ per step).
pub fn evolve_density(
    rho0: &DensityMatrix,
    h_matrix: &DMatrix<Complex64>,
    schedule: &CouplingSchedule,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    let times = grid.times();
    let mut out = Vec::with_capacity(times.len());
    out.push(rho0.clone());
    for j in 1..times.len() {
        let sigma = schedule.sigma(times[j - 1])?;
        let dt = times[j] - times[j - 1];
        let next = density_step(out.last().unwrap(), h_matrix, sigma, dt)?;
        out.push(next);
    }
    Ok(out)
}
