//! Discrete spectrum, initial state, and the Lüders decomposition.
//!
//! Diagonalizing the Hamiltonian against the initial state turns the quantum
//! problem into a finite discrete-prior filtering problem: each retained
//! eigenspace contributes one outcome energy `E_i`, a prior
//! `π_i = ⟨ψ₀|Π̂_i|ψ₀⟩` and a Lüders vector `φ_i = π_i^{-1/2} Π̂_i |ψ₀⟩`.
//! All values are immutable after construction and safe to share across
//! concurrent path simulations.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Eigenspaces with prior weight below this are dropped from the outcome set;
/// zero-prior outcomes never occur and the filter divides by retained sums.
pub const PRIOR_FLOOR: f64 = 1e-14;

const NORM_TOL: f64 = 1e-12;
const HERMITICITY_TOL: f64 = 1e-10;

/// Distinct outcome energies with their prior probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    energies: Vec<f64>,
    priors: Vec<f64>,
}

impl Spectrum {
    /// Build from already-distinct energies and priors summing to one.
    pub fn new(energies: Vec<f64>, priors: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::validation("spectrum.energies", "must be non-empty"));
        }
        if energies.len() != priors.len() {
            return Err(Error::Dimension {
                expected: energies.len(),
                got: priors.len(),
            });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("spectrum energies".into()));
        }
        if energies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation(
                "spectrum.energies",
                "must be strictly increasing",
            ));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation(
                "spectrum.priors",
                "must be non-negative and finite",
            ));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::validation(
                "spectrum.priors",
                format!("must sum to 1 within {NORM_TOL:e}, got {total}"),
            ));
        }
        Ok(Spectrum { energies, priors })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one level
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Prior mean energy Σ π_i E_i.
    pub fn prior_mean(&self) -> f64 {
        self.energies
            .iter()
            .zip(&self.priors)
            .map(|(e, p)| e * p)
            .sum()
    }

    /// Smallest gap between adjacent energies (infinite for a single level).
    pub fn min_gap(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Width `E_N - E_1` of the spectrum.
    pub fn range(&self) -> f64 {
        self.energies.last().unwrap() - self.energies.first().unwrap()
    }
}

/// A normalized state vector in the D-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Wrap amplitudes that are already unit norm (within 1e-12).
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::validation("state.amplitudes", "must be non-empty"));
        }
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(Error::validation(
                "state.amplitudes",
                format!("squared norm must be 1 within {NORM_TOL:e}, got {norm_sq}"),
            ));
        }
        Ok(StateVector { amplitudes })
    }

    /// Normalize arbitrary amplitudes (error on the zero vector).
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::validation(
                "state.amplitudes",
                "cannot normalize a zero or non-finite vector",
            ));
        }
        Ok(StateVector {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Hermitian inner product ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Orthonormal Lüders vectors, one per retained outcome energy.
#[derive(Debug, Clone)]
pub struct LuedersBasis {
    vectors: Vec<Vec<Complex64>>,
    projector_ranks: Vec<usize>,
    dim: usize,
}

impl LuedersBasis {
    /// Identity frame for an already-diagonalized problem: `φ_i = e_i` in an
    /// `n`-dimensional space, one rank-one projector per level.
    pub fn canonical(n: usize) -> Self {
        let vectors = (0..n)
            .map(|i| {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                v[i] = Complex64::new(1.0, 0.0);
                v
            })
            .collect();
        LuedersBasis {
            vectors,
            projector_ranks: vec![1; n],
            dim: n,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Hilbert-space dimension D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[Complex64] {
        &self.vectors[i]
    }

    /// Multiplicity of each retained eigenvalue.
    pub fn projector_ranks(&self) -> &[usize] {
        &self.projector_ranks
    }

    /// Transition probabilities |⟨φ_i|ψ⟩|² of a state against this basis.
    pub fn transition_probabilities(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: state.dim(),
            });
        }
        Ok(self
            .vectors
            .iter()
            .map(|phi| {
                phi.iter()
                    .zip(state.amplitudes())
                    .map(|(p, a)| p.conj() * a)
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .collect())
    }
}

/// Diagonalize a Hermitian Hamiltonian against an initial state.
///
/// Eigenvalues closer than `degeneracy_tol` (default `1e-9` times the spectral
/// range) are merged into one level; eigenspaces with overlap below
/// [`PRIOR_FLOOR`] are dropped and the remaining priors renormalized. Each
/// Lüders vector keeps the phase inherited from the initial state, so
/// `⟨φ_i|ψ₀⟩ = sqrt(π_i)` is real and positive and `Σ_i sqrt(π_i) φ_i`
/// reconstructs `ψ₀`.
pub fn decompose(
    hamiltonian: &DMatrix<Complex64>,
    initial_state: &StateVector,
    degeneracy_tol: Option<f64>,
) -> Result<(Spectrum, LuedersBasis)> {
    let d = hamiltonian.nrows();
    if d == 0 || hamiltonian.ncols() != d {
        return Err(Error::validation(
            "hamiltonian",
            format!(
                "must be square and non-empty, got {}x{}",
                d,
                hamiltonian.ncols()
            ),
        ));
    }
    let asym = hermiticity_defect(hamiltonian);
    if asym > HERMITICITY_TOL {
        return Err(Error::validation(
            "hamiltonian",
            format!("not Hermitian: max |H - H^dagger| entry is {asym:e}"),
        ));
    }
    if initial_state.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: initial_state.dim(),
        });
    }

    // Work on the exactly-Hermitian symmetrization so the eigenvalues are real
    // to machine precision.
    let herm = (hamiltonian + hamiltonian.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let lambda_min = eig.eigenvalues[order[0]];
    let lambda_max = eig.eigenvalues[order[d - 1]];
    let spread = lambda_max - lambda_min;
    let tol = degeneracy_tol.unwrap_or(1e-9 * spread.max(f64::MIN_POSITIVE));

    // Group eigenvalue indices into degenerate levels.
    let mut groups: Vec<Vec<usize>> = vec![vec![order[0]]];
    for &idx in &order[1..] {
        let prev = *groups.last().unwrap().last().unwrap();
        if eig.eigenvalues[idx] - eig.eigenvalues[prev] <= tol {
            groups.last_mut().unwrap().push(idx);
        } else {
            groups.push(vec![idx]);
        }
    }

    let mut energies = Vec::new();
    let mut priors = Vec::new();
    let mut vectors = Vec::new();
    let mut ranks = Vec::new();
    for group in &groups {
        // Π̂ ψ0 = Σ_v ⟨v|ψ0⟩ v over the group's eigenvectors.
        let mut proj = vec![Complex64::new(0.0, 0.0); d];
        for &idx in group {
            let col = eig.eigenvectors.column(idx);
            let overlap: Complex64 = col
                .iter()
                .zip(initial_state.amplitudes())
                .map(|(v, a)| v.conj() * a)
                .sum();
            for (p, v) in proj.iter_mut().zip(col.iter()) {
                *p += overlap * v;
            }
        }
        let weight: f64 = proj.iter().map(|c| c.norm_sqr()).sum();
        if weight < PRIOR_FLOOR {
            continue;
        }
        let energy = group.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / group.len() as f64;
        let inv = 1.0 / weight.sqrt();
        let phi: Vec<Complex64> = proj.into_iter().map(|c| c * inv).collect();
        energies.push(energy);
        priors.push(weight);
        vectors.push(phi);
        ranks.push(group.len());
    }

    if energies.is_empty() {
        return Err(Error::EmptySupport);
    }
    let total: f64 = priors.iter().sum();
    for p in &mut priors {
        *p /= total;
    }

    let spectrum = Spectrum::new(energies, priors)?;
    let basis = LuedersBasis {
        vectors,
        projector_ranks: ranks,
        dim: d,
    };
    Ok((spectrum, basis))
}

/// Assemble the state `Σ_i e^{-i E_i t} π_{it}^{1/2} |φ_i⟩` from posterior
/// weights. The output is renormalized, so `|⟨φ_i|ψ_t⟩|²` reproduces the
/// posteriors up to their own normalization defect.
pub fn assemble_state(
    spectrum: &Spectrum,
    basis: &LuedersBasis,
    posteriors: &[f64],
    t: f64,
) -> Result<StateVector> {
    let n = spectrum.len();
    if posteriors.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: posteriors.len(),
        });
    }
    if basis.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: basis.len(),
        });
    }
    if posteriors.iter().any(|p| !p.is_finite() || *p < -1e-12) {
        return Err(Error::validation(
            "posteriors",
            "entries must be finite and non-negative",
        ));
    }
    let total: f64 = posteriors.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::validation(
            "posteriors",
            format!("must sum to 1 within 1e-10, got {total}"),
        ));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
    for (i, (&e, &p)) in spectrum.energies().iter().zip(posteriors).enumerate() {
        let coeff = Complex64::from_polar(p.max(0.0).sqrt(), -e * t);
        for (a, phi) in amps.iter_mut().zip(basis.vector(i)) {
            *a += coeff * phi;
        }
    }
    StateVector::normalized(amps)
}

fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}
