//! Run configuration: a single JSON document describing the spectrum, the
//! coupling, the grid and the experiment to run.

use crate::coupling::{CouplingSchedule, RegimeTag};
use crate::error::{Error, Result};
use crate::exact_solver::TimeGrid;
use crate::spectrum::{decompose, LuedersBasis, Spectrum, StateVector};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Trajectory,
    Ensemble,
    OracleCompare,
    FiniteTime,
    PartialMeasurement,
    Convergence,
}

/// A real number or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexSpec {
    Real(f64),
    Pair(f64, f64),
}

impl ComplexSpec {
    pub fn to_complex(self) -> Complex64 {
        match self {
            ComplexSpec::Real(re) => Complex64::new(re, 0.0),
            ComplexSpec::Pair(re, im) => Complex64::new(re, im),
        }
    }
}

/// Either a pre-diagonalized `(energies, priors)` pair or a dense Hermitian
/// matrix with an initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumSpec {
    Diagonalized {
        energies: Vec<f64>,
        priors: Vec<f64>,
    },
    Matrix {
        hamiltonian: Vec<Vec<ComplexSpec>>,
        initial_state: Vec<ComplexSpec>,
        #[serde(default)]
        degeneracy_tol: Option<f64>,
    },
}

/// Flat coupling description:
/// `{"kind": "...", "sigma": x, "T": y, "lambda": z, "alpha": w, "table": [[t, sigma], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub kind: String,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub table: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    /// End time for infinite-horizon schedules.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// For finite-time schedules: run a plain uniform grid to `T · fraction`
    /// instead of the default refined-tail grid.
    #[serde(default)]
    pub horizon_fraction: Option<f64>,
    pub steps: usize,
    /// Tail refinement target for finite-time grids (`default 1e-6`): the last
    /// grid point is `T (1 − terminal_eps)`.
    #[serde(default)]
    pub terminal_eps: Option<f64>,
}

fn default_oracle_intervals() -> Vec<usize> {
    vec![100, 1000, 10_000]
}

fn default_oracle_paths() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Partition sizes to compare; each must divide the largest.
    #[serde(default = "default_oracle_intervals")]
    pub intervals: Vec<usize>,
    #[serde(default = "default_oracle_paths")]
    pub paths: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            intervals: default_oracle_intervals(),
            paths: default_oracle_paths(),
        }
    }
}

fn default_convergence_dts() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

fn default_convergence_paths() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceOptions {
    /// Step sizes to sweep; each must be an integer multiple of the smallest.
    #[serde(default = "default_convergence_dts")]
    pub dts: Vec<f64>,
    #[serde(default = "default_convergence_paths")]
    pub paths: usize,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            dts: default_convergence_dts(),
            paths: default_convergence_paths(),
        }
    }
}

fn default_paths() -> usize {
    10_000
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub spectrum: SpectrumSpec,
    pub coupling: CouplingSpec,
    pub grid: GridSpec,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub with_states: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub convergence: ConvergenceOptions,
}

/// One violated precondition, with the config field it belongs to.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Build the spectrum and its Lüders frame. A diagonalized spec gets the
    /// canonical frame (identity vectors with amplitudes `sqrt(π_i)`).
    pub fn build_spectrum(&self) -> Result<(Spectrum, LuedersBasis)> {
        match &self.spectrum {
            SpectrumSpec::Diagonalized { energies, priors } => {
                let spectrum = Spectrum::new(energies.clone(), priors.clone())?;
                let basis = LuedersBasis::canonical(spectrum.len());
                Ok((spectrum, basis))
            }
            SpectrumSpec::Matrix {
                hamiltonian,
                initial_state,
                degeneracy_tol,
            } => {
                let d = hamiltonian.len();
                if d == 0 || hamiltonian.iter().any(|row| row.len() != d) {
                    return Err(Error::validation(
                        "spectrum.hamiltonian",
                        "must be a non-empty square matrix",
                    ));
                }
                let h = DMatrix::from_fn(d, d, |i, j| hamiltonian[i][j].to_complex());
                let amps: Vec<Complex64> = initial_state.iter().map(|c| c.to_complex()).collect();
                let psi0 = StateVector::new(amps)?;
                decompose(&h, &psi0, *degeneracy_tol)
            }
        }
    }

    pub fn build_schedule(&self) -> Result<CouplingSchedule> {
        let c = &self.coupling;
        let need = |field: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                Error::validation(
                    format!("coupling.{field}"),
                    format!("required for kind \"{}\"", c.kind),
                )
            })
        };
        match c.kind.as_str() {
            "constant" => CouplingSchedule::constant(need("sigma", c.sigma)?),
            "power_law" => {
                CouplingSchedule::power_law(need("alpha", c.alpha)?, c.scale.unwrap_or(1.0))
            }
            "exponential_decay" => CouplingSchedule::exponential_decay(
                need("sigma", c.sigma)?,
                need("lambda", c.lambda)?,
            ),
            "finite_time" => {
                CouplingSchedule::finite_time(need("sigma", c.sigma)?, need("T", c.horizon)?)
            }
            "tabulated" => {
                let table = c.table.clone().ok_or_else(|| {
                    Error::validation("coupling.table", "required for kind \"tabulated\"")
                })?;
                CouplingSchedule::tabulated(table)
            }
            other => Err(Error::validation(
                "coupling.kind",
                format!("unknown kind \"{other}\""),
            )),
        }
    }

    /// Build the grid for the chosen schedule. Finite-time schedules
    /// default to the refined-tail grid ending at `T (1 − terminal_eps)`.
    pub fn build_grid(&self, schedule: &CouplingSchedule) -> Result<TimeGrid> {
        let g = &self.grid;
        let grid = match schedule {
            CouplingSchedule::FiniteTime { horizon, .. } => match g.horizon_fraction {
                Some(f) => {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(Error::validation(
                            "grid.horizon_fraction",
                            "must lie strictly inside (0, 1)",
                        ));
                    }
                    TimeGrid::uniform(horizon * f, g.steps)?
                }
                None => crate::analysis::finite_time_grid(
                    *horizon,
                    g.steps,
                    g.terminal_eps.unwrap_or(1e-6),
                )?,
            },
            _ => {
                let t_end = g.t_end.ok_or_else(|| {
                    Error::validation("grid.t_end", "required for infinite-horizon schedules")
                })?;
                TimeGrid::uniform(t_end, g.steps)?
            }
        };
        grid.validate_for(schedule)?;
        Ok(grid)
    }

    /// Collect every violated precondition without running anything.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut push = |field: &str, err: &Error| {
            let (field, message) = match err {
                Error::Validation { field, message } => (field.clone(), message.clone()),
                other => (field.to_string(), other.to_string()),
            };
            diags.push(Diagnostic { field, message });
        };

        if let Err(e) = self.build_spectrum() {
            push("spectrum", &e);
        }
        match self.build_schedule() {
            Err(e) => push("coupling", &e),
            Ok(schedule) => {
                if let Err(e) = self.build_grid(&schedule) {
                    push("grid", &e);
                }
                if self.experiment == ExperimentKind::PartialMeasurement
                    && schedule.classify().tag != RegimeTag::Partial
                {
                    diags.push(Diagnostic {
                        field: "coupling".into(),
                        message: format!(
                            "partial_measurement needs a partial-regime schedule, got {:?}",
                            schedule.classify().tag
                        ),
                    });
                }
                if self.experiment == ExperimentKind::FiniteTime
                    && schedule.classify().tag != RegimeTag::FiniteTime
                {
                    diags.push(Diagnostic {
                        field: "coupling".into(),
                        message: "finite_time experiment needs a finite_time schedule".into(),
                    });
                }
            }
        }
        match self.experiment {
            ExperimentKind::Ensemble | ExperimentKind::PartialMeasurement => {
                if self.paths < 100 {
                    diags.push(Diagnostic {
                        field: "paths".into(),
                        message: format!("ensemble needs at least 100 paths, got {}", self.paths),
                    });
                }
            }
            ExperimentKind::OracleCompare => {
                let o = &self.oracle;
                if o.intervals.is_empty() || o.paths == 0 {
                    diags.push(Diagnostic {
                        field: "oracle".into(),
                        message: "needs at least one partition size and one path".into(),
                    });
                } else {
                    let max = *o.intervals.iter().max().unwrap();
                    if o.intervals
                        .iter()
                        .any(|&n| n == 0 || !max.is_multiple_of(n))
                    {
                        diags.push(Diagnostic {
                            field: "oracle.intervals".into(),
                            message: "each partition size must divide the largest".into(),
                        });
                    }
                }
            }
            ExperimentKind::Convergence => {
                let c = &self.convergence;
                if c.dts.is_empty() || c.paths == 0 {
                    diags.push(Diagnostic {
                        field: "convergence".into(),
                        message: "needs at least one step size and one path".into(),
                    });
                } else {
                    let fine = c.dts.iter().cloned().fold(f64::INFINITY, f64::min);
                    if !(fine > 0.0) {
                        diags.push(Diagnostic {
                            field: "convergence.dts".into(),
                            message: "step sizes must be > 0".into(),
                        });
                    } else {
                        for &dt in &c.dts {
                            let ratio = dt / fine;
                            if (ratio - ratio.round()).abs() > 1e-9 {
                                diags.push(Diagnostic {
                                    field: "convergence.dts".into(),
                                    message: format!(
                                        "{dt} is not an integer multiple of the finest step {fine}"
                                    ),
                                });
                            }
                        }
                        if let Some(t_end) = self.grid.t_end {
                            let steps = t_end / fine;
                            if (steps - steps.round()).abs() > 1e-6 {
                                diags.push(Diagnostic {
                                    field: "convergence.dts".into(),
                                    message: format!(
                                        "t_end = {t_end} is not a multiple of the finest step {fine}"
                                    ),
                                });
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        diags
    }
}
