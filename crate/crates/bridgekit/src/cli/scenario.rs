//! Scenario configuration: a versioned, human-writable TOML file describing
//! the prior, the marginals, the grids, and the run options. Unknown keys are
//! rejected so typos fail loudly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gauss_markov::{GaussianMarginal, LinearPrior};
use crate::schrodinger_grid::SpatialGrid;
use crate::time_grid::TimeGrid;

use super::CliError;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub prior: PriorConfig,
    pub marginals: MarginalsConfig,
    pub time: TimeConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Constant drift matrix, row by row.
    pub drift: Vec<Vec<f64>>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsConfig {
    pub initial: MarginalConfig,
    #[serde(rename = "final")]
    pub terminal: MarginalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalConfig {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// Per-axis `[lower, upper]` bounds.
    pub bounds: Vec<[f64; 2]>,
    /// Per-axis node counts.
    pub points: Vec<usize>,
    /// Marginal-fitting tolerance of the iterative solver (L1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// Number of exported marginal/drift time slices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub paths: usize,
    pub seed: u64,
    /// Simulation step; defaults to the time-grid step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Number of paths exported to CSV (moments always use every path).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_paths: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// Subset of {"json", "csv"}; both by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<String>>,
}

/// Domain objects constructed from a validated scenario.
pub struct ValidatedScenario {
    pub prior: LinearPrior,
    pub initial: GaussianMarginal,
    pub terminal: GaussianMarginal,
    pub grid: TimeGrid,
    pub spatial: Option<SpatialGrid>,
    pub grid_tolerance: f64,
    pub grid_max_iterations: usize,
    pub grid_slices: usize,
    pub simulation: SimulationDefaults,
    pub write_json: bool,
    pub write_csv: bool,
}

pub struct SimulationDefaults {
    pub paths: usize,
    pub seed: u64,
    pub dt: Option<f64>,
    pub csv_paths: usize,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Validation(format!(
            "{what} must be a nonempty square matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, CliError> {
        let scenario: Scenario = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("scenario parse error: {e}")))?;
        if scenario.version != SCENARIO_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                scenario.version
            )));
        }
        Ok(scenario)
    }

    /// Canonical serialization; reloading and re-serializing reproduces the
    /// same bytes.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::Validation(format!("scenario serialization failed: {e}")))
    }

    /// Re-validate every module-level invariant and build domain objects.
    pub fn validate(&self) -> Result<ValidatedScenario, CliError> {
        let drift = matrix_from_rows(&self.prior.drift, "prior.drift")?;
        let prior = LinearPrior::constant(drift, self.prior.epsilon)
            .map_err(|e| CliError::Validation(format!("prior: {e}")))?;

        let build_marginal = |cfg: &MarginalConfig, what: &str| {
            let cov = matrix_from_rows(&cfg.covariance, &format!("{what}.covariance"))?;
            GaussianMarginal::new(DVector::from_vec(cfg.mean.clone()), cov)
                .map_err(|e| CliError::Validation(format!("{what}: {e}")))
        };
        let initial = build_marginal(&self.marginals.initial, "marginals.initial")?;
        let terminal = build_marginal(&self.marginals.terminal, "marginals.final")?;
        for (m, what) in [(&initial, "initial"), (&terminal, "final")] {
            if m.dimension() != prior.dimension() {
                return Err(CliError::Validation(format!(
                    "{what} marginal dimension {} does not match prior dimension {}",
                    m.dimension(),
                    prior.dimension()
                )));
            }
        }

        let grid = TimeGrid::new(self.time.start, self.time.end, self.time.steps)
            .map_err(|e| CliError::Validation(format!("time: {e}")))?;

        let spatial = match &self.space {
            Some(cfg) => Some(
                SpatialGrid::new(
                    cfg.bounds.iter().map(|b| (b[0], b[1])).collect(),
                    cfg.points.clone(),
                )
                .map_err(|e| CliError::Validation(format!("space: {e}")))?,
            ),
            None => None,
        };
        if let Some(s) = &spatial {
            if s.dimension() != prior.dimension() {
                return Err(CliError::Validation(format!(
                    "spatial grid dimension {} does not match prior dimension {}",
                    s.dimension(),
                    prior.dimension()
                )));
            }
        }

        let (grid_tolerance, grid_max_iterations, grid_slices) = match &self.space {
            Some(cfg) => {
                let tol = cfg.tolerance.unwrap_or(1e-8);
                if !(tol > 0.0) {
                    return Err(CliError::Validation(format!(
                        "space.tolerance must be positive, got {tol}"
                    )));
                }
                let slices = cfg.slices.unwrap_or(21);
                if slices < 2 {
                    return Err(CliError::Validation(
                        "space.slices must be at least 2".into(),
                    ));
                }
                (tol, cfg.max_iterations.unwrap_or(10_000), slices)
            }
            None => (1e-8, 10_000, 21),
        };

        let simulation = match &self.simulation {
            Some(cfg) => {
                if cfg.paths == 0 {
                    return Err(CliError::Validation(
                        "simulation.paths must be at least 1".into(),
                    ));
                }
                if let Some(dt) = cfg.dt {
                    if !(dt > 0.0 && dt <= grid.span()) {
                        return Err(CliError::Validation(format!(
                            "simulation.dt must lie in (0, span], got {dt}"
                        )));
                    }
                }
                SimulationDefaults {
                    paths: cfg.paths,
                    seed: cfg.seed,
                    dt: cfg.dt,
                    csv_paths: cfg.csv_paths.unwrap_or(cfg.paths.min(100)),
                }
            }
            None => SimulationDefaults {
                paths: 1000,
                seed: 42,
                dt: None,
                csv_paths: 100,
            },
        };

        let (write_json, write_csv) = match &self.output.formats {
            None => (true, true),
            Some(list) => {
                for f in list {
                    if f != "json" && f != "csv" {
                        return Err(CliError::Validation(format!(
                            "output.formats entries must be \"json\" or \"csv\", got \"{f}\""
                        )));
                    }
                }
                (
                    list.iter().any(|f| f == "json"),
                    list.iter().any(|f| f == "csv"),
                )
            }
        };

        Ok(ValidatedScenario {
            prior,
            initial,
            terminal,
            grid,
            spatial,
            grid_tolerance,
            grid_max_iterations,
            grid_slices,
            simulation,
            write_json,
            write_csv,
        })
    }
}
