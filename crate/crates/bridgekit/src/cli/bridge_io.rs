//! Bridge solution serialization: a versioned JSON schema with explicit node
//! times, row-major matrices, and solver provenance. Floats are written with
//! the shortest representation that round-trips exactly, so
//! serialize -> load -> serialize is byte-identical.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gauss_markov::{GaussMarkovBridge, ENDPOINT_TOL};
use crate::time_grid::TimeGrid;

use super::{write_atomic, CliError};

pub const BRIDGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeFile {
    pub schema_version: u32,
    pub dimension: usize,
    pub epsilon: f64,
    pub time: TimeSpec,
    /// Node times, `steps + 1` entries.
    pub nodes: Vec<f64>,
    /// Feedback gain per node, row-major `dimension x dimension`.
    pub pi: Vec<Vec<f64>>,
    /// Feedforward drift per node.
    pub mean_drift: Vec<Vec<f64>>,
    /// State mean per node.
    pub mean: Vec<Vec<f64>>,
    /// State covariance per node, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub solver: SolverInfo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverInfo {
    pub endpoint_mean_error: f64,
    pub endpoint_cov_error: f64,
    pub endpoint_tolerance: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl BridgeFile {
    pub fn from_bridge(bridge: &GaussMarkovBridge) -> Self {
        let n = bridge.dimension();
        BridgeFile {
            schema_version: BRIDGE_SCHEMA_VERSION,
            dimension: n,
            epsilon: bridge.epsilon,
            time: TimeSpec {
                start: bridge.grid.start(),
                end: bridge.grid.end(),
                steps: bridge.grid.steps(),
            },
            nodes: bridge.grid.nodes().to_vec(),
            pi: bridge.pi.iter().map(row_major).collect(),
            mean_drift: bridge
                .mean_drift
                .iter()
                .map(|v| v.as_slice().to_vec())
                .collect(),
            mean: bridge.mean.iter().map(|v| v.as_slice().to_vec()).collect(),
            covariance: bridge.covariance.iter().map(row_major).collect(),
            solver: SolverInfo {
                endpoint_mean_error: bridge.endpoint_mean_error,
                endpoint_cov_error: bridge.endpoint_cov_error,
                endpoint_tolerance: ENDPOINT_TOL,
            },
        }
    }

    pub fn into_bridge(self) -> Result<GaussMarkovBridge, CliError> {
        if self.schema_version != BRIDGE_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported bridge schema version {}",
                self.schema_version
            )));
        }
        let n = self.dimension;
        let nodes = self.time.steps + 1;
        if self.nodes.len() != nodes
            || self.pi.len() != nodes
            || self.mean_drift.len() != nodes
            || self.mean.len() != nodes
            || self.covariance.len() != nodes
        {
            return Err(CliError::Validation(
                "bridge file arrays do not match the declared node count".into(),
            ));
        }
        let matrix = |flat: &Vec<f64>, what: &str| {
            if flat.len() != n * n {
                return Err(CliError::Validation(format!(
                    "{what} entry has {} values, expected {}",
                    flat.len(),
                    n * n
                )));
            }
            Ok(DMatrix::from_row_slice(n, n, flat))
        };
        let vector = |flat: &Vec<f64>, what: &str| {
            if flat.len() != n {
                return Err(CliError::Validation(format!(
                    "{what} entry has {} values, expected {n}",
                    flat.len()
                )));
            }
            Ok(DVector::from_vec(flat.clone()))
        };
        let grid = TimeGrid::new(self.time.start, self.time.end, self.time.steps)
            .map_err(|e| CliError::Validation(format!("bridge time grid: {e}")))?;
        Ok(GaussMarkovBridge {
            grid,
            pi: self
                .pi
                .iter()
                .map(|f| matrix(f, "pi"))
                .collect::<Result<_, _>>()?,
            mean_drift: self
                .mean_drift
                .iter()
                .map(|f| vector(f, "mean_drift"))
                .collect::<Result<_, _>>()?,
            mean: self
                .mean
                .iter()
                .map(|f| vector(f, "mean"))
                .collect::<Result<_, _>>()?,
            covariance: self
                .covariance
                .iter()
                .map(|f| matrix(f, "covariance"))
                .collect::<Result<_, _>>()?,
            epsilon: self.epsilon,
            endpoint_mean_error: self.solver.endpoint_mean_error,
            endpoint_cov_error: self.solver.endpoint_cov_error,
        })
    }
}

pub fn bridge_to_json(bridge: &GaussMarkovBridge) -> Result<String, CliError> {
    serde_json::to_string_pretty(&BridgeFile::from_bridge(bridge))
        .map_err(|e| CliError::Validation(format!("bridge serialization failed: {e}")))
}

pub fn save_bridge(path: &Path, bridge: &GaussMarkovBridge) -> Result<(), CliError> {
    let json = bridge_to_json(bridge)?;
    write_atomic(path, json.as_bytes())
}

pub fn load_bridge(path: &Path) -> Result<GaussMarkovBridge, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading bridge {}: {e}", path.display())))?;
    let file: BridgeFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bridge parse error: {e}")))?;
    file.into_bridge()
}
