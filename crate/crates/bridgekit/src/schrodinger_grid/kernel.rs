//! Discrete transition kernel of a linear prior over grid nodes.

use nalgebra::DMatrix;

use crate::error::{BridgeError, Result};
use crate::gauss_markov::{gramian, transition, LinearPrior};
use crate::linalg::spd_inverse;

use super::spatial::SpatialGrid;

/// Row-stochastic transition matrix over grid nodes for the interval `[s, t]`.
/// Entry `(x, y)` is proportional to the Gaussian transition density
/// `exp(-1/2 (y - Phi(t,s) x)' (eps M(t,s))^{-1} (y - Phi(t,s) x))` times the
/// cell volume (mass-lumped discretization), with each row normalized to one.
#[derive(Debug, Clone)]
pub struct GridKernel {
    grid: SpatialGrid,
    s: f64,
    t: f64,
    rows: DMatrix<f64>,
}

/// Build the discrete kernel. Fails when the diffusion is zero or when the
/// transition covariance is narrower than one grid cell along any axis
/// (the discretization cannot resolve such a kernel).
pub fn kernel(prior: &LinearPrior, grid: &SpatialGrid, s: f64, t: f64) -> Result<GridKernel> {
    if s >= t {
        return Err(BridgeError::EmptyInterval { s, t });
    }
    let eps = prior.epsilon();
    if eps <= 0.0 {
        return Err(BridgeError::KernelRequiresDiffusion { epsilon: eps });
    }
    let d = grid.dimension();
    if prior.dimension() != d {
        return Err(BridgeError::DimensionMismatch {
            context: "prior dimension vs spatial grid",
            expected: d,
            got: prior.dimension(),
        });
    }

    let cov = gramian(prior, s, t)? * eps;
    for axis in 0..d {
        let sigma = cov[(axis, axis)].sqrt();
        let spacing = grid.spacing(axis);
        if sigma < spacing {
            return Err(BridgeError::UnderResolvedKernel {
                axis,
                sigma,
                spacing,
            });
        }
    }
    let cov_inv = spd_inverse(&cov, "kernel covariance")?;
    let phi = transition(prior, s, t)?;

    let n = grid.len();
    let mut rows = DMatrix::<f64>::zeros(n, n);
    let nodes: Vec<_> = (0..n).map(|i| grid.node(i)).collect();
    for i in 0..n {
        let mu = &phi * &nodes[i];
        let mut sum = 0.0;
        for j in 0..n {
            let diff = &nodes[j] - &mu;
            let q = diff.dot(&(&cov_inv * &diff));
            let val = (-0.5 * q).exp();
            rows[(i, j)] = val;
            sum += val;
        }
        if sum <= 0.0 || !sum.is_finite() {
            return Err(BridgeError::Underflow {
                context: format!("kernel row {i} has no mass on the grid"),
            });
        }
        for j in 0..n {
            rows[(i, j)] /= sum;
        }
    }
    Ok(GridKernel {
        grid: grid.clone(),
        s,
        t,
        rows,
    })
}

impl GridKernel {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.s, self.t)
    }

    /// Row of the kernel as a probability vector over target nodes.
    pub fn row(&self, source: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|j| self.rows[(source, j)]).collect()
    }

    /// Apply the kernel to a function of the target state:
    /// `out(x) = sum_y K[x, y] f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.rows[(i, j)] * f[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Apply the transposed kernel to a function of the source state:
    /// `out(y) = sum_x K[x, y] g(x)`.
    pub fn apply_transposed(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.rows[(i, j)] * g[i];
            }
            out[j] = acc;
        }
        out
    }
}
