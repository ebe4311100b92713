//! Drift-field extraction from converged potentials.
//!
//! Forward drift: `b+(x) = A(t) x + eps grad log phi(x, t)`.
//! Backward drift through the reverse-time harmonic ratio `psi = phi_hat / rho`
//! with `rho` the prior one-time density: `b-(x) = b-^P(x) - eps grad log psi`,
//! where `b-^P = A(t) x - eps grad log rho` is the prior backward drift.
//! Current and osmotic drifts are the half-sum and half-difference.
//!
//! All log-gradient terms carry the diffusion intensity `eps` explicitly so
//! the same formulas cover every prior in this crate, not just unit
//! diffusion.

use nalgebra::DVector;

use crate::error::{BridgeError, Result};
use crate::gauss_markov::LinearPrior;

use super::fortet::{potentials_at, PotentialPair};
use super::kernel::kernel;
use super::spatial::{GridDensity, SpatialGrid};

/// Densities below this floor are masked for log-gradient computation
/// (Gaussian tails underflow on wide grids).
pub const SUPPORT_FLOOR: f64 = 1e-30;

/// Which drift a [`DriftField`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    Forward,
    Backward,
    Current,
    Osmotic,
}

/// Per-node drift vectors at one time slice, with a validity mask. Nodes
/// where the underlying density sits below [`SUPPORT_FLOOR`] are masked and
/// carry zero vectors.
#[derive(Debug, Clone)]
pub struct DriftField {
    grid: SpatialGrid,
    pub time: f64,
    pub kind: DriftKind,
    /// `components[axis][node]`.
    components: Vec<Vec<f64>>,
    /// `true` where the field is valid.
    mask: Vec<bool>,
}

impl DriftField {
    /// Assemble a field from per-axis component arrays and a validity mask.
    pub fn from_components(
        grid: SpatialGrid,
        time: f64,
        kind: DriftKind,
        components: Vec<Vec<f64>>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if components.len() != grid.dimension() {
            return Err(BridgeError::DimensionMismatch {
                context: "drift components vs grid dimension",
                expected: grid.dimension(),
                got: components.len(),
            });
        }
        if components.iter().any(|c| c.len() != grid.len()) || mask.len() != grid.len() {
            return Err(BridgeError::DimensionMismatch {
                context: "drift component length vs node count",
                expected: grid.len(),
                got: mask.len(),
            });
        }
        Ok(DriftField {
            grid,
            time,
            kind,
            components,
            mask,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn vector_at(&self, node: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|c| c[node]),
        )
    }

    /// Number of masked nodes.
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    fn combine(a: &DriftField, b: &DriftField, ca: f64, cb: f64, kind: DriftKind) -> DriftField {
        let d = a.components.len();
        let n = a.mask.len();
        let mask: Vec<bool> = (0..n).map(|i| a.mask[i] && b.mask[i]).collect();
        let components = (0..d)
            .map(|axis| {
                (0..n)
                    .map(|i| {
                        if mask[i] {
                            ca * a.components[axis][i] + cb * b.components[axis][i]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        DriftField {
            grid: a.grid.clone(),
            time: a.time,
            kind,
            components,
            mask,
        }
    }
}

/// Per-axis gradient by second-order central differences, one-sided
/// second-order at the boundaries.
pub fn grid_gradient(grid: &SpatialGrid, values: &[f64]) -> Vec<Vec<f64>> {
    let d = grid.dimension();
    let mut out = vec![vec![0.0; values.len()]; d];
    for axis in 0..d {
        let h = grid.spacing(axis);
        let n_axis = grid.points()[axis];
        let stride = if d == 1 {
            1
        } else if axis == 0 {
            grid.points()[1]
        } else {
            1
        };
        let lines: usize = values.len() / n_axis;
        for line in 0..lines {
            // Base flat index of this 1D line along `axis`.
            let base = if d == 1 {
                0
            } else if axis == 0 {
                line // iy fixed, ix varies
            } else {
                line * grid.points()[1] // ix fixed, iy varies
            };
            let at = |i: usize| values[base + i * stride];
            for i in 0..n_axis {
                let g = if i == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if i == n_axis - 1 {
                    (3.0 * at(n_axis - 1) - 4.0 * at(n_axis - 2) + at(n_axis - 3)) / (2.0 * h)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * h)
                };
                out[axis][base + i * stride] = g;
            }
        }
    }
    out
}

fn log_values(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v.max(1e-300).ln()).collect()
}

fn normalized_product(grid: &SpatialGrid, phi: &[f64], phi_hat: &[f64]) -> Vec<f64> {
    let mut prod: Vec<f64> = phi.iter().zip(phi_hat).map(|(a, b)| a * b).collect();
    let mass: f64 = prod.iter().sum::<f64>() * grid.cell_volume();
    if mass > 0.0 {
        for v in &mut prod {
            *v /= mass;
        }
    }
    prod
}

fn assemble(
    grid: &SpatialGrid,
    prior: &LinearPrior,
    t: f64,
    kind: DriftKind,
    log_grad_terms: &[(f64, Vec<Vec<f64>>)],
    mask: Vec<bool>,
) -> DriftField {
    let d = grid.dimension();
    let n = grid.len();
    let a = prior.drift().at(t);
    let mut components = vec![vec![0.0; n]; d];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let x = grid.node(i);
        let ax = a * &x;
        for axis in 0..d {
            let mut v = ax[axis];
            for (coeff, grad) in log_grad_terms {
                v += coeff * grad[axis][i];
            }
            components[axis][i] = v;
        }
    }
    DriftField {
        grid: grid.clone(),
        time: t,
        kind,
        components,
        mask,
    }
}

/// Forward drift of the solved bridge at time `t`.
pub fn forward_drift(
    pair: &PotentialPair,
    prior: &LinearPrior,
    grid: &SpatialGrid,
    t: f64,
) -> Result<DriftField> {
    let (phi, phi_hat) = potentials_at(pair, prior, grid, t)?;
    let rho = normalized_product(grid, &phi, &phi_hat);
    let mask: Vec<bool> = rho
        .iter()
        .zip(&phi)
        .map(|(&r, &p)| r >= SUPPORT_FLOOR && p >= SUPPORT_FLOOR)
        .collect();
    let grad_log_phi = grid_gradient(grid, &log_values(&phi));
    Ok(assemble(
        grid,
        prior,
        t,
        DriftKind::Forward,
        &[(prior.epsilon(), grad_log_phi)],
        mask,
    ))
}

/// Prior one-time density at `t`, obtained by propagating the initial
/// density with the transposed prior kernel (endpoint returns the input).
pub fn prior_density_at(
    prior: &LinearPrior,
    grid: &SpatialGrid,
    initial: &GridDensity,
    t_start: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if (t - t_start).abs() <= 1e-12 * t.abs().max(1.0) {
        return Ok(initial.values().to_vec());
    }
    if t < t_start {
        return Err(BridgeError::ArgumentOrder { s: t_start, t });
    }
    Ok(kernel(prior, grid, t_start, t)?.apply_transposed(initial.values()))
}

/// Backward drift via the reverse-time harmonic ratio `psi = phi_hat / rho`.
///
/// `initial` is the density the prior evolution starts from at the initial
/// time (the bridge's own initial marginal in every use here).
pub fn backward_drift(
    pair: &PotentialPair,
    prior: &LinearPrior,
    grid: &SpatialGrid,
    initial: &GridDensity,
    t: f64,
) -> Result<DriftField> {
    let (phi, phi_hat) = potentials_at(pair, prior, grid, t)?;
    let rho_prior = prior_density_at(prior, grid, initial, pair.t_start, t)?;
    let rho_bridge = normalized_product(grid, &phi, &phi_hat);

    let mask: Vec<bool> = rho_bridge
        .iter()
        .zip(&rho_prior)
        .map(|(&rb, &rp)| rb >= SUPPORT_FLOOR && rp >= SUPPORT_FLOOR)
        .collect();

    let psi: Vec<f64> = phi_hat
        .iter()
        .zip(&rho_prior)
        .map(|(&h, &r)| h / r.max(1e-300))
        .collect();
    let grad_log_rho = grid_gradient(grid, &log_values(&rho_prior));
    let grad_log_psi = grid_gradient(grid, &log_values(&psi));
    let eps = prior.epsilon();
    Ok(assemble(
        grid,
        prior,
        t,
        DriftKind::Backward,
        &[(-eps, grad_log_rho), (-eps, grad_log_psi)],
        mask,
    ))
}

/// Current and osmotic drifts, `v = (b+ + b-)/2` and `u = (b+ - b-)/2`.
pub fn symmetric_drifts(
    pair: &PotentialPair,
    prior: &LinearPrior,
    grid: &SpatialGrid,
    initial: &GridDensity,
    t: f64,
) -> Result<(DriftField, DriftField)> {
    let fwd = forward_drift(pair, prior, grid, t)?;
    let bwd = backward_drift(pair, prior, grid, initial, t)?;
    let current = DriftField::combine(&fwd, &bwd, 0.5, 0.5, DriftKind::Current);
    let osmotic = DriftField::combine(&fwd, &bwd, 0.5, -0.5, DriftKind::Osmotic);
    Ok((current, osmotic))
}
