//! General Schrödinger system solver on 1D/2D spatial grids.
//!
//! The reference transition kernel of a linear prior is discretized as a
//! row-stochastic matrix over grid nodes; the two boundary potentials
//! `(phi, phi_hat)` are then obtained by Fortet / iterative proportional
//! fitting: propagate one potential, fit it to a marginal, propagate the
//! other, fit again, until both boundary products match the prescribed
//! marginals in L1. Intermediate marginals factor as the pointwise product
//! of the propagated potentials, and the optimal drift fields (forward,
//! backward, current, osmotic) come out of log-gradients of those factors.

mod drift;
mod fortet;
mod kernel;
mod spatial;

pub use drift::{
    backward_drift, forward_drift, grid_gradient, prior_density_at, symmetric_drifts, DriftField,
    DriftKind, SUPPORT_FLOOR,
};
pub use fortet::{fortet_solve, marginal_at, potentials_at, MarginalSlice, PotentialPair};
pub use kernel::{kernel, GridKernel};
pub use spatial::{GridDensity, SpatialGrid};
