//! Schrödinger bridges over Markovian priors and their zero-noise
//! optimal-mass-transport limits.
//!
//! The crate has four solver layers and a CLI:
//!
//! - [`gauss_markov`]: closed-form bridges for linear priors and Gaussian
//!   marginals (matrix Riccati feedback, mean steering, covariance flow).
//! - [`schrodinger_grid`]: the general Schrödinger system on 1D/2D spatial
//!   grids, solved by Fortet / iterative proportional fitting, with forward,
//!   backward, current and osmotic drift extraction.
//! - [`fluid_dynamics`]: kinetic-energy and Fisher-information functionals
//!   plus continuity / Hamilton-Jacobi residuals, so optimality claims are
//!   executable checks.
//! - [`sde_sim`]: reproducible Euler-Maruyama Monte Carlo with a counter-based
//!   normal generator, empirical moments and covariance-tube extraction.
//! - [`cli`]: scenario configuration, reproduction runs and file export used
//!   by the `bridgekit` binary.

pub mod cli;
pub mod error;
pub mod fluid_dynamics;
pub mod gauss_markov;
pub mod linalg;
pub mod schrodinger_grid;
pub mod sde_sim;
pub mod time_grid;

pub use error::{BridgeError, Result};
pub use time_grid::TimeGrid;
