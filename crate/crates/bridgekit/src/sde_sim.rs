//! Euler-Maruyama Monte Carlo for prior and bridge evolutions.
//!
//! Noise comes from a counter-based generator keyed by
//! `(seed, stream, path, step, component)`, so ensembles are bitwise
//! reproducible and independent of path evaluation order.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};
use crate::gauss_markov::{GaussMarkovBridge, LinearPrior};
use crate::linalg::sqrt_spd;
use crate::time_grid::TimeGrid;

/// Maximum admissible `dt * ||closed-loop drift||` for Euler stability of
/// linear drifts.
pub const MAX_STEP_GAIN: f64 = 0.1;

const STREAM_INIT: u64 = 0x494e_4954;
const STREAM_STEP: u64 = 0x5354_4550;

/// SplitMix64 finalizer; full-avalanche 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn counter_key(seed: u64, stream: u64, path: u64, step: u64, slot: u64) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ stream);
    h = mix64(h ^ path.wrapping_mul(0xff51_afd7_ed55_8ccd));
    h = mix64(h ^ step.wrapping_mul(0xc4ce_b9fe_1a85_ec53));
    mix64(h ^ slot)
}

/// Uniform in (0, 1] from 53 high bits.
#[inline]
fn to_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw, a pure function of its counters (Box-Muller).
#[inline]
fn standard_normal(seed: u64, stream: u64, path: u64, step: u64, component: u64) -> f64 {
    let u1 = to_unit(counter_key(seed, stream, path, step, 2 * component));
    let u2 = to_unit(counter_key(seed, stream, path, step, 2 * component + 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Initial state distribution. Unlike a marginal, the covariance may be
/// positive semidefinite, so point masses are admissible.
#[derive(Debug, Clone)]
pub struct InitialState {
    mean: DVector<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl InitialState {
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(BridgeError::DimensionMismatch {
                context: "initial-state covariance",
                expected: mean.len(),
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        let cov_sqrt = sqrt_spd(&covariance)?;
        Ok(InitialState { mean, cov_sqrt })
    }

    pub fn point_mass(mean: DVector<f64>) -> Self {
        let n = mean.len();
        InitialState {
            mean,
            cov_sqrt: DMatrix::zeros(n, n),
        }
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, seed: u64, path: u64) -> DVector<f64> {
        let n = self.dimension();
        let z = DVector::from_iterator(
            n,
            (0..n).map(|i| standard_normal(seed, STREAM_INIT, path, 0, i as u64)),
        );
        &self.mean + &self.cov_sqrt * z
    }
}

impl From<&crate::gauss_markov::GaussianMarginal> for InitialState {
    fn from(marginal: &crate::gauss_markov::GaussianMarginal) -> Self {
        InitialState::gaussian(marginal.mean().clone(), marginal.covariance().clone())
            .expect("marginal covariance is positive definite by construction")
    }
}

/// Monte Carlo sample paths on a shared time grid, path-major storage.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub epsilon: f64,
    pub seed: u64,
    dimension: usize,
    n_paths: usize,
    /// `states[((p * (steps+1)) + k) * n + i]`.
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// State of path `p` at node `k`.
    pub fn state(&self, p: usize, k: usize) -> DVector<f64> {
        let n = self.dimension;
        let base = (p * (self.grid.steps() + 1) + k) * n;
        DVector::from_row_slice(&self.states[base..base + n])
    }

    /// Raw state buffer, for serialization and bitwise comparisons.
    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }
}

/// Integrate `x_{k+1} = x_k + drift(x_k, t_k) dt + sqrt(eps dt) xi_k` for all
/// paths with initial states drawn from `init`.
pub fn simulate<F>(
    drift: F,
    epsilon: f64,
    init: &InitialState,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(BridgeError::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    if n_paths == 0 {
        return Err(BridgeError::InvalidArgument(
            "at least one path is required".into(),
        ));
    }
    let n = init.dimension();
    let steps = grid.steps();
    let dt = grid.dt();
    let noise_scale = (epsilon * dt).sqrt();

    let mut states = Vec::with_capacity(n_paths * (steps + 1) * n);
    for p in 0..n_paths {
        let mut x = init.sample(seed, p as u64);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::SimulationBlowUp { path: p, step: 0 });
        }
        states.extend_from_slice(x.as_slice());
        for k in 0..steps {
            let t = grid.node(k);
            let d = drift(&x, t);
            x += d * dt;
            if noise_scale > 0.0 {
                for i in 0..n {
                    x[i] += noise_scale
                        * standard_normal(seed, STREAM_STEP, p as u64, k as u64, i as u64);
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(BridgeError::SimulationBlowUp { path: p, step: k + 1 });
            }
            states.extend_from_slice(x.as_slice());
        }
    }
    Ok(PathEnsemble {
        grid: grid.clone(),
        epsilon,
        seed,
        dimension: n,
        n_paths,
        states,
    })
}

/// Simulate a solved bridge on its own grid. The feedback gain and
/// feedforward drift are held at the left node over each step (zero-order
/// hold, consistent with the Euler order), and the linear-drift stability
/// bound `dt ||A - Pi|| <= 0.1` is validated up front.
pub fn simulate_bridge(
    bridge: &GaussMarkovBridge,
    prior: &LinearPrior,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_bridge_on_grid(bridge, prior, &bridge.grid.clone(), n_paths, seed)
}

/// Simulate a solved bridge on an arbitrary time grid spanning the same
/// interval; the bridge coefficients are held at the nearest left bridge
/// node over each step.
pub fn simulate_bridge_on_grid(
    bridge: &GaussMarkovBridge,
    prior: &LinearPrior,
    sim_grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if (sim_grid.start() - bridge.grid.start()).abs() > 1e-12
        || (sim_grid.end() - bridge.grid.end()).abs() > 1e-12
    {
        return Err(BridgeError::GridMismatch(
            "simulation grid must span the bridge interval".into(),
        ));
    }
    let dt = sim_grid.dt();
    let affine: Vec<(DMatrix<f64>, DVector<f64>)> = (0..=bridge.grid.steps())
        .map(|k| bridge.drift_affine(prior, k))
        .collect();
    for (k, (b, _)) in affine.iter().enumerate() {
        let product = dt * b.norm();
        if product > MAX_STEP_GAIN {
            return Err(BridgeError::StepTooLarge { product, node: k });
        }
    }
    let init = InitialState::gaussian(bridge.mean[0].clone(), bridge.covariance[0].clone())?;
    let start = bridge.grid.start();
    let inv_bridge_dt = 1.0 / bridge.grid.dt();
    let last = bridge.grid.steps();
    simulate(
        |x, t| {
            // Slack absorbs node roundoff so exact node times index their
            // own coefficients.
            let k = ((((t - start) * inv_bridge_dt) + 1e-9).floor() as usize).min(last);
            let (b, c) = &affine[k];
            b * x + c
        },
        bridge.epsilon,
        &init,
        sim_grid,
        n_paths,
        seed,
    )
}

/// Sample mean and unbiased sample covariance across paths at grid time `t`.
pub fn empirical_moments(
    ensemble: &PathEnsemble,
    t: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let tol = 1e-9 * ensemble.grid.span().max(1.0);
    let k = ensemble
        .grid
        .index_of(t, tol)
        .ok_or_else(|| BridgeError::InvalidArgument(format!("t = {t} is not a grid node")))?;
    let n = ensemble.dimension;
    let p = ensemble.n_paths;
    let mut mean = DVector::<f64>::zeros(n);
    for path in 0..p {
        mean += ensemble.state(path, k);
    }
    mean /= p as f64;
    if p < 2 {
        return Err(BridgeError::NotEnoughSamples {
            context: "sample covariance needs at least two paths",
        });
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for path in 0..p {
        let d = ensemble.state(path, k) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (p - 1) as f64;
    Ok((mean, cov))
}

/// One level-set ellipse of a 2D bridge covariance,
/// `(x - center)' Sigma^{-1} (x - center) <= level`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeEllipse {
    pub t: f64,
    pub center: [f64; 2],
    /// Major semi-axis length, `sqrt(level * lambda_max)`.
    pub r1: f64,
    /// Minor semi-axis length.
    pub r2: f64,
    /// Orientation of the major axis in `[0, pi)`; zero for circles.
    pub angle_radians: f64,
}

/// Covariance-tube ellipses for every node of a 2D bridge.
pub fn tube_ellipses(bridge: &GaussMarkovBridge, level: f64) -> Result<Vec<TubeEllipse>> {
    if bridge.dimension() != 2 {
        return Err(BridgeError::UnsupportedDimension {
            got: bridge.dimension(),
            context: "tube ellipses are defined for planar bridges",
        });
    }
    if !(level > 0.0) {
        return Err(BridgeError::InvalidArgument(format!(
            "level must be positive, got {level}"
        )));
    }
    let mut out = Vec::with_capacity(bridge.grid.steps() + 1);
    for (k, sigma) in bridge.covariance.iter().enumerate() {
        let eig = sigma.clone().symmetric_eigen();
        let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let l_hi = eig.eigenvalues[hi];
        let l_lo = eig.eigenvalues[lo];
        let angle = if (l_hi - l_lo).abs() <= 1e-12 * l_hi.abs().max(1.0) {
            0.0
        } else {
            let v = eig.eigenvectors.column(hi);
            let mut a = v[1].atan2(v[0]);
            if a < 0.0 {
                a += std::f64::consts::PI;
            }
            if a >= std::f64::consts::PI {
                a -= std::f64::consts::PI;
            }
            a
        };
        out.push(TubeEllipse {
            t: bridge.grid.node(k),
            center: [bridge.mean[k][0], bridge.mean[k][1]],
            r1: (level * l_hi).sqrt(),
            r2: (level * l_lo).sqrt(),
            angle_radians: angle,
        });
    }
    Ok(out)
}
