//! Closed-form Schrödinger bridges and their zero-noise optimal-transport
//! limits for linear priors with Gaussian marginals.
//!
//! The reference evolution is `dx = A(t) x dt + sqrt(eps) dw`. Steering the
//! law of `x` from `N(m0, Sigma0)` at `t_start` to `N(m1, Sigma1)` at `t_end`
//! amounts to a linear state feedback `-Pi(t) x` plus a feedforward term
//! `m(t)`, where `Pi` solves the matrix Riccati equation
//!
//! ```text
//! Pi' + A' Pi + Pi A - Pi^2 = 0
//! ```
//!
//! with an initial condition assembled from the state transition matrix, the
//! controllability Gramian and the two marginal covariances. The diffusivity
//! `eps` enters only through that initial condition (and through the
//! covariance propagation); `eps = 0` selects the deterministic
//! transport-with-prior limit.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};
use crate::linalg::{
    all_finite, expm, quad_weights, spd_inverse, sqrt_spd, symmetrize, symmetrized,
    symmetry_deviation,
};
use crate::time_grid::TimeGrid;

/// Relative endpoint tolerance enforced by [`bridge_solve`].
pub const ENDPOINT_TOL: f64 = 1e-6;

/// Disagreement threshold (Frobenius) beyond which the explicit zero-noise
/// feedback formula is logged against the integrated Riccati solution.
pub const PI_ZERO_CROSSCHECK_TOL: f64 = 1e-4;

/// Drift matrix of a linear prior: constant, or piecewise constant in time.
#[derive(Debug, Clone)]
pub enum DriftMatrix {
    Constant(DMatrix<f64>),
    /// `segments[i]` applies on `[breakpoints[i-1], breakpoints[i])`, with the
    /// first segment extending to the left and the last to the right.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        segments: Vec<DMatrix<f64>>,
    },
}

impl DriftMatrix {
    fn dimension(&self) -> usize {
        match self {
            DriftMatrix::Constant(a) => a.nrows(),
            DriftMatrix::PiecewiseConstant { segments, .. } => segments[0].nrows(),
        }
    }

    /// Right-continuous evaluation `A(t)`.
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        match self {
            DriftMatrix::Constant(a) => a,
            DriftMatrix::PiecewiseConstant {
                breakpoints,
                segments,
            } => {
                let idx = breakpoints.partition_point(|&b| b <= t);
                &segments[idx]
            }
        }
    }

    /// Left-limit evaluation: the segment in force on an interval ending at `t`.
    fn at_left(&self, t: f64) -> &DMatrix<f64> {
        match self {
            DriftMatrix::Constant(a) => a,
            DriftMatrix::PiecewiseConstant {
                breakpoints,
                segments,
            } => {
                let idx = breakpoints.partition_point(|&b| b < t);
                &segments[idx]
            }
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            DriftMatrix::Constant(_) => &[],
            DriftMatrix::PiecewiseConstant { breakpoints, .. } => breakpoints,
        }
    }
}

/// Reference Markov evolution `dx = A(t) x dt + sqrt(eps) dw`.
#[derive(Debug, Clone)]
pub struct LinearPrior {
    drift: DriftMatrix,
    epsilon: f64,
    dimension: usize,
}

impl LinearPrior {
    pub fn new(drift: DriftMatrix, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(BridgeError::InvalidArgument(format!(
                "diffusion intensity must satisfy epsilon >= 0, got {epsilon}"
            )));
        }
        let dimension = drift.dimension();
        if dimension == 0 {
            return Err(BridgeError::InvalidArgument(
                "prior dimension must be at least 1".into(),
            ));
        }
        let check = |m: &DMatrix<f64>| -> Result<()> {
            if m.nrows() != dimension || m.ncols() != dimension {
                return Err(BridgeError::DimensionMismatch {
                    context: "drift matrix",
                    expected: dimension,
                    got: m.nrows().max(m.ncols()),
                });
            }
            if !all_finite(m) {
                return Err(BridgeError::InvalidArgument(
                    "drift matrix has non-finite entries".into(),
                ));
            }
            Ok(())
        };
        match &drift {
            DriftMatrix::Constant(a) => check(a)?,
            DriftMatrix::PiecewiseConstant {
                breakpoints,
                segments,
            } => {
                if segments.len() != breakpoints.len() + 1 {
                    return Err(BridgeError::InvalidArgument(format!(
                        "piecewise drift needs breakpoints + 1 segments, got {} segments for {} breakpoints",
                        segments.len(),
                        breakpoints.len()
                    )));
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1])
                    || breakpoints.iter().any(|b| !b.is_finite())
                {
                    return Err(BridgeError::InvalidArgument(
                        "breakpoints must be finite and strictly increasing".into(),
                    ));
                }
                for s in segments {
                    check(s)?;
                }
            }
        }
        Ok(LinearPrior {
            drift,
            epsilon,
            dimension,
        })
    }

    /// Constant-drift convenience constructor.
    pub fn constant(a: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        Self::new(DriftMatrix::Constant(a), epsilon)
    }

    /// Scalar multiple of the identity, `A = a I_n`.
    pub fn isotropic(a: f64, dimension: usize, epsilon: f64) -> Result<Self> {
        Self::constant(DMatrix::identity(dimension, dimension) * a, epsilon)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Same prior with a different diffusion intensity.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.drift.clone(), epsilon)
    }

    pub fn drift(&self) -> &DriftMatrix {
        &self.drift
    }

    /// Prior velocity field `v(x, t) = A(t) x`.
    pub fn velocity(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.drift.at(t) * x
    }

    /// Piecewise breakpoints inside the grid span must coincide with nodes.
    pub fn check_grid_alignment(&self, grid: &TimeGrid) -> Result<()> {
        let tol = 1e-9 * grid.span().max(1.0);
        for &b in self.drift.breakpoints() {
            if b <= grid.start() || b >= grid.end() {
                continue;
            }
            if grid.index_of(b, tol).is_none() {
                return Err(BridgeError::BreakpointMisaligned { breakpoint: b });
            }
        }
        Ok(())
    }
}

/// Gaussian endpoint distribution with strictly positive-definite covariance.
#[derive(Debug, Clone)]
pub struct GaussianMarginal {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianMarginal {
    /// Relative symmetry tolerance for the covariance.
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(BridgeError::DimensionMismatch {
                context: "marginal covariance",
                expected: n,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if !mean.iter().all(|v| v.is_finite()) || !all_finite(&covariance) {
            return Err(BridgeError::InvalidArgument(
                "marginal entries must be finite".into(),
            ));
        }
        let deviation = symmetry_deviation(&covariance);
        if deviation > Self::SYMMETRY_TOL {
            return Err(BridgeError::NotSymmetric {
                deviation,
                tolerance: Self::SYMMETRY_TOL,
            });
        }
        let covariance = symmetrized(&covariance);
        let eig = covariance.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(BridgeError::NotPositiveDefinite {
                context: "marginal covariance (degenerate marginals are rejected)",
            });
        }
        Ok(GaussianMarginal { mean, covariance })
    }

    /// Scalar marginal `N(mean, variance)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_vec(vec![mean]),
            DMatrix::from_vec(1, 1, vec![variance]),
        )
    }

    /// Isotropic marginal `N(mean, variance * I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Density value at `x`.
    pub fn density(&self, x: &DVector<f64>) -> f64 {
        let n = self.dimension() as f64;
        let chol = self
            .covariance
            .clone()
            .cholesky()
            .expect("covariance checked positive definite at construction");
        let diff = x - &self.mean;
        let q = diff.dot(&chol.solve(&diff));
        let det = chol.determinant();
        (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(n / 2.0) * det.sqrt())
    }
}

/// State transition matrix `Phi(t, s)` of `x' = A(t) x`, with `Phi(s, s) = I`.
///
/// Constant drift uses the matrix exponential directly; piecewise-constant
/// drift multiplies the segment exponentials in time order.
pub fn transition(prior: &LinearPrior, s: f64, t: f64) -> Result<DMatrix<f64>> {
    if s > t {
        return Err(BridgeError::ArgumentOrder { s, t });
    }
    let n = prior.dimension;
    if s == t {
        return Ok(DMatrix::identity(n, n));
    }
    match &prior.drift {
        DriftMatrix::Constant(a) => Ok(expm(&(a * (t - s)))),
        DriftMatrix::PiecewiseConstant { breakpoints, .. } => {
            let mut cuts: Vec<f64> = vec![s];
            cuts.extend(breakpoints.iter().copied().filter(|&b| b > s && b < t));
            cuts.push(t);
            let mut acc = DMatrix::identity(n, n);
            for w in cuts.windows(2) {
                let seg = prior.drift.at(0.5 * (w[0] + w[1]));
                acc = expm(&(seg * (w[1] - w[0]))) * acc;
            }
            Ok(acc)
        }
    }
}

fn default_panels(span: f64) -> usize {
    ((span * TimeGrid::DEFAULT_STEPS_PER_UNIT_TIME).ceil() as usize).clamp(16, 400_000)
}

/// Controllability Gramian `M(t, s) = int_s^t Phi(t, tau) Phi(t, tau)' dtau`
/// by composite fourth-order quadrature with `panels` uniform panels.
pub fn gramian_with_panels(
    prior: &LinearPrior,
    s: f64,
    t: f64,
    panels: usize,
) -> Result<DMatrix<f64>> {
    if s >= t {
        return Err(BridgeError::EmptyInterval { s, t });
    }
    let n = prior.dimension;
    let h = (t - s) / panels as f64;
    let w = quad_weights(panels, h);

    // One-panel transition, shared across panels for constant drift.
    let constant_step = match &prior.drift {
        DriftMatrix::Constant(a) => Some(expm(&(a * h))),
        DriftMatrix::PiecewiseConstant { .. } => None,
    };

    // Phi(t, tau_j) accumulated backwards from tau = t.
    let mut acc = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::zeros(n, n);
    m += &acc * acc.transpose() * w[panels];
    for j in (0..panels).rev() {
        match &constant_step {
            Some(e) => acc *= e,
            None => {
                let lo = s + j as f64 * h;
                let hi = if j + 1 == panels { t } else { lo + h };
                acc *= transition(prior, lo, hi)?;
            }
        }
        m += &acc * acc.transpose() * w[j];
    }
    symmetrize(&mut m);
    if m.clone().cholesky().is_none() {
        return Err(BridgeError::QuadratureResolution {
            context: format!(
                "Gramian over [{s}, {t}] is not positive definite after symmetrization ({panels} panels)"
            ),
        });
    }
    Ok(m)
}

/// Controllability Gramian at the default quadrature resolution.
pub fn gramian(prior: &LinearPrior, s: f64, t: f64) -> Result<DMatrix<f64>> {
    gramian_with_panels(prior, s, t, default_panels(t - s))
}

/// Boundary feedback gain `Pi_eps(t_start)` for covariance steering:
///
/// ```text
/// Pi_eps(0) = S0^{-1/2} [ (eps/2) I + S0^{1/2} Phi' M^{-1} Phi S0^{1/2}
///             - ( (eps^2/4) I + S0^{1/2} Phi' M^{-1} S1 M^{-1} Phi S0^{1/2} )^{1/2} ] S0^{-1/2}
/// ```
///
/// with `Phi = Phi(t_end, t_start)` and `M` the full-interval Gramian. Setting
/// `eps = 0` drops the diffusion terms and yields the transport limit.
pub fn pi_initial(
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    phi10: &DMatrix<f64>,
    m10: &DMatrix<f64>,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    if epsilon < 0.0 {
        return Err(BridgeError::InvalidArgument(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    let n = sigma0.nrows();
    let eye = DMatrix::<f64>::identity(n, n);

    let s0_half = sqrt_spd(sigma0)?;
    let s0_half_inv = spd_inverse(&s0_half, "Sigma0^{1/2}")?;
    let m10_inv = spd_inverse(m10, "full-interval Gramian")?;

    // G = S0^{1/2} Phi' M^{-1}
    let g = &s0_half * phi10.transpose() * &m10_inv;
    let reach = symmetrized(&(&g * phi10 * &s0_half));
    let inner = symmetrized(&(&eye * (epsilon * epsilon / 4.0) + &g * sigma1 * g.transpose()));
    let inner_root = sqrt_spd(&inner)?;

    let bracket = &eye * (epsilon / 2.0) + reach - inner_root;
    Ok(symmetrized(&(&s0_half_inv * bracket * &s0_half_inv)))
}

/// Riccati right-hand side `Pi' = -A' Pi - Pi A + Pi^2`.
fn riccati_rhs(a: &DMatrix<f64>, pi: &DMatrix<f64>) -> DMatrix<f64> {
    pi * pi - a.transpose() * pi - pi * a
}

/// Integrate the matrix Riccati equation `Pi' + A' Pi + Pi A - Pi^2 = 0`
/// from `Pi(t_start) = pi0` over the grid with classical RK4, symmetrizing
/// after every step. Blow-up (finite escape time) is reported with the node
/// at which entries stopped being finite.
pub fn riccati_integrate(
    pi0: &DMatrix<f64>,
    prior: &LinearPrior,
    grid: &TimeGrid,
) -> Result<Vec<DMatrix<f64>>> {
    let n = prior.dimension;
    if pi0.nrows() != n || pi0.ncols() != n {
        return Err(BridgeError::DimensionMismatch {
            context: "Riccati initial condition",
            expected: n,
            got: pi0.nrows().max(pi0.ncols()),
        });
    }
    prior.check_grid_alignment(grid)?;

    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push(symmetrized(pi0));
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let t_next = grid.node(k + 1);
        let a0 = prior.drift.at(t);
        let am = prior.drift.at(t + 0.5 * dt);
        let a1 = prior.drift.at_left(t_next);

        let p = &out[k];
        let k1 = riccati_rhs(a0, p);
        let k2 = riccati_rhs(am, &(p + &k1 * (dt / 2.0)));
        let k3 = riccati_rhs(am, &(p + &k2 * (dt / 2.0)));
        let k4 = riccati_rhs(a1, &(p + &k3 * dt));
        let mut next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        symmetrize(&mut next);
        if !all_finite(&next) {
            return Err(BridgeError::FiniteEscape {
                node: k + 1,
                time: t_next,
            });
        }
        out.push(next);
    }
    Ok(out)
}

/// Fourth-order (Hermite) mid-step values of `Pi` between consecutive nodes,
/// using the Riccati vector field for the endpoint slopes.
fn pi_midpoints(pi: &[DMatrix<f64>], prior: &LinearPrior, grid: &TimeGrid) -> Vec<DMatrix<f64>> {
    let dt = grid.dt();
    (0..grid.steps())
        .map(|k| {
            let f0 = riccati_rhs(prior.drift.at(grid.node(k)), &pi[k]);
            let f1 = riccati_rhs(prior.drift.at_left(grid.node(k + 1)), &pi[k + 1]);
            symmetrized(&((&pi[k] + &pi[k + 1]) * 0.5 + (f0 - f1) * (dt / 8.0)))
        })
        .collect()
}

/// Closed-loop drift matrices `A(t) - Pi(t)` at nodes and mid-steps.
struct ClosedLoop {
    nodes: Vec<DMatrix<f64>>,
    mids: Vec<DMatrix<f64>>,
}

impl ClosedLoop {
    fn build(prior: &LinearPrior, pi: &[DMatrix<f64>], grid: &TimeGrid) -> Self {
        let dt = grid.dt();
        let mids_pi = pi_midpoints(pi, prior, grid);
        let nodes = (0..=grid.steps())
            .map(|k| {
                let a = if k == grid.steps() {
                    prior.drift.at_left(grid.node(k))
                } else {
                    prior.drift.at(grid.node(k))
                };
                a - &pi[k]
            })
            .collect();
        let mids = (0..grid.steps())
            .map(|k| prior.drift.at(grid.node(k) + 0.5 * dt) - &mids_pi[k])
            .collect();
        ClosedLoop { nodes, mids }
    }

    /// RK4 one-step propagator `S_k` with `Phi_{k+1} = S_k Phi_k`.
    fn step_matrix(&self, k: usize, dt: f64) -> DMatrix<f64> {
        let n = self.nodes[k].nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let k1 = self.nodes[k].clone();
        let k2 = &self.mids[k] * (&eye + &k1 * (dt / 2.0));
        let k3 = &self.mids[k] * (&eye + &k2 * (dt / 2.0));
        let k4 = &self.nodes[k + 1] * (&eye + &k3 * dt);
        eye + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }
}

/// Feedforward drift and the mean flow it induces.
#[derive(Debug, Clone)]
pub struct SteeringSolution {
    /// `m(t_k)`: deterministic drift correction steering the mean.
    pub mean_drift: Vec<DVector<f64>>,
    /// `n(t_k)`: mean of the bridge state, with `n(t_end) = m1` by construction.
    pub mean: Vec<DVector<f64>>,
}

/// Feedforward term `m(t)` for mean steering, together with the induced mean
/// flow `n(t)`.
///
/// With `Psi_k = PhiHat(t_end, t_k)` the closed-loop transition matrices and
/// `MHat` their Gramian on the same quadrature weights,
/// `m(t_k) = Psi_k' MHat^{-1} (m1 - Psi_0 m0)`. The discrete mean flow uses
/// the identical weights, which makes `n(t_end) = m1` hold to roundoff
/// independently of the integration error.
pub fn steering_mean_drift(
    prior: &LinearPrior,
    pi: &[DMatrix<f64>],
    m0: &DVector<f64>,
    m1: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<SteeringSolution> {
    let n = prior.dimension;
    let steps = grid.steps();
    if pi.len() != steps + 1 {
        return Err(BridgeError::GridMismatch(format!(
            "feedback sequence has {} nodes, grid has {}",
            pi.len(),
            steps + 1
        )));
    }
    let dt = grid.dt();
    let loop_mats = ClosedLoop::build(prior, pi, grid);

    // Forward transition matrices PhiHat(t_k, t_start) and their inverses.
    let mut phihat = Vec::with_capacity(steps + 1);
    phihat.push(DMatrix::<f64>::identity(n, n));
    for k in 0..steps {
        let next = loop_mats.step_matrix(k, dt) * &phihat[k];
        if !all_finite(&next) {
            return Err(BridgeError::FiniteEscape {
                node: k + 1,
                time: grid.node(k + 1),
            });
        }
        phihat.push(next);
    }
    let phihat_inv: Vec<DMatrix<f64>> = phihat
        .iter()
        .map(|p| {
            p.clone()
                .lu()
                .try_inverse()
                .ok_or(BridgeError::DegenerateConfiguration(
                    "closed-loop transition matrix is singular".into(),
                ))
        })
        .collect::<Result<_>>()?;

    // Psi_k = PhiHat(t_end, t_k).
    let psi: Vec<DMatrix<f64>> = phihat_inv.iter().map(|inv| &phihat[steps] * inv).collect();

    let w = quad_weights(steps, dt);
    let mut mhat = DMatrix::<f64>::zeros(n, n);
    for (k, wk) in w.iter().enumerate() {
        mhat += &psi[k] * psi[k].transpose() * *wk;
    }
    symmetrize(&mut mhat);
    let chol = mhat
        .clone()
        .cholesky()
        .ok_or(BridgeError::UncontrollableClosedLoop)?;
    let gain = chol.solve(&(m1 - &psi[0] * m0));

    let mean_drift: Vec<DVector<f64>> = psi.iter().map(|p| p.transpose() * &gain).collect();

    // Discrete variation of constants with the same family of quadrature
    // weights. Prefix integrals are built incrementally: even prefixes by the
    // Simpson recurrence, odd prefixes from the even prefix three panels back
    // plus a 3/8 tail, exactly matching `quad_weights` panel by panel.
    let pulled: Vec<DVector<f64>> = (0..=steps)
        .map(|k| &phihat_inv[k] * &mean_drift[k])
        .collect();
    let mut even_prefix: Vec<DVector<f64>> = Vec::with_capacity(steps / 2 + 1);
    even_prefix.push(DVector::zeros(n));
    let mut mean = Vec::with_capacity(steps + 1);
    mean.push(m0.clone());
    for j in 1..=steps {
        let q = if j % 2 == 0 {
            let prev = &even_prefix[j / 2 - 1];
            let next =
                prev + (&pulled[j - 2] + &pulled[j - 1] * 4.0 + &pulled[j]) * (dt / 3.0);
            even_prefix.push(next);
            even_prefix[j / 2].clone()
        } else if j == 1 {
            (&pulled[0] + &pulled[1]) * (dt / 2.0)
        } else {
            &even_prefix[(j - 3) / 2]
                + (&pulled[j - 3] + &pulled[j - 2] * 3.0 + &pulled[j - 1] * 3.0 + &pulled[j])
                    * (3.0 * dt / 8.0)
        };
        mean.push(&phihat[j] * (m0 + q));
    }
    Ok(SteeringSolution { mean_drift, mean })
}

/// Explicit zero-noise covariance
///
/// ```text
/// Sigma(t) = M_t Phi(0,t)' S0^{-1/2} [ -R + W^{1/2} + S0^{1/2} Phi_t' M_t^{-1} Phi_t S0^{1/2} ]^2
///            S0^{-1/2} Phi(0,t) M_t
/// ```
///
/// where `R` and `W` are the full-interval reachability terms of
/// [`pi_initial`], `Phi_t = Phi(t, t_start)`, and `M_t = M(t, t_start)`.
/// Valid strictly inside `(t_start, t_end]`; the limit `t -> t_start` is
/// `Sigma0` analytically but a 0/0 form numerically, so propagation code uses
/// the Lyapunov route near the left endpoint.
pub fn covariance_explicit(
    prior: &LinearPrior,
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    grid: &TimeGrid,
    t: f64,
) -> Result<DMatrix<f64>> {
    if t <= grid.start() || t > grid.end() + 1e-12 * grid.span() {
        return Err(BridgeError::InvalidTime {
            t,
            lo: grid.start(),
            hi: grid.end(),
        });
    }
    let s0_half = sqrt_spd(sigma0)?;
    let s0_half_inv = spd_inverse(&s0_half, "Sigma0^{1/2}")?;

    let phi10 = transition(prior, grid.start(), grid.end())?;
    let m10 = gramian_with_panels(prior, grid.start(), grid.end(), grid.steps())?;
    let m10_inv = spd_inverse(&m10, "full-interval Gramian")?;
    let g = &s0_half * phi10.transpose() * &m10_inv;
    let reach = symmetrized(&(&g * &phi10 * &s0_half));
    let w_root = sqrt_spd(&symmetrized(&(&g * sigma1 * g.transpose())))?;

    let phi_t = transition(prior, grid.start(), t)?;
    let m_t = gramian(prior, grid.start(), t)?;
    let m_t_inv = spd_inverse(&m_t, "partial-interval Gramian")?;
    let local = symmetrized(&(&s0_half * phi_t.transpose() * &m_t_inv * &phi_t * &s0_half));

    let bracket = -reach + w_root + local;
    let phi_0t = phi_t
        .clone()
        .lu()
        .try_inverse()
        .ok_or(BridgeError::DegenerateConfiguration(
            "transition matrix is singular".into(),
        ))?;

    let core = &s0_half_inv * (&bracket * &bracket) * &s0_half_inv;
    Ok(symmetrized(&(&m_t * phi_0t.transpose() * core * phi_0t * &m_t)))
}

/// Verbatim transcription of the explicit zero-noise feedback formula.
/// Retained as a logged cross-check only; the integrated Riccati solution is
/// authoritative (see [`pi_zero_explicit`]).
pub fn pi_zero_closed_form(
    prior: &LinearPrior,
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    grid: &TimeGrid,
    t: f64,
) -> Result<DMatrix<f64>> {
    if t <= grid.start() || t > grid.end() + 1e-12 * grid.span() {
        return Err(BridgeError::InvalidTime {
            t,
            lo: grid.start(),
            hi: grid.end(),
        });
    }
    let s0_half = sqrt_spd(sigma0)?;
    let s0_half_inv = spd_inverse(&s0_half, "Sigma0^{1/2}")?;
    let phi10 = transition(prior, grid.start(), grid.end())?;
    let m10 = gramian_with_panels(prior, grid.start(), grid.end(), grid.steps())?;
    let m10_inv = spd_inverse(&m10, "full-interval Gramian")?;
    let g = &s0_half * phi10.transpose() * &m10_inv;
    let w_root = sqrt_spd(&symmetrized(&(&g * sigma1 * g.transpose())))?;

    let phi_t = transition(prior, grid.start(), t)?;
    let m_t = gramian(prior, grid.start(), t)?;
    let m_t_inv = spd_inverse(&m_t, "partial-interval Gramian")?;

    let bracket = phi10.transpose() * &m10_inv * &phi10
        - &s0_half_inv * &w_root * &s0_half_inv
        - &s0_half_inv;
    let bracket_inv = bracket
        .lu()
        .try_inverse()
        .ok_or(BridgeError::DegenerateConfiguration(
            "explicit feedback bracket is singular".into(),
        ))?;
    Ok(-&m_t_inv - &m_t_inv * &phi_t * bracket_inv * phi_t.transpose() * &m_t_inv)
}

/// Zero-noise feedback gain `Pi_0(t)`.
///
/// Returns the Riccati-integrated value (the authoritative route). The
/// explicit closed-form transcription is evaluated alongside and any
/// disagreement beyond [`PI_ZERO_CROSSCHECK_TOL`] is logged with both values;
/// it never overrides the integrated solution.
pub fn pi_zero_explicit(
    prior: &LinearPrior,
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    grid: &TimeGrid,
    t: f64,
) -> Result<DMatrix<f64>> {
    if t <= grid.start() || t > grid.end() + 1e-12 * grid.span() {
        return Err(BridgeError::InvalidTime {
            t,
            lo: grid.start(),
            hi: grid.end(),
        });
    }
    let phi10 = transition(prior, grid.start(), grid.end())?;
    let m10 = gramian_with_panels(prior, grid.start(), grid.end(), grid.steps())?;
    let pi0 = pi_initial(sigma0, sigma1, &phi10, &m10, 0.0)?;

    let frac = (t - grid.start()) / grid.span();
    let sub_steps = ((grid.steps() as f64 * frac).round() as usize).max(2);
    let sub_grid = TimeGrid::new(grid.start(), t, sub_steps)?;
    let integrated = riccati_integrate(&pi0, prior, &sub_grid)?
        .pop()
        .expect("integration returns at least one node");

    match pi_zero_closed_form(prior, sigma0, sigma1, grid, t) {
        Ok(formula) => {
            let gap = (&formula - &integrated).norm();
            if gap > PI_ZERO_CROSSCHECK_TOL {
                log::warn!(
                    "explicit zero-noise feedback disagrees with the integrated Riccati solution at t = {t}: \
                     ||difference||_F = {gap:.6e}; integrated = {integrated:?}, closed form = {formula:?}; \
                     returning the integrated value"
                );
            }
        }
        Err(err) => {
            log::warn!(
                "explicit zero-noise feedback formula could not be evaluated at t = {t} ({err}); \
                 returning the integrated value"
            );
        }
    }
    Ok(integrated)
}

/// Time-gridded closed-form bridge: feedback gains, feedforward drift, mean
/// flow and covariance flow, plus endpoint diagnostics.
#[derive(Debug, Clone)]
pub struct GaussMarkovBridge {
    pub grid: TimeGrid,
    /// Feedback gains `Pi(t_k)` (symmetric).
    pub pi: Vec<DMatrix<f64>>,
    /// Feedforward drift `m(t_k)`.
    pub mean_drift: Vec<DVector<f64>>,
    /// State mean `n(t_k)`.
    pub mean: Vec<DVector<f64>>,
    /// State covariance `Sigma(t_k)` (symmetric positive definite).
    pub covariance: Vec<DMatrix<f64>>,
    /// Diffusion intensity the bridge was solved for.
    pub epsilon: f64,
    /// `||n(t_end) - m1||` achieved by the solve.
    pub endpoint_mean_error: f64,
    /// `||Sigma(t_end) - Sigma1||_F` achieved by the solve.
    pub endpoint_cov_error: f64,
}

impl GaussMarkovBridge {
    pub fn dimension(&self) -> usize {
        self.mean[0].len()
    }

    /// Forward drift of the bridge evolution at node `k`:
    /// `(A(t_k) - Pi(t_k)) x + m(t_k)`.
    pub fn drift_at(&self, prior: &LinearPrior, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let a = prior.drift().at(self.grid.node(k));
        (a - &self.pi[k]) * x + &self.mean_drift[k]
    }

    /// Affine pieces `(B, b)` of the forward drift at node `k`, so the drift
    /// is `B x + b`.
    pub fn drift_affine(&self, prior: &LinearPrior, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = prior.drift().at(self.grid.node(k));
        (a - &self.pi[k], self.mean_drift[k].clone())
    }

    /// Affine pieces of the current (probability-flux) velocity at node `k`:
    /// the forward drift minus the osmotic term `(eps/2) grad log rho`,
    /// which for the Gaussian law is `B x + b` with
    /// `B = A - Pi + (eps/2) Sigma^{-1}` and `b = m - (eps/2) Sigma^{-1} n`.
    /// For `eps = 0` this is the forward drift itself.
    pub fn current_velocity_affine(
        &self,
        prior: &LinearPrior,
        k: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (mut b_mat, mut b_vec) = self.drift_affine(prior, k);
        if self.epsilon > 0.0 {
            let sig_inv = spd_inverse(&self.covariance[k], "bridge covariance")?;
            b_mat += &sig_inv * (self.epsilon / 2.0);
            b_vec -= &sig_inv * &self.mean[k] * (self.epsilon / 2.0);
        }
        Ok((b_mat, b_vec))
    }

    /// Gaussian law of the state at node `k`.
    pub fn marginal_at(&self, k: usize) -> Result<GaussianMarginal> {
        GaussianMarginal::new(self.mean[k].clone(), self.covariance[k].clone())
    }
}

/// Solve the bridge end to end: boundary gain, Riccati integration, mean
/// steering, and covariance propagation by the Lyapunov equation
/// `Sigma' = (A - Pi) Sigma + Sigma (A - Pi)' + eps I`.
///
/// The returned bridge satisfies `||n(t_end) - m1|| <= 1e-6 (1 + ||m1||)` and
/// `||Sigma(t_end) - Sigma1||_F <= 1e-6 ||Sigma1||_F`, or an error reports the
/// stage that failed.
pub fn bridge_solve(
    prior: &LinearPrior,
    rho0: &GaussianMarginal,
    rho1: &GaussianMarginal,
    grid: &TimeGrid,
) -> Result<GaussMarkovBridge> {
    let n = prior.dimension();
    for (marginal, which) in [(rho0, "initial marginal"), (rho1, "final marginal")] {
        if marginal.dimension() != n {
            return Err(BridgeError::DimensionMismatch {
                context: "bridge marginals",
                expected: n,
                got: marginal.dimension(),
            }
            .at_stage(if which == "initial marginal" {
                "validate initial marginal"
            } else {
                "validate final marginal"
            }));
        }
    }
    prior
        .check_grid_alignment(grid)
        .map_err(|e| e.at_stage("validate grid"))?;

    let phi10 =
        transition(prior, grid.start(), grid.end()).map_err(|e| e.at_stage("transition"))?;
    let m10 = gramian_with_panels(prior, grid.start(), grid.end(), grid.steps())
        .map_err(|e| e.at_stage("gramian"))?;
    let pi0 = pi_initial(
        rho0.covariance(),
        rho1.covariance(),
        &phi10,
        &m10,
        prior.epsilon(),
    )
    .map_err(|e| e.at_stage("boundary gain"))?;
    let pi = riccati_integrate(&pi0, prior, grid).map_err(|e| e.at_stage("Riccati integration"))?;
    let steering = steering_mean_drift(prior, &pi, rho0.mean(), rho1.mean(), grid)
        .map_err(|e| e.at_stage("mean steering"))?;

    // Covariance propagation: RK4 on the Lyapunov equation with diffusion.
    let eps = prior.epsilon();
    let dt = grid.dt();
    let loop_mats = ClosedLoop::build(prior, &pi, grid);
    let eye = DMatrix::<f64>::identity(n, n);
    let lyap = |abar: &DMatrix<f64>, sig: &DMatrix<f64>| -> DMatrix<f64> {
        abar * sig + sig * abar.transpose() + &eye * eps
    };
    let mut covariance = Vec::with_capacity(grid.steps() + 1);
    covariance.push(rho0.covariance().clone());
    for k in 0..grid.steps() {
        let s = &covariance[k];
        let k1 = lyap(&loop_mats.nodes[k], s);
        let k2 = lyap(&loop_mats.mids[k], &(s + &k1 * (dt / 2.0)));
        let k3 = lyap(&loop_mats.mids[k], &(s + &k2 * (dt / 2.0)));
        let k4 = lyap(&loop_mats.nodes[k + 1], &(s + &k3 * dt));
        let mut next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        symmetrize(&mut next);
        if !all_finite(&next) || next.clone().cholesky().is_none() {
            return Err(BridgeError::CovarianceNotPositive {
                node: k + 1,
                time: grid.node(k + 1),
            }
            .at_stage("covariance propagation"));
        }
        covariance.push(next);
    }

    let endpoint_mean_error = (steering.mean.last().unwrap() - rho1.mean()).norm();
    let mean_tol = ENDPOINT_TOL * (1.0 + rho1.mean().norm());
    if endpoint_mean_error > mean_tol {
        return Err(BridgeError::EndpointMiss {
            quantity: "mean",
            error: endpoint_mean_error,
            tolerance: mean_tol,
        }
        .at_stage("endpoint check"));
    }
    let endpoint_cov_error = (covariance.last().unwrap() - rho1.covariance()).norm();
    let cov_tol = ENDPOINT_TOL * rho1.covariance().norm();
    if endpoint_cov_error > cov_tol {
        return Err(BridgeError::EndpointMiss {
            quantity: "covariance",
            error: endpoint_cov_error,
            tolerance: cov_tol,
        }
        .at_stage("endpoint check"));
    }

    Ok(GaussMarkovBridge {
        grid: grid.clone(),
        pi,
        mean_drift: steering.mean_drift,
        mean: steering.mean,
        covariance,
        epsilon: eps,
        endpoint_mean_error,
        endpoint_cov_error,
    })
}
