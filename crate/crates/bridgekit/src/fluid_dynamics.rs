//! Variational functionals and PDE residuals for density flows.
//!
//! A [`FlowSample`] pairs a density flow with a velocity field on shared
//! spatial and time grids. Three functionals act on it:
//!
//! - `bb_action`: kinetic energy `int int 1/2 ||v||^2 rho dx dt`;
//! - `prior_action`: relative kinetic energy `int int 1/2 ||v - v_prior||^2 rho`;
//! - `sb_action`: kinetic energy plus the scaled Fisher information
//!   `(eps^2 / 8) int int ||grad log rho||^2 rho`.
//!
//! Residual evaluators turn optimality claims into checks: the continuity
//! residual `d rho/dt + div(v rho)` measures whether a pair is an admissible
//! flow at all, and the Hamilton-Jacobi residual
//! `d psi/dt + v . grad psi + 1/2 ||grad psi||^2` certifies optimality of a
//! quadratic potential assembled from a solved bridge.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};
use crate::gauss_markov::{GaussMarkovBridge, LinearPrior};
use crate::linalg::{derivative_weights, prefix_integrals, spd_inverse};
use crate::schrodinger_grid::{grid_gradient, DriftField, DriftKind, GridDensity, SpatialGrid, SUPPORT_FLOOR};
use crate::time_grid::TimeGrid;

/// Density flow and velocity field sampled on shared grids.
#[derive(Debug, Clone)]
pub struct FlowSample {
    spatial: SpatialGrid,
    times: TimeGrid,
    densities: Vec<GridDensity>,
    velocities: Vec<DriftField>,
}

impl FlowSample {
    pub fn new(
        spatial: SpatialGrid,
        times: TimeGrid,
        densities: Vec<GridDensity>,
        velocities: Vec<DriftField>,
    ) -> Result<Self> {
        let nt = times.steps() + 1;
        if densities.len() != nt || velocities.len() != nt {
            return Err(BridgeError::GridMismatch(format!(
                "flow needs {nt} slices, got {} densities and {} velocity fields",
                densities.len(),
                velocities.len()
            )));
        }
        if densities.iter().any(|d| d.grid() != &spatial)
            || velocities.iter().any(|v| v.grid() != &spatial)
        {
            return Err(BridgeError::GridMismatch(
                "every slice must live on the shared spatial grid".into(),
            ));
        }
        Ok(FlowSample {
            spatial,
            times,
            densities,
            velocities,
        })
    }

    /// Sample a solved bridge on a spatial grid, taking every `stride`-th
    /// node of the bridge's time grid. The velocity is the current
    /// (probability-flux) velocity, which satisfies the continuity equation;
    /// at zero diffusion it coincides with the bridge drift.
    pub fn from_bridge(
        bridge: &GaussMarkovBridge,
        prior: &LinearPrior,
        spatial: &SpatialGrid,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || bridge.grid.steps() % stride != 0 {
            return Err(BridgeError::InvalidArgument(format!(
                "stride {stride} must divide the bridge grid ({} steps)",
                bridge.grid.steps()
            )));
        }
        if bridge.dimension() != spatial.dimension() {
            return Err(BridgeError::DimensionMismatch {
                context: "bridge dimension vs spatial grid",
                expected: spatial.dimension(),
                got: bridge.dimension(),
            });
        }
        let times = TimeGrid::new(
            bridge.grid.start(),
            bridge.grid.end(),
            bridge.grid.steps() / stride,
        )?;
        let mut densities = Vec::with_capacity(times.steps() + 1);
        let mut velocities = Vec::with_capacity(times.steps() + 1);
        for j in 0..=times.steps() {
            let k = j * stride;
            let marginal = bridge.marginal_at(k)?;
            let (b_mat, b_vec) = bridge.current_velocity_affine(prior, k)?;
            let n_nodes = spatial.len();
            let mut rho = Vec::with_capacity(n_nodes);
            let mut comps = vec![vec![0.0; n_nodes]; spatial.dimension()];
            for i in 0..n_nodes {
                let x = spatial.node(i);
                rho.push(marginal.density(&x));
                let v = &b_mat * &x + &b_vec;
                for axis in 0..spatial.dimension() {
                    comps[axis][i] = v[axis];
                }
            }
            densities.push(GridDensity::new(spatial.clone(), rho)?);
            velocities.push(DriftField::from_components(
                spatial.clone(),
                times.node(j),
                DriftKind::Current,
                comps,
                vec![true; n_nodes],
            )?);
        }
        FlowSample::new(spatial.clone(), times, densities, velocities)
    }

    /// Same flow with the velocity shifted by `offset(x, t)` at every
    /// unmasked node. Used to test optimality against admissible competitors:
    /// offsets of the form `w(x, t) / rho(x, t)` with `w` divergence-free
    /// leave the continuity equation (and hence the endpoint marginals)
    /// untouched.
    pub fn with_velocity_offset<F>(&self, offset: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>, f64) -> DVector<f64>,
    {
        let d = self.spatial.dimension();
        let mut velocities = Vec::with_capacity(self.velocities.len());
        for (j, field) in self.velocities.iter().enumerate() {
            let t = self.times.node(j);
            let mut comps: Vec<Vec<f64>> =
                (0..d).map(|axis| field.component(axis).to_vec()).collect();
            for i in 0..self.spatial.len() {
                if !field.is_valid(i) {
                    continue;
                }
                let delta = offset(&self.spatial.node(i), t);
                for axis in 0..d {
                    comps[axis][i] += delta[axis];
                }
            }
            velocities.push(DriftField::from_components(
                self.spatial.clone(),
                t,
                field.kind,
                comps,
                field.mask().to_vec(),
            )?);
        }
        FlowSample::new(
            self.spatial.clone(),
            self.times.clone(),
            self.densities.clone(),
            velocities,
        )
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn density(&self, j: usize) -> &GridDensity {
        &self.densities[j]
    }

    pub fn velocity(&self, j: usize) -> &DriftField {
        &self.velocities[j]
    }
}

/// Continuity-equation residual of a flow, per node and time slice.
#[derive(Debug, Clone)]
pub struct ContinuityResidual {
    /// `field[time][node]`.
    pub field: Vec<Vec<f64>>,
    /// Max absolute residual over all nodes and times.
    pub max_abs: f64,
    /// Max absolute discrete time derivative of the density; the natural
    /// scale against which the residual is read.
    pub time_scale: f64,
}

/// `d rho/dt + div(v rho)` with central differences in time and space
/// (second-order one-sided at boundaries). Needs at least three time nodes.
pub fn continuity_residual(flow: &FlowSample) -> Result<ContinuityResidual> {
    let nt = flow.times.steps() + 1;
    if nt < 3 {
        return Err(BridgeError::InvalidArgument(
            "continuity residual needs at least three time nodes".into(),
        ));
    }
    let dt = flow.times.dt();
    let d = flow.spatial.dimension();
    let n = flow.spatial.len();

    // Divergence of the mass flux per slice.
    let mut divergence: Vec<Vec<f64>> = Vec::with_capacity(nt);
    for j in 0..nt {
        let rho = flow.densities[j].values();
        let vel = &flow.velocities[j];
        let mut div = vec![0.0; n];
        for axis in 0..d {
            let flux: Vec<f64> = (0..n)
                .map(|i| vel.component(axis)[i] * rho[i])
                .collect();
            let g = grid_gradient(&flow.spatial, &flux);
            for i in 0..n {
                div[i] += g[axis][i];
            }
        }
        divergence.push(div);
    }

    let mut field = Vec::with_capacity(nt);
    let mut max_abs = 0.0_f64;
    let mut time_scale = 0.0_f64;
    for j in 0..nt {
        let rho_dot: Vec<f64> = (0..n)
            .map(|i| {
                if j == 0 {
                    (-3.0 * flow.densities[0].values()[i] + 4.0 * flow.densities[1].values()[i]
                        - flow.densities[2].values()[i])
                        / (2.0 * dt)
                } else if j == nt - 1 {
                    (3.0 * flow.densities[nt - 1].values()[i]
                        - 4.0 * flow.densities[nt - 2].values()[i]
                        + flow.densities[nt - 3].values()[i])
                        / (2.0 * dt)
                } else {
                    (flow.densities[j + 1].values()[i] - flow.densities[j - 1].values()[i])
                        / (2.0 * dt)
                }
            })
            .collect();
        let slice: Vec<f64> = (0..n).map(|i| rho_dot[i] + divergence[j][i]).collect();
        for i in 0..n {
            max_abs = max_abs.max(slice[i].abs());
            time_scale = time_scale.max(rho_dot[i].abs());
        }
        field.push(slice);
    }
    Ok(ContinuityResidual {
        field,
        max_abs,
        time_scale,
    })
}

/// Quadratic space-time potential `psi(x, t) = -1/2 x' P(t) x + m(t)' x + c(t)`
/// sampled on a time grid.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    pub grid: TimeGrid,
    /// `P(t_k)`, symmetric.
    pub quad: Vec<DMatrix<f64>>,
    /// `m(t_k)`.
    pub linear: Vec<DVector<f64>>,
    /// `c(t_k)`, with `c(t_start) = 0`.
    pub offset: Vec<f64>,
}

impl QuadraticPotential {
    /// Assemble the optimality certificate of a solved bridge:
    /// `P = Pi`, `m` the feedforward drift, and
    /// `c(t) = -1/2 int ||m||^2` from the shared prefix quadrature.
    pub fn from_bridge(bridge: &GaussMarkovBridge) -> Self {
        let speed_sq: Vec<f64> = bridge.mean_drift.iter().map(|m| m.norm_squared()).collect();
        let offset: Vec<f64> = prefix_integrals(&speed_sq, bridge.grid.dt())
            .into_iter()
            .map(|v| -0.5 * v)
            .collect();
        QuadraticPotential {
            grid: bridge.grid.clone(),
            quad: bridge.pi.clone(),
            linear: bridge.mean_drift.clone(),
            offset,
        }
    }

    pub fn value(&self, x: &DVector<f64>, k: usize) -> f64 {
        -0.5 * x.dot(&(&self.quad[k] * x)) + self.linear[k].dot(x) + self.offset[k]
    }

    /// Spatial gradient `grad psi = -P x + m` at node `k`.
    pub fn gradient_x(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        -(&self.quad[k] * x) + &self.linear[k]
    }

    /// Time derivatives of the stored sequences at node `k` by a seven-point
    /// sixth-order stencil (one-sided near the ends). Differentiating the
    /// stored data, rather than re-deriving slopes from the governing
    /// equations, keeps the residual an honest consistency check: perturbing
    /// the values without adjusting the dynamics is detected.
    fn time_derivatives(&self, k: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
        let steps = self.grid.steps();
        let dt = self.grid.dt();
        let width = 7.min(steps + 1);
        let first = k.saturating_sub(width / 2).min(steps + 1 - width);
        let xs: Vec<f64> = (0..width).map(|j| (first + j) as f64 * dt).collect();
        let w = derivative_weights(k as f64 * dt, &xs);

        let n = self.linear[0].len();
        let mut pidot = DMatrix::<f64>::zeros(n, n);
        let mut mdot = DVector::<f64>::zeros(n);
        let mut cdot = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            pidot += &self.quad[first + j] * wj;
            mdot += &self.linear[first + j] * wj;
            cdot += self.offset[first + j] * wj;
        }
        (pidot, mdot, cdot)
    }
}

/// Hamilton-Jacobi residual `d psi/dt + v . grad psi + 1/2 ||grad psi||^2` of
/// a quadratic potential at the given `(x, time-node)` sample points, with
/// `v(x, t) = A(t) x` when a prior is supplied and `v = 0` otherwise.
pub fn hj_residual_quadratic(
    potential: &QuadraticPotential,
    prior: Option<&LinearPrior>,
    points: &[(DVector<f64>, usize)],
) -> Result<Vec<f64>> {
    if potential.grid.steps() < 6 {
        return Err(BridgeError::InvalidArgument(
            "Hamilton-Jacobi residual needs at least seven time nodes".into(),
        ));
    }
    let mut out = Vec::with_capacity(points.len());
    for (x, k) in points {
        let (pidot, mdot, cdot) = potential.time_derivatives(*k);
        let dpsi_dt = -0.5 * x.dot(&(&pidot * x)) + mdot.dot(x) + cdot;
        let grad = potential.gradient_x(x, *k);
        let v_dot_grad = match prior {
            Some(p) => p.velocity(x, potential.grid.node(*k)).dot(&grad),
            None => 0.0,
        };
        out.push(dpsi_dt + v_dot_grad + 0.5 * grad.norm_squared());
    }
    Ok(out)
}

/// Hamilton-Jacobi residual of a gridded scalar potential, evaluated on all
/// interior-time slices with finite differences (one-sided at the ends).
/// `prior_velocity[time][axis][node]` supplies `v`; `None` means `v = 0`.
pub fn hj_residual_grid(
    psi: &[Vec<f64>],
    spatial: &SpatialGrid,
    times: &TimeGrid,
    prior_velocity: Option<&[DriftField]>,
) -> Result<ContinuityResidual> {
    let nt = times.steps() + 1;
    if psi.len() != nt {
        return Err(BridgeError::GridMismatch(format!(
            "potential has {} slices, time grid has {nt}",
            psi.len()
        )));
    }
    if nt < 3 {
        return Err(BridgeError::InvalidArgument(
            "gridded Hamilton-Jacobi residual needs at least three time nodes".into(),
        ));
    }
    if let Some(fields) = prior_velocity {
        if fields.len() != nt {
            return Err(BridgeError::GridMismatch(
                "prior velocity slices must match the time grid".into(),
            ));
        }
    }
    let dt = times.dt();
    let d = spatial.dimension();
    let n = spatial.len();
    let mut field = Vec::with_capacity(nt);
    let mut max_abs = 0.0_f64;
    let mut time_scale = 0.0_f64;
    for j in 0..nt {
        let grad = grid_gradient(spatial, &psi[j]);
        let slice: Vec<f64> = (0..n)
            .map(|i| {
                let psi_dot = if j == 0 {
                    (-3.0 * psi[0][i] + 4.0 * psi[1][i] - psi[2][i]) / (2.0 * dt)
                } else if j == nt - 1 {
                    (3.0 * psi[nt - 1][i] - 4.0 * psi[nt - 2][i] + psi[nt - 3][i]) / (2.0 * dt)
                } else {
                    (psi[j + 1][i] - psi[j - 1][i]) / (2.0 * dt)
                };
                let mut acc = psi_dot;
                for axis in 0..d {
                    let g = grad[axis][i];
                    acc += 0.5 * g * g;
                    if let Some(fields) = prior_velocity {
                        acc += fields[j].component(axis)[i] * g;
                    }
                }
                time_scale = time_scale.max(psi_dot.abs());
                acc
            })
            .collect();
        for v in &slice {
            max_abs = max_abs.max(v.abs());
        }
        field.push(slice);
    }
    Ok(ContinuityResidual {
        field,
        max_abs,
        time_scale,
    })
}

fn trapezoid_weights(times: &TimeGrid) -> Vec<f64> {
    let dt = times.dt();
    let mut w = vec![dt; times.steps() + 1];
    w[0] = 0.5 * dt;
    w[times.steps()] = 0.5 * dt;
    w
}

/// Relative kinetic energy `int int 1/2 ||v - v_prior||^2 rho dx dt`,
/// trapezoidal in time and cell sums in space. With no prior this is the
/// plain kinetic energy.
pub fn prior_action(flow: &FlowSample, prior: Option<&LinearPrior>) -> f64 {
    let w = trapezoid_weights(&flow.times);
    let vol = flow.spatial.cell_volume();
    let d = flow.spatial.dimension();
    let mut total = 0.0;
    for j in 0..=flow.times.steps() {
        let rho = flow.densities[j].values();
        let vel = &flow.velocities[j];
        let t = flow.times.node(j);
        let mut slice = 0.0;
        for i in 0..flow.spatial.len() {
            if !vel.is_valid(i) {
                continue;
            }
            let mut speed_sq = 0.0;
            match prior {
                Some(p) => {
                    let vp = p.velocity(&flow.spatial.node(i), t);
                    for axis in 0..d {
                        let diff = vel.component(axis)[i] - vp[axis];
                        speed_sq += diff * diff;
                    }
                }
                None => {
                    for axis in 0..d {
                        let v = vel.component(axis)[i];
                        speed_sq += v * v;
                    }
                }
            }
            slice += 0.5 * speed_sq * rho[i];
        }
        total += w[j] * slice * vol;
    }
    total
}

/// Kinetic-energy action `int int 1/2 ||v||^2 rho dx dt`.
pub fn bb_action(flow: &FlowSample) -> f64 {
    prior_action(flow, None)
}

/// Kinetic energy plus the scaled Fisher information,
/// `int int [ 1/2 ||v||^2 + (eps^2/8) ||grad log rho||^2 ] rho dx dt`.
/// Nodes below the density support floor are excluded from the Fisher term.
/// At `eps = 0` this is exactly `bb_action`.
pub fn sb_action(flow: &FlowSample, epsilon: f64) -> f64 {
    let kinetic = bb_action(flow);
    if epsilon == 0.0 {
        return kinetic;
    }
    let w = trapezoid_weights(&flow.times);
    let vol = flow.spatial.cell_volume();
    let d = flow.spatial.dimension();
    let mut fisher = 0.0;
    for j in 0..=flow.times.steps() {
        let rho = flow.densities[j].values();
        let log_rho: Vec<f64> = rho.iter().map(|&v| v.max(1e-300).ln()).collect();
        let grad = grid_gradient(&flow.spatial, &log_rho);
        let mut slice = 0.0;
        for i in 0..flow.spatial.len() {
            if rho[i] < SUPPORT_FLOOR {
                continue;
            }
            let mut g2 = 0.0;
            for axis in 0..d {
                g2 += grad[axis][i] * grad[axis][i];
            }
            slice += g2 * rho[i];
        }
        fisher += w[j] * slice * vol;
    }
    kinetic + epsilon * epsilon / 8.0 * fisher
}

/// Closed-form relative kinetic energy of a Gaussian bridge flow against its
/// prior velocity field, by second-moment identities: with velocity
/// `B x + b` and state law `N(n, Sigma)`,
/// `E ||B x + b||^2 = ||B n + b||^2 + tr(B Sigma B')`.
pub fn gaussian_prior_action(bridge: &GaussMarkovBridge, prior: &LinearPrior) -> Result<f64> {
    gaussian_moment_action(bridge, prior, true)
}

/// Closed-form kinetic energy of a Gaussian bridge flow.
pub fn gaussian_bb_action(bridge: &GaussMarkovBridge, prior: &LinearPrior) -> Result<f64> {
    gaussian_moment_action(bridge, prior, false)
}

/// Closed-form bridge action: kinetic energy plus
/// `(eps^2/8) int tr(Sigma(t)^{-1}) dt` (the Fisher information of a
/// Gaussian law is the trace of its precision matrix).
pub fn gaussian_sb_action(bridge: &GaussMarkovBridge, prior: &LinearPrior) -> Result<f64> {
    let kinetic = gaussian_bb_action(bridge, prior)?;
    if bridge.epsilon == 0.0 {
        return Ok(kinetic);
    }
    let w = trapezoid_weights(&bridge.grid);
    let mut fisher = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let precision = spd_inverse(&bridge.covariance[k], "bridge covariance")?;
        fisher += wk * precision.trace();
    }
    Ok(kinetic + bridge.epsilon * bridge.epsilon / 8.0 * fisher)
}

fn gaussian_moment_action(
    bridge: &GaussMarkovBridge,
    prior: &LinearPrior,
    relative: bool,
) -> Result<f64> {
    let w = trapezoid_weights(&bridge.grid);
    let mut total = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let (mut b_mat, b_vec) = bridge.current_velocity_affine(prior, k)?;
        if relative {
            b_mat -= prior.drift().at(bridge.grid.node(k));
        }
        let mean_term = (&b_mat * &bridge.mean[k] + &b_vec).norm_squared();
        let spread_term = (&b_mat * &bridge.covariance[k] * b_mat.transpose()).trace();
        total += wk * 0.5 * (mean_term + spread_term);
    }
    Ok(total)
}
