//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::fluid_dynamics::{
    continuity_residual, gaussian_bb_action, gaussian_prior_action, gaussian_sb_action,
    hj_residual_quadratic, prior_action, sb_action, FlowSample, QuadraticPotential,
};
use crate::gauss_markov::{
    bridge_solve, GaussMarkovBridge, GaussianMarginal, LinearPrior,
};
use crate::schrodinger_grid::{
    backward_drift, fortet_solve, forward_drift, kernel, marginal_at, symmetric_drifts,
    GridDensity,
};
use crate::sde_sim::{empirical_moments, simulate_bridge, simulate_bridge_on_grid, tube_ellipses};
use crate::time_grid::TimeGrid;

use super::bridge_io::{load_bridge, save_bridge};
use super::scenario::{Scenario, ValidatedScenario};
use super::{sig9, write_atomic, CliError};

fn prepare_out_dir(
    scenario_dir: &str,
    out_override: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(scenario_dir));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn apply_epsilon_override(
    prior: &LinearPrior,
    epsilon: Option<f64>,
) -> Result<LinearPrior, CliError> {
    match epsilon {
        None => Ok(prior.clone()),
        Some(e) => prior
            .with_epsilon(e)
            .map_err(|err| CliError::Validation(format!("--epsilon: {err}"))),
    }
}

fn emit(summary: &str, dir: &Path, file: &str) -> Result<(), CliError> {
    print!("{summary}");
    write_atomic(&dir.join(file), summary.as_bytes())
}

/// Deterministic sample points in the state-time box spanned by the two
/// marginals (six standard deviations each way), with interior time nodes.
fn certificate_points(
    v: &ValidatedScenario,
    bridge: &GaussMarkovBridge,
    count: usize,
) -> Vec<(DVector<f64>, usize)> {
    let n = bridge.dimension();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for m in [&v.initial, &v.terminal] {
        for axis in 0..n {
            let sd = m.covariance()[(axis, axis)].sqrt();
            lo[axis] = lo[axis].min(m.mean()[axis] - 6.0 * sd);
            hi[axis] = hi[axis].max(m.mean()[axis] + 6.0 * sd);
        }
    }
    let steps = bridge.grid.steps();
    let mut state = 0x00b5_1d6e_u64;
    let mut unit = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..count)
        .map(|_| {
            let x = DVector::from_iterator(
                n,
                (0..n).map(|axis| lo[axis] + (hi[axis] - lo[axis]) * unit()),
            );
            let k = 3 + (unit() * (steps as f64 - 6.0)) as usize;
            (x, k)
        })
        .collect()
}

/// Solve the Gaussian closed-form bridge, export it, and summarize endpoint
/// errors, the boundary gain, and the action values.
pub fn cmd_bridge_gaussian(
    config: &Path,
    epsilon: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let scenario = Scenario::load(config)?;
    let v = scenario.validate()?;
    let prior = apply_epsilon_override(&v.prior, epsilon)?;
    let bridge = bridge_solve(&prior, &v.initial, &v.terminal, &v.grid)?;
    let dir = prepare_out_dir(&scenario.output.directory, out)?;

    if v.write_json {
        save_bridge(&dir.join("bridge.json"), &bridge)?;
    }

    let mut s = String::new();
    let _ = writeln!(s, "bridge-gaussian: epsilon = {}", sig9(bridge.epsilon));
    let _ = writeln!(
        s,
        "endpoint_mean_error = {}",
        sig9(bridge.endpoint_mean_error)
    );
    let _ = writeln!(s, "endpoint_cov_error = {}", sig9(bridge.endpoint_cov_error));
    let n = bridge.dimension();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| sig9(bridge.pi[0][(i, j)])).collect();
        let _ = writeln!(s, "pi_initial[{i}] = [{}]", row.join(", "));
    }
    let _ = writeln!(
        s,
        "action_relative_to_prior = {}",
        sig9(gaussian_prior_action(&bridge, &prior)?)
    );
    let _ = writeln!(
        s,
        "action_kinetic = {}",
        sig9(gaussian_bb_action(&bridge, &prior)?)
    );
    let _ = writeln!(
        s,
        "action_bridge = {}",
        sig9(gaussian_sb_action(&bridge, &prior)?)
    );
    if bridge.epsilon == 0.0 {
        let pot = QuadraticPotential::from_bridge(&bridge);
        let points = certificate_points(&v, &bridge, 100);
        let residuals = hj_residual_quadratic(&pot, Some(&prior), &points)?;
        let worst = residuals.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
        let _ = writeln!(s, "hamilton_jacobi_residual_max = {}", sig9(worst));
    }
    emit(&s, &dir, "summary.txt")
}

fn slice_nodes(steps: usize, slices: usize) -> Vec<usize> {
    (0..slices)
        .map(|j| ((j as f64) * steps as f64 / (slices - 1) as f64).round() as usize)
        .collect()
}

/// Solve the Schrödinger system on the configured spatial grid and export
/// potentials, marginal slices, drift slices, and an oracle comparison
/// against the closed-form Gaussian bridge.
pub fn cmd_bridge_grid(
    config: &Path,
    epsilon: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let scenario = Scenario::load(config)?;
    let v = scenario.validate()?;
    let prior = apply_epsilon_override(&v.prior, epsilon)?;
    let spatial = v.spatial.clone().ok_or_else(|| {
        CliError::Validation("bridge-grid requires a [space] block in the scenario".into())
    })?;
    if prior.epsilon() <= 0.0 {
        return Err(CliError::Validation(
            "the grid solver requires epsilon > 0 (use bridge-gaussian for the zero-noise limit)"
                .into(),
        ));
    }
    let rho0 = GridDensity::from_marginal(&spatial, &v.initial)
        .map_err(|e| CliError::Validation(format!("initial marginal on grid: {e}")))?;
    let rho1 = GridDensity::from_marginal(&spatial, &v.terminal)
        .map_err(|e| CliError::Validation(format!("final marginal on grid: {e}")))?;

    let kern = kernel(&prior, &spatial, v.grid.start(), v.grid.end())?;
    let pair = fortet_solve(&kern, &rho0, &rho1, v.grid_tolerance, v.grid_max_iterations)?;
    let dir = prepare_out_dir(&scenario.output.directory, out)?;

    let d = spatial.dimension();
    let coord_header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let coords = |i: usize| -> String {
        let node = spatial.node(i);
        (0..d).map(|a| sig9(node[a])).collect::<Vec<_>>().join(",")
    };

    if v.write_csv {
        let mut csv = format!("{},phi_end,phi_hat_start\n", coord_header.join(","));
        for i in 0..spatial.len() {
            let _ = writeln!(
                csv,
                "{},{},{}",
                coords(i),
                sig9(pair.phi_end[i]),
                sig9(pair.phi_hat_start[i])
            );
        }
        write_atomic(&dir.join("potentials.csv"), csv.as_bytes())?;
    }

    // Closed-form oracle for the same data.
    let oracle = bridge_solve(&prior, &v.initial, &v.terminal, &v.grid)?;
    let nodes = slice_nodes(v.grid.steps(), v.grid_slices);

    let mut max_l1 = 0.0_f64;
    let mut max_mass_drift = 0.0_f64;
    let mut marginal_csv = format!("t,{},density\n", coord_header.join(","));
    let mut drift_header: Vec<String> = vec!["t".into()];
    for name in ["forward", "backward", "current", "osmotic"] {
        for i in 1..=d {
            drift_header.push(format!("{name}_{i}"));
        }
    }
    let mut drift_csv = format!(
        "{},{},masked\n",
        coord_header.join(","),
        drift_header.join(",")
    );
    for &k in &nodes {
        let t = v.grid.node(k);
        let slice = marginal_at(&pair, &prior, &spatial, t)?;
        max_mass_drift = max_mass_drift.max((slice.raw_mass - 1.0).abs());
        let reference = GridDensity::from_marginal(&spatial, &oracle.marginal_at(k)?)
            .map_err(CliError::Solver)?;
        max_l1 = max_l1.max(slice.density.l1_distance(&reference)?);

        let fwd = forward_drift(&pair, &prior, &spatial, t)?;
        let bwd = backward_drift(&pair, &prior, &spatial, &rho0, t)?;
        let (cur, osm) = symmetric_drifts(&pair, &prior, &spatial, &rho0, t)?;
        if v.write_csv {
            for i in 0..spatial.len() {
                let _ = writeln!(
                    marginal_csv,
                    "{},{},{}",
                    sig9(t),
                    coords(i),
                    sig9(slice.density.values()[i])
                );
                let mut row = vec![coords(i), sig9(t)];
                for field in [&fwd, &bwd, &cur, &osm] {
                    for axis in 0..d {
                        row.push(sig9(field.component(axis)[i]));
                    }
                }
                row.push(if fwd.is_valid(i) && bwd.is_valid(i) {
                    "0".into()
                } else {
                    "1".into()
                });
                let _ = writeln!(drift_csv, "{}", row.join(","));
            }
        }
    }
    if v.write_csv {
        write_atomic(&dir.join("marginal_slices.csv"), marginal_csv.as_bytes())?;
        write_atomic(&dir.join("drift_slices.csv"), drift_csv.as_bytes())?;
    }

    let mut s = String::new();
    let _ = writeln!(s, "bridge-grid: epsilon = {}", sig9(prior.epsilon()));
    let _ = writeln!(s, "iterations = {}", pair.iterations);
    let _ = writeln!(
        s,
        "final_l1_gaps = ({}, {})",
        sig9(pair.final_gaps.0),
        sig9(pair.final_gaps.1)
    );
    let _ = writeln!(s, "closed_form_l1_max = {}", sig9(max_l1));
    let _ = writeln!(s, "mass_drift_max = {}", sig9(max_mass_drift));
    emit(&s, &dir, "grid_summary.txt")
}

/// Simulate a stored bridge and export paths plus per-node empirical moments
/// with closed-form references and Monte Carlo bands.
pub fn cmd_simulate(
    config: &Path,
    bridge_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let scenario = Scenario::load(config)?;
    let v = scenario.validate()?;
    let bridge = load_bridge(bridge_path)?;
    if bridge.dimension() != v.prior.dimension() {
        return Err(CliError::Validation(format!(
            "bridge dimension {} does not match scenario prior dimension {}",
            bridge.dimension(),
            v.prior.dimension()
        )));
    }
    // Drift matrix from the scenario; diffusion from the stored bridge.
    let prior = v
        .prior
        .with_epsilon(bridge.epsilon)
        .map_err(CliError::Solver)?;
    let seed = seed.unwrap_or(v.simulation.seed);
    let sim_grid = match v.simulation.dt {
        None => bridge.grid.clone(),
        Some(dt) => {
            let steps = ((bridge.grid.span() / dt).round() as usize).max(2);
            TimeGrid::new(bridge.grid.start(), bridge.grid.end(), steps)
                .map_err(CliError::Solver)?
        }
    };
    let ensemble = simulate_bridge_on_grid(&bridge, &prior, &sim_grid, v.simulation.paths, seed)?;
    let dir = prepare_out_dir(&scenario.output.directory, out)?;

    let n = bridge.dimension();
    if v.write_csv {
        let coords: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let mut csv = format!("path_id,step,t,{}\n", coords.join(","));
        for p in 0..v.simulation.csv_paths.min(ensemble.n_paths()) {
            for k in 0..=sim_grid.steps() {
                let x = ensemble.state(p, k);
                let vals: Vec<String> = (0..n).map(|i| sig9(x[i])).collect();
                let _ = writeln!(csv, "{p},{k},{},{}", sig9(sim_grid.node(k)), vals.join(","));
            }
        }
        write_atomic(&dir.join("paths.csv"), csv.as_bytes())?;
    }

    let paths_f = v.simulation.paths as f64;
    let mut header: Vec<String> = vec!["t".into()];
    for i in 1..=n {
        header.push(format!("mean_{i}"));
    }
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("cov_{i}{j}"));
        }
    }
    for i in 1..=n {
        header.push(format!("ref_mean_{i}"));
    }
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("ref_cov_{i}{j}"));
        }
    }
    header.push("mean_in_band".into());
    header.push("cov_in_band".into());
    let mut csv = format!("{}\n", header.join(","));
    let mut band_violations = 0usize;
    let bridge_dt = bridge.grid.dt();
    for k in 0..=sim_grid.steps() {
        let t = sim_grid.node(k);
        let (mean, cov) = empirical_moments(&ensemble, t).map_err(CliError::Solver)?;
        let kb = (((t - bridge.grid.start()) / bridge_dt).round() as usize)
            .min(bridge.grid.steps());
        let ref_mean = &bridge.mean[kb];
        let ref_cov = &bridge.covariance[kb];
        let mut mean_ok = true;
        for i in 0..n {
            let band = 3.0 * (ref_cov[(i, i)] / paths_f).sqrt();
            if (mean[i] - ref_mean[i]).abs() > band {
                mean_ok = false;
            }
        }
        let mut cov_ok = true;
        for i in 0..n {
            for j in 0..n {
                let band = 3.0
                    * ((ref_cov[(i, i)] * ref_cov[(j, j)] + ref_cov[(i, j)].powi(2)) / paths_f)
                        .sqrt();
                if (cov[(i, j)] - ref_cov[(i, j)]).abs() > band {
                    cov_ok = false;
                }
            }
        }
        if !(mean_ok && cov_ok) {
            band_violations += 1;
        }
        let mut row = vec![sig9(t)];
        row.extend((0..n).map(|i| sig9(mean[i])));
        row.extend((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| sig9(cov[(i, j)])));
        row.extend((0..n).map(|i| sig9(ref_mean[i])));
        row.extend(
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| sig9(ref_cov[(i, j)])),
        );
        row.push(if mean_ok { "1".into() } else { "0".into() });
        row.push(if cov_ok { "1".into() } else { "0".into() });
        let _ = writeln!(csv, "{}", row.join(","));
    }
    if v.write_csv {
        write_atomic(&dir.join("moments.csv"), csv.as_bytes())?;
    }
    if band_violations > 0 {
        eprintln!(
            "warning: empirical moments left the 3-sigma band at {band_violations} of {} nodes \
             (statistical, not a failure)",
            sim_grid.steps() + 1
        );
    }

    let (mean_end, cov_end) = empirical_moments(&ensemble, sim_grid.end())?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "simulate: paths = {}, seed = {seed}, dt = {}",
        v.simulation.paths,
        sig9(sim_grid.dt())
    );
    let _ = writeln!(
        s,
        "endpoint_mean_error = {}",
        sig9((mean_end - bridge.mean.last().unwrap()).norm())
    );
    let _ = writeln!(
        s,
        "endpoint_cov_error = {}",
        sig9((cov_end - bridge.covariance.last().unwrap()).norm())
    );
    let _ = writeln!(s, "band_violations = {band_violations}");
    emit(&s, &dir, "simulate_summary.txt")
}

/// Which worked example to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReproduceExample {
    /// Brownian prior, unit mean shift of a normal law, diffusion sweep.
    MeanShift,
    /// Planar overdamped particle in a quadratic potential well.
    Smoluchowski,
}

impl std::str::FromStr for ReproduceExample {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean-shift" => Ok(ReproduceExample::MeanShift),
            "smoluchowski" => Ok(ReproduceExample::Smoluchowski),
            other => Err(format!(
                "unknown example \"{other}\" (expected mean-shift or smoluchowski)"
            )),
        }
    }
}

/// Reproduce the worked examples and export their figure data.
pub fn cmd_reproduce(
    example: ReproduceExample,
    epsilons: Option<Vec<f64>>,
    out: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    match example {
        ReproduceExample::MeanShift => reproduce_mean_shift(epsilons, out),
        ReproduceExample::Smoluchowski => reproduce_smoluchowski(epsilons, out),
    }
}

fn reproduce_mean_shift(sigma2_list: Option<Vec<f64>>, out: &Path) -> Result<(), CliError> {
    let sweep = sigma2_list.unwrap_or_else(|| vec![1.0, 0.1, 0.01, 1e-4]);
    let grid = TimeGrid::new(0.0, 1.0, 1000).map_err(CliError::Solver)?;
    let rho0 = GaussianMarginal::scalar(0.0, 1.0).map_err(CliError::Solver)?;
    let rho1 = GaussianMarginal::scalar(1.0, 1.0).map_err(CliError::Solver)?;

    let mut csv =
        String::from("sigma2,c,max_abs_mean_dev,max_abs_variance_minus_1,max_abs_current_drift_minus_1\n");
    let mut s = String::from("reproduce mean-shift\n");
    for &sigma2 in &sweep {
        if !(sigma2 > 0.0) {
            return Err(CliError::Validation(format!(
                "mean-shift sweep needs positive diffusion, got {sigma2}"
            )));
        }
        // Feedforward constant of the closed-form drift
        // (sigma^2 x + c) / (sigma^2 t + c).
        let c = -sigma2 / (sigma2 / 2.0 + 1.0 - (1.0 + sigma2 * sigma2 / 4.0).sqrt());
        let prior = LinearPrior::isotropic(0.0, 1, sigma2).map_err(CliError::Solver)?;
        let bridge = bridge_solve(&prior, &rho0, &rho1, &grid)?;

        let mut max_mean_dev = 0.0_f64;
        let mut max_var_dev = 0.0_f64;
        let mut max_drift_dev = 0.0_f64;
        for k in 0..=grid.steps() {
            let t = grid.node(k);
            max_mean_dev = max_mean_dev.max((bridge.mean[k][0] - t).abs());
            max_var_dev = max_var_dev.max((bridge.covariance[k][(0, 0)] - 1.0).abs());
            let (b_mat, b_vec) = bridge.current_velocity_affine(&prior, k)?;
            for ix in 0..=80 {
                let x = -2.0 + 0.05 * ix as f64;
                max_drift_dev = max_drift_dev.max((b_mat[(0, 0)] * x + b_vec[0] - 1.0).abs());
            }
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            sig9(sigma2),
            sig9(c),
            sig9(max_mean_dev),
            sig9(max_var_dev),
            sig9(max_drift_dev)
        );
        let _ = writeln!(
            s,
            "sigma2 = {}: c = {}, sup|mean - t| = {}, sup|v~ - 1| on |x|<=2 = {}",
            sig9(sigma2),
            sig9(c),
            sig9(max_mean_dev),
            sig9(max_drift_dev)
        );
    }
    write_atomic(&out.join("mean_shift.csv"), csv.as_bytes())?;
    emit(&s, out, "mean_shift_summary.txt")
}

fn format_eps(eps: f64) -> String {
    // Compact, filename-safe: 9 -> "9", 0.01 -> "0.01".
    format!("{eps}")
}

fn reproduce_smoluchowski(eps_list: Option<Vec<f64>>, out: &Path) -> Result<(), CliError> {
    let sweep = eps_list.unwrap_or_else(|| vec![9.0, 4.0, 0.01, 0.0]);
    let grid = TimeGrid::new(0.0, 1.0, 1000).map_err(CliError::Solver)?;
    let rho0 = GaussianMarginal::isotropic(DVector::from_vec(vec![-5.0, -5.0]), 1.0)
        .map_err(CliError::Solver)?;
    let rho1 = GaussianMarginal::isotropic(DVector::from_vec(vec![5.0, 5.0]), 1.0)
        .map_err(CliError::Solver)?;

    let write_tube = |path: &Path, bridge: &GaussMarkovBridge| -> Result<(), CliError> {
        let tubes = tube_ellipses(bridge, 9.0)?;
        let mut csv = String::from("t,cx,cy,r1,r2,angle_radians\n");
        for e in tubes {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                sig9(e.t),
                sig9(e.center[0]),
                sig9(e.center[1]),
                sig9(e.r1),
                sig9(e.r2),
                sig9(e.angle_radians)
            );
        }
        write_atomic(path, csv.as_bytes())
    };

    let mut s = String::from("reproduce smoluchowski (planar quadratic well, -grad V = -3 x)\n");
    for &eps in &sweep {
        let prior = LinearPrior::isotropic(-3.0, 2, eps).map_err(CliError::Solver)?;
        let bridge = bridge_solve(&prior, &rho0, &rho1, &grid)?;
        let tag = format_eps(eps);
        write_tube(&out.join(format!("ellipses_eps{tag}.csv")), &bridge)?;

        let ensemble = simulate_bridge(&bridge, &prior, 10, 42)?;
        let mut csv = String::from("path_id,step,t,x1,x2\n");
        for p in 0..10 {
            for k in 0..=grid.steps() {
                let x = ensemble.state(p, k);
                let _ = writeln!(
                    csv,
                    "{p},{k},{},{},{}",
                    sig9(grid.node(k)),
                    sig9(x[0]),
                    sig9(x[1])
                );
            }
        }
        write_atomic(&out.join(format!("paths_eps{tag}.csv")), csv.as_bytes())?;
        let _ = writeln!(
            s,
            "epsilon = {}: endpoint mean error {}, endpoint cov error {}",
            sig9(eps),
            sig9(bridge.endpoint_mean_error),
            sig9(bridge.endpoint_cov_error)
        );
    }

    // Baseline without a prior: flat drift, zero noise. The solver returns
    // the constant-speed translation.
    let flat = LinearPrior::isotropic(0.0, 2, 0.0).map_err(CliError::Solver)?;
    let baseline = bridge_solve(&flat, &rho0, &rho1, &grid)?;
    write_tube(&out.join("ellipses_noprior.csv"), &baseline)?;
    let _ = writeln!(
        s,
        "no-prior baseline: constant-speed translation, endpoint mean error {}",
        sig9(baseline.endpoint_mean_error)
    );
    emit(&s, out, "smoluchowski_summary.txt")
}

/// Solve the scenario's bridge and report its optimality certificate and,
/// when a spatial grid is configured, the sampled-flow continuity residual
/// and action values.
pub fn cmd_residuals(
    config: &Path,
    epsilon: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let scenario = Scenario::load(config)?;
    let v = scenario.validate()?;
    let prior = apply_epsilon_override(&v.prior, epsilon)?;
    let bridge = bridge_solve(&prior, &v.initial, &v.terminal, &v.grid)?;
    let dir = prepare_out_dir(&scenario.output.directory, out)?;

    let mut s = String::new();
    let _ = writeln!(s, "residuals: epsilon = {}", sig9(bridge.epsilon));

    let pot = QuadraticPotential::from_bridge(&bridge);
    let points = certificate_points(&v, &bridge, 100);
    let residuals = hj_residual_quadratic(&pot, Some(&prior), &points)?;
    let worst = residuals.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    let _ = writeln!(s, "hamilton_jacobi_residual_max = {}", sig9(worst));
    let mut worst_grad = 0.0_f64;
    for (x, k) in &points {
        let grad = pot.gradient_x(x, *k);
        let excess = bridge.drift_at(&prior, *k, x) - prior.velocity(x, bridge.grid.node(*k));
        worst_grad = worst_grad.max((grad - excess).norm());
    }
    let _ = writeln!(s, "gradient_consistency_max = {}", sig9(worst_grad));
    let _ = writeln!(
        s,
        "action_relative_to_prior = {}",
        sig9(gaussian_prior_action(&bridge, &prior)?)
    );
    let _ = writeln!(
        s,
        "action_kinetic = {}",
        sig9(gaussian_bb_action(&bridge, &prior)?)
    );
    let _ = writeln!(
        s,
        "action_bridge = {}",
        sig9(gaussian_sb_action(&bridge, &prior)?)
    );

    if let Some(spatial) = &v.spatial {
        // Largest stride that divides the bridge grid and yields at least the
        // configured number of slices.
        let target = (v.grid.steps() / (v.grid_slices - 1)).max(1);
        let stride = (1..=target)
            .rev()
            .find(|s| v.grid.steps() % s == 0)
            .unwrap_or(1);
        let flow = FlowSample::from_bridge(&bridge, &prior, spatial, stride)?;
        let res = continuity_residual(&flow)?;
        let _ = writeln!(s, "continuity_residual_max = {}", sig9(res.max_abs));
        let _ = writeln!(
            s,
            "continuity_residual_scaled = {}",
            sig9(res.max_abs / res.time_scale.max(1e-300))
        );
        let _ = writeln!(
            s,
            "grid_action_relative_to_prior = {}",
            sig9(prior_action(&flow, Some(&prior)))
        );
        let _ = writeln!(
            s,
            "grid_action_bridge = {}",
            sig9(sb_action(&flow, bridge.epsilon))
        );
    }
    emit(&s, &dir, "residuals.txt")
}
