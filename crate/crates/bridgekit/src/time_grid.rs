//! Uniform time grid shared by the integrators and quadratures.

use crate::error::{BridgeError, Result};

/// Uniform partition of `[t_start, t_end]` into `steps` intervals.
///
/// Node `k` is `t_start + k * dt` except the last, which is pinned to
/// `t_end` exactly so endpoint comparisons are not polluted by roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    steps: usize,
    dt: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Default integrator resolution: steps per unit time used when a caller
    /// does not prescribe one.
    pub const DEFAULT_STEPS_PER_UNIT_TIME: f64 = 1000.0;

    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(BridgeError::InvalidArgument(format!(
                "time grid bounds must be finite, got [{start}, {end}]"
            )));
        }
        if start >= end {
            return Err(BridgeError::InvalidArgument(format!(
                "time grid needs start < end, got [{start}, {end}]"
            )));
        }
        if steps < 2 {
            return Err(BridgeError::InvalidArgument(format!(
                "time grid needs at least 2 steps, got {steps}"
            )));
        }
        let dt = (end - start) / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|k| start + k as f64 * dt).collect();
        nodes[0] = start;
        nodes[steps] = end;
        Ok(TimeGrid {
            start,
            end,
            steps,
            dt,
            nodes,
        })
    }

    /// Grid with the default resolution of 1000 steps per unit time
    /// (at least 2 steps).
    pub fn with_default_resolution(start: f64, end: f64) -> Result<Self> {
        let steps = ((end - start) * Self::DEFAULT_STEPS_PER_UNIT_TIME).ceil() as usize;
        Self::new(start, end, steps.max(2))
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn span(&self) -> f64 {
        self.end - self.start
    }

    /// Number of intervals (nodes are `steps + 1`).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Index of the node equal to `t` within `tol`, if any.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        if t < self.start - tol || t > self.end + tol {
            return None;
        }
        let k = ((t - self.start) / self.dt).round() as isize;
        let k = k.clamp(0, self.steps as isize) as usize;
        ((self.nodes[k] - t).abs() <= tol).then_some(k)
    }

    /// True when `t` lies inside `[start, end]` up to roundoff slack.
    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-12 * self.span().max(1.0);
        t >= self.start - slack && t <= self.end + slack
    }
}
