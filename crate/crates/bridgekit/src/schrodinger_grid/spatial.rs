//! Uniform spatial grids and nonnegative grid densities.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};
use crate::gauss_markov::GaussianMarginal;

/// Uniform rectangular grid in one or two dimensions. Nodes along axis `i`
/// are `lower_i + j * spacing_i` for `j = 0..points_i`, endpoints included.
/// Flat node indices are x-major: `flat = ix * ny + iy` in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    bounds: Vec<(f64, f64)>,
    points: Vec<usize>,
}

impl SpatialGrid {
    /// Minimum per-axis point count.
    pub const MIN_POINTS: usize = 16;

    pub fn new(bounds: Vec<(f64, f64)>, points: Vec<usize>) -> Result<Self> {
        let d = bounds.len();
        if d == 0 || d > 2 {
            return Err(BridgeError::UnsupportedDimension {
                got: d,
                context: "spatial grids support dimensions 1 and 2",
            });
        }
        if points.len() != d {
            return Err(BridgeError::DimensionMismatch {
                context: "spatial grid point counts",
                expected: d,
                got: points.len(),
            });
        }
        for (&(lo, hi), &n) in bounds.iter().zip(&points) {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(BridgeError::InvalidArgument(format!(
                    "grid bounds must be finite with lower < upper, got [{lo}, {hi}]"
                )));
            }
            if n < Self::MIN_POINTS {
                return Err(BridgeError::InvalidArgument(format!(
                    "each axis needs at least {} points, got {n}",
                    Self::MIN_POINTS
                )));
            }
        }
        Ok(SpatialGrid { bounds, points })
    }

    /// 1D grid on `[lo, hi]` with `n` points.
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![(lo, hi)], vec![n])
    }

    /// Square 2D grid on `[lo, hi]^2` with `n` points per axis.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![(lo, hi), (lo, hi)], vec![n, n])
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.points[axis] - 1) as f64
    }

    /// Volume of one grid cell, the product of the axis spacings.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension()).map(|i| self.spacing(i)).product()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, axis: usize, index: usize) -> f64 {
        self.bounds[axis].0 + index as f64 * self.spacing(axis)
    }

    /// Multi-index of a flat node index.
    pub fn unravel(&self, flat: usize) -> [usize; 2] {
        match self.dimension() {
            1 => [flat, 0],
            _ => {
                let ny = self.points[1];
                [flat / ny, flat % ny]
            }
        }
    }

    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        match self.dimension() {
            1 => ix,
            _ => ix * self.points[1] + iy,
        }
    }

    /// Node coordinates as a vector.
    pub fn node(&self, flat: usize) -> DVector<f64> {
        let idx = self.unravel(flat);
        let mut v = DVector::zeros(self.dimension());
        for axis in 0..self.dimension() {
            v[axis] = self.coord(axis, idx[axis]);
        }
        v
    }
}

/// Nonnegative density sampled on a grid, normalized so the cell-volume
/// weighted sum equals one.
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: SpatialGrid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(BridgeError::DimensionMismatch {
                context: "grid density values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BridgeError::InvalidArgument(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if mass <= 0.0 {
            return Err(BridgeError::Underflow {
                context: "density has zero total mass".into(),
            });
        }
        for v in &mut values {
            *v /= mass;
        }
        Ok(GridDensity { grid, values })
    }

    /// Discretize a Gaussian marginal. The grid must contain at least six
    /// standard deviations of the marginal along every axis so that the
    /// truncated mass stays below solver tolerances.
    pub fn from_marginal(grid: &SpatialGrid, marginal: &GaussianMarginal) -> Result<Self> {
        let d = grid.dimension();
        if marginal.dimension() != d {
            return Err(BridgeError::DimensionMismatch {
                context: "marginal dimension vs grid",
                expected: d,
                got: marginal.dimension(),
            });
        }
        for axis in 0..d {
            let sd = marginal.covariance()[(axis, axis)].sqrt();
            let m = marginal.mean()[axis];
            let (lo, hi) = grid.bounds()[axis];
            if m - 6.0 * sd < lo || m + 6.0 * sd > hi {
                return Err(BridgeError::InvalidArgument(format!(
                    "grid axis {axis} [{lo}, {hi}] does not contain six standard deviations \
                     of the marginal (need [{}, {}])",
                    m - 6.0 * sd,
                    m + 6.0 * sd
                )));
            }
        }
        let values: Vec<f64> = (0..grid.len())
            .map(|i| marginal.density(&grid.node(i)))
            .collect();
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cell-volume weighted total mass (one after normalization).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// L1 distance to another density on the same grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(BridgeError::GridMismatch(
                "L1 distance needs matching grids".into(),
            ));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    /// Cell-sum mean vector.
    pub fn mean(&self) -> DVector<f64> {
        let d = self.grid.dimension();
        let vol = self.grid.cell_volume();
        let mut m = DVector::zeros(d);
        for (i, &v) in self.values.iter().enumerate() {
            m += self.grid.node(i) * (v * vol);
        }
        m
    }

    /// Cell-sum covariance matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.grid.dimension();
        let vol = self.grid.cell_volume();
        let mean = self.mean();
        let mut c = DMatrix::zeros(d, d);
        for (i, &v) in self.values.iter().enumerate() {
            let diff = self.grid.node(i) - &mean;
            c += &diff * diff.transpose() * (v * vol);
        }
        c
    }
}
