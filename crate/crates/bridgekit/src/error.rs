//! Error taxonomy shared by all solver modules.

use thiserror::Error;

/// Errors produced by the solvers and evaluators in this crate.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("argument order: expected s <= t, got s = {s}, t = {t}")]
    ArgumentOrder { s: f64, t: f64 },

    #[error("empty interval: expected s < t, got s = {s}, t = {t}")]
    EmptyInterval { s: f64, t: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: relative deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    NotSymmetric { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.6e} below clip threshold {threshold:.3e}")]
    NotPositiveSemidefinite { eigenvalue: f64, threshold: f64 },

    #[error("{context}: matrix is not positive definite")]
    NotPositiveDefinite { context: &'static str },

    #[error("quadrature resolution too coarse: {context}")]
    QuadratureResolution { context: String },

    #[error("Riccati finite escape time: non-finite entries at node {node} (t = {time})")]
    FiniteEscape { node: usize, time: f64 },

    #[error("closed-loop system is uncontrollable: steering Gramian is numerically singular")]
    UncontrollableClosedLoop,

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("endpoint steering missed target: {quantity} error {error:.3e} exceeds tolerance {tolerance:.1e}")]
    EndpointMiss {
        quantity: &'static str,
        error: f64,
        tolerance: f64,
    },

    #[error("covariance lost positive definiteness at node {node} (t = {time})")]
    CovarianceNotPositive { node: usize, time: f64 },

    #[error("breakpoint {breakpoint} of the piecewise drift is not aligned with the time grid")]
    BreakpointMisaligned { breakpoint: f64 },

    #[error("kernel is under-resolved along axis {axis}: transition std {sigma:.6e} is below grid spacing {spacing:.6e}; refine spacing to <= {sigma:.6e} or raise epsilon / lengthen the interval")]
    UnderResolvedKernel { axis: usize, sigma: f64, spacing: f64 },

    #[error("kernel requires positive diffusion (epsilon > 0), got epsilon = {epsilon}")]
    KernelRequiresDiffusion { epsilon: f64 },

    #[error("iteration did not converge within {iterations} sweeps: last marginal gaps L1 = ({gap_start:.3e}, {gap_end:.3e}), tolerance {tolerance:.1e}")]
    NonConvergence {
        iterations: usize,
        gap_start: f64,
        gap_end: f64,
        tolerance: f64,
    },

    #[error("numerical underflow: {context}; widen the spatial grid or raise epsilon")]
    Underflow { context: String },

    #[error("grids are inconsistent: {0}")]
    GridMismatch(String),

    #[error("unsupported dimension {got}: {context}")]
    UnsupportedDimension { got: usize, context: &'static str },

    #[error("time {t} is outside the valid range ({lo}, {hi}]")]
    InvalidTime { t: f64, lo: f64, hi: f64 },

    #[error("simulation blow-up: non-finite state on path {path} at step {step}")]
    SimulationBlowUp { path: usize, step: usize },

    #[error("Euler step too large: dt * ||closed-loop drift|| = {product:.3e} exceeds 0.1 at node {node}")]
    StepTooLarge { product: f64, node: usize },

    #[error("not enough samples: {context}")]
    NotEnoughSamples { context: &'static str },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<BridgeError>,
    },
}

impl BridgeError {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        BridgeError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, BridgeError>;
