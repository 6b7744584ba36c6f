use thiserror::Error;

use crate::nonlinearity::Provenance;

/// Failure modes of the solvers and builders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("all valences share one sign, so f has no zero")]
    AllSameSignValences,
    #[error("species set is not charge neutral (sum m*z = {0:e})")]
    NeutralityViolated(f64),
    #[error("nonlinearities have different reference potentials ({0} vs {1})")]
    MismatchedReference(f64, f64),
    #[error("no sign change found while expanding the bracket")]
    NoSignChange,
    #[error("operation not supported for provenance {0:?}")]
    UnsupportedProvenance(Provenance),
    #[error("f' is not negative at phi = {0}")]
    NonDecreasingDetected(f64),
    #[error("root bracket failure: {0}")]
    RootBracketFailure(String),
    #[error("trajectory left the invariant manifold near t = {0}")]
    NonMonotoneTrajectory(f64),
    #[error("denominator too close to zero ({0:e})")]
    DenominatorNearZero(f64),
    #[error("negative evaluation time {0}")]
    NegativeTime(f64),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("all boundary potentials are equal")]
    AllBoundaryPotentialsEqual,
    #[error("bracket failure: {0}")]
    BracketFailure(String),
    #[error("degenerate denominator in the drift formula")]
    DegenerateDenominator,
    #[error("bad radii: {0}")]
    BadRadii(String),
    #[error("inconsistent region parameters: {0}")]
    InconsistentParams(String),
    #[error("profile set does not match the requested model: {0}")]
    ModelProfileMismatch(String),
    #[error("Newton iteration diverged after {iterations} steps (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64, damping: Vec<f64> },
    #[error("fixed-point iteration stalled after {iterations} steps (relative change {change:e})")]
    FixedPointStall { iterations: usize, change: f64 },
    #[error("comparison region is empty")]
    RegionEmpty,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
