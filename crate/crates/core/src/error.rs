use thiserror::Error;

/// Errors raised by the constructions in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("no null direction: matrix has full column rank {0}")]
    NoNullDirection(usize),
    #[error("no admissible splitting direction: rank(A-B) = {rank} > n-1 = {max}")]
    NoSplittingDirection { rank: usize, max: usize },
    #[error("empty atom list")]
    EmptyAtoms,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covering stalled at scale floor: covered fraction {achieved:.6} < required {required:.6}")]
    CoverageFloor { achieved: f64, required: f64 },
    #[error("point lies outside the target domain")]
    OutsideDomain,
    #[error("unsupported test-function degree {0} (max {1})")]
    UnsupportedDegree(usize, usize),
    #[error("mollification grid too coarse: grid_h = {grid_h} > eps/8 = {limit}")]
    GridTooCoarse { grid_h: f64, limit: f64 },
    #[error("atom balls overlap: atoms {0} and {1} are closer than twice the radius")]
    OverlappingAtoms(usize, usize),
    #[error("decomposition not guaranteed outside the inner hull bound (slack {0:.3e})")]
    OutsideInnerBound(f64),
    #[error("certificate failed: {0}")]
    Certificate(String),
    #[error("hull membership precondition failed for {0}")]
    Membership(String),
    #[error("schedule failure: {0}")]
    Schedule(String),
}

pub type Result<T> = std::result::Result<T, Error>;
