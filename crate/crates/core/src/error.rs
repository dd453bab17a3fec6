use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tangents at different points")]
    BaseMismatch,
    #[error("log undefined: point outside the injectivity radius")]
    LogUndefined,
    #[error("geodesic velocity must have unit speed (got {0})")]
    NonUnitSpeed(f64),
    #[error("degenerate metric at node {0}")]
    DegenerateMetric(usize),
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
    #[error("not an immersion at node ({0},{1})")]
    NotImmersion(usize, usize),
    #[error("normal derivative leaves the tangent image at node {0}")]
    NormalLeavesImage(usize),
    #[error("thickness parameter {t} outside [-{epsilon}, {epsilon}]")]
    OutsideThickness { t: f64, epsilon: f64 },
    #[error("reference data too singular: no admissible thickness above {0}")]
    TooSingular(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("iterate left the model neighborhood (defect {0})")]
    LeftModel(f64),
    #[error("point violates the model constraint (defect {0})")]
    OffModel(f64),
    #[error("rank-deficient differential: distance to SO undefined")]
    RankDeficient,
    #[error("inconsistent result: {0}")]
    Inconsistent(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
