use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid half-dimension {0}")]
    InvalidDimension(usize),

    #[error("operation requires d >= {required}, got d = {got}")]
    DimensionTooSmall { required: usize, got: usize },

    #[error("operands live on different horizontal spaces")]
    SpaceMismatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("horizontal space carries no torsion")]
    MissingTorsion,

    #[error("contradictory tag set: {0}")]
    ContradictoryTags(String),

    #[error("tag {tag} violated (residual {residual:e})")]
    TagViolation { tag: &'static str, residual: f64 },

    #[error("declared symmetry violated (residual {0:e})")]
    SymmetryViolation(f64),

    #[error("degenerate plane")]
    DegeneratePlane,

    #[error("scalar curvature vanishes")]
    ZeroScalarCurvature,

    #[error("invalid parameters for {family}: {reason}")]
    InvalidParams { family: String, reason: String },

    #[error("unknown family '{0}'")]
    UnknownFamily(String),

    #[error("family {0} is out of scope")]
    OutOfScope(String),

    #[error("center of the isotropy algebra has dimension {0}, expected 1")]
    CenterDimension(usize),

    #[error("model invariant failed: {what} (residual {residual:e})")]
    ModelInvariant { what: String, residual: f64 },

    #[error("missing argument: {0}")]
    MissingArgument(&'static str),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
