use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NsmtError {
    #[error("position {y} lies outside [0, {l}]")]
    Domain { y: f64, l: f64 },
    #[error("mode index k = 0 is not a controlled mode")]
    InvalidMode,
    #[error("grid too coarse: Ny = {0} (need at least 8)")]
    GridTooCoarse(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("singular factorization at pivot {0}: shift too small, increase sigma")]
    ShiftTooSmall(usize),
    #[error("singular banded system at pivot {0}")]
    Singular(usize),
    #[error("non-finite state at step {0}")]
    Instability(usize),
    #[error("invalid initial datum: {0}")]
    InvalidInitialDatum(String),
    #[error("penalty weight {0} below the admissible floor 1e-10")]
    EpsilonTooSmall(f64),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("terminal tolerance not reached: best residual {best_residual:.6e} > {tolerance:.6e}")]
    NotReached { best_residual: f64, tolerance: f64 },
    #[error("nothing to control: all mode energies vanish")]
    NothingToControl,
    #[error("aliasing: Nx = {nx} must be at least 2*Kmax+2 = {need}")]
    Aliasing { nx: usize, need: usize },
    #[error("empty mode set")]
    EmptyModeSet,
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NsmtError>;

impl From<std::io::Error> for NsmtError {
    fn from(e: std::io::Error) -> Self {
        NsmtError::Io(e.to_string())
    }
}
