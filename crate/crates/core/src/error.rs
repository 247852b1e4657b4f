use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Grid size not a power of two or below 8.
    BadGrid(usize),
    /// Two operands live on different grids.
    GridMismatch,
    MeanNotZero { mean: f64, tol: f64 },
    NotInSpace { mode: usize, n: usize },
    PositivityLost { min: f64 },
    BlowUp { t: f64, min_rho0: f64 },
    Instability { t: f64, reason: String },
    OscillationInsufficient { gap: f64, tol: f64, osc: usize },
    TargetUnreached { best: f64, eps: f64 },
    InvalidSpec(String),
    VacuumRegion { min_density: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BadGrid(n) => write!(f, "grid size {n} must be a power of two and at least 8"),
            Error::GridMismatch => write!(f, "operands live on different grids"),
            Error::MeanNotZero { mean, tol } => {
                write!(f, "right-hand side has mean {mean:e} above tolerance {tol:e}")
            }
            Error::NotInSpace { mode, n } => {
                write!(f, "mode {mode} lies above E_{} (n = {n})", n + 1)
            }
            Error::PositivityLost { min } => write!(f, "density lost positivity (min {min:e})"),
            Error::BlowUp { t, min_rho0 } => {
                write!(f, "density fell to {min_rho0:e} at t = {t}")
            }
            Error::Instability { t, reason } => write!(f, "instability at t = {t}: {reason}"),
            Error::OscillationInsufficient { gap, tol, osc } => write!(
                f,
                "terminal gap {gap:e} above tolerance {tol:e} at oscillation count {osc}"
            ),
            Error::TargetUnreached { best, eps } => {
                write!(f, "best terminal error {best:e} above eps {eps:e}")
            }
            Error::InvalidSpec(s) => write!(f, "invalid target: {s}"),
            Error::VacuumRegion { min_density } => {
                write!(f, "density {min_density:e} too small to extract a velocity")
            }
        }
    }
}

impl core::error::Error for Error {}
