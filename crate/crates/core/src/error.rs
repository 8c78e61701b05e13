use thiserror::Error;

use crate::dist::DualState;
use crate::protocol::ProtocolTrace;
use crate::report::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("derivative target {0} is not positive")]
    NonPositiveTarget(f64),

    #[error("application {app} is native to provider {provider}; communication cost is undefined")]
    NativeApp { provider: usize, app: usize },

    #[error("allocation violates constraints by {violation:e} (tolerance {tol:e})")]
    InfeasibleAllocation { violation: f64, tol: f64 },

    #[error("surplus of provider {provider} is {surplus} (must be > 0)")]
    OutOfDomain { provider: usize, surplus: f64 },

    #[error("no allocation gives every provider a positive surplus: {0}")]
    InfeasibleBargain(String),

    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<SolveReport>,
        state: Option<Box<DualState>>,
        trace: Option<Box<ProtocolTrace>>,
    },

    #[error("every value is zero")]
    AllZero,

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleBargain(_) | Error::OutOfDomain { .. } => 2,
            Error::NotConverged { .. } => 3,
            _ => 1,
        }
    }
}
