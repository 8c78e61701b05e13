//! Nash bargaining resource sharing among edge service providers.
//!
//! * [`model`]: instances, allocations, utilities and surpluses.
//! * [`standalone`]: per-provider water-filling and disagreement points.
//! * [`central`]: projected-gradient solver of the log bargaining program.
//! * [`dist`]: round-robin primal-dual engine.
//! * [`protocol`]: token-passing simulation around the engine.
//! * [`metrics`]: request satisfaction, utilization and Jain's index.
//! * [`io`]: instance generation, trace ingestion and experiment runs.

pub mod central;
pub mod dist;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod report;
pub mod standalone;

pub use error::{Error, Result};
pub use model::{Allocation, Instance, SurplusVector, UtilityParams};
pub use report::{SolveReport, SolverKind};
