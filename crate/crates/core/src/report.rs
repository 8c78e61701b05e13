use serde::{Deserialize, Serialize};

use crate::model::{Allocation, SurplusVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Alone,
    Central,
    Dist,
    Protocol,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverKind::Alone => "alone",
            SolverKind::Central => "central",
            SolverKind::Dist => "dist",
            SolverKind::Protocol => "protocol",
        };
        f.write_str(s)
    }
}

/// Outcome of a bargaining solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub allocation: Allocation,
    pub surplus: SurplusVector,
    /// Log-objective value after every accepted iteration (or round).
    pub objective_history: Vec<f64>,
    /// Convergence measure after every iteration: projected-gradient norm for
    /// the centralized solver, KKT residual for the distributed engine.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
}
