use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::central::{CentralConfig, StartRule};
use crate::dist::{
    DistConfig, StepSizes, DEFAULT_ALPHA_GAIN, DEFAULT_DUAL_STEP, DEFAULT_KKT_TOL,
    DEFAULT_MAX_ROUNDS, DEFAULT_RELAXATION,
};
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::report::SolverKind;

/// Everything needed to build an instance, solve it and write the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Preset the dimensions came from, if any.
    pub preset: Option<u8>,
    pub num_providers: usize,
    pub apps_per_provider: usize,
    pub num_resources: usize,
    pub seed: u64,
    pub request_range: [f64; 2],
    /// Providers whose capacity falls short of their native demand.
    pub deficit_providers: Vec<usize>,
    pub deficit_factor: f64,
    pub surplus_factor: f64,
    /// Utility offset of every application.
    pub offset: f64,
    pub comm_weight_range: [f64; 2],
    pub solver: SolverKind,
    pub dual_step: f64,
    pub alpha_gain: f64,
    pub step_decay: bool,
    /// Largest fraction of its block response a provider moves by per round.
    pub relaxation: f64,
    pub kkt_tol: f64,
    pub max_rounds: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Deterministic start shared by the central and distributed solvers.
    pub start: StartRule,
    pub restarts: usize,
    /// Workload trace to ingest instead of generating requests.
    pub trace: Option<PathBuf>,
    pub samples_per_provider: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            num_providers: 3,
            apps_per_provider: 3,
            num_resources: 3,
            seed: 1,
            request_range: [1.0, 5.0],
            deficit_providers: vec![0],
            deficit_factor: 0.6,
            surplus_factor: 1.5,
            offset: 1.0,
            comm_weight_range: [5.0, 20.0],
            solver: SolverKind::Dist,
            dual_step: DEFAULT_DUAL_STEP,
            alpha_gain: DEFAULT_ALPHA_GAIN,
            step_decay: false,
            relaxation: DEFAULT_RELAXATION,
            kkt_tol: DEFAULT_KKT_TOL,
            max_rounds: DEFAULT_MAX_ROUNDS,
            grad_tol: 1e-6,
            max_iters: 50_000,
            start: StartRule::default(),
            restarts: 0,
            trace: None,
            samples_per_provider: 20,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Dimensions `(N, M_n)` of the built-in presets; every preset has `K = 3`.
/// Preset 3 is the trace setting; without a trace file it is generated
/// synthetically with the same dimensions.
pub const PRESETS: [(u8, usize, usize); 5] =
    [(1, 3, 3), (2, 3, 20), (3, 3, 20), (4, 6, 6), (5, 6, 20)];

impl ExperimentConfig {
    pub fn preset(id: u8) -> Result<Self> {
        let &(_, n, m) = PRESETS
            .iter()
            .find(|p| p.0 == id)
            .ok_or_else(|| Error::BadConfig(format!("unknown preset {id} (expected 1-5)")))?;
        Ok(Self {
            preset: Some(id),
            num_providers: n,
            apps_per_provider: m,
            num_resources: 3,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.num_providers == 0 || self.apps_per_provider == 0 || self.num_resources == 0 {
            return bad("dimensions must be positive".into());
        }
        let [lo, hi] = self.request_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!(
                "request range [{lo}, {hi}] must be positive and ordered"
            ));
        }
        let [wlo, whi] = self.comm_weight_range;
        if !(wlo > 0.0 && whi >= wlo && whi.is_finite()) {
            return bad(format!(
                "comm weight range [{wlo}, {whi}] must be positive and ordered"
            ));
        }
        if let Some(&n) = self
            .deficit_providers
            .iter()
            .find(|&&n| n >= self.num_providers)
        {
            return bad(format!("deficit provider {n} out of range"));
        }
        if !(self.deficit_factor >= 0.0 && self.surplus_factor >= 0.0) {
            return bad("capacity factors must be nonnegative".into());
        }
        if !(self.offset > 0.0) {
            return bad("offset must be > 0".into());
        }
        if !(self.dual_step > 0.0
            && self.alpha_gain > 0.0
            && self.kkt_tol > 0.0
            && self.grad_tol > 0.0)
        {
            return bad("step sizes and tolerances must be > 0".into());
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must be in (0, 1]".into());
        }
        if self.max_rounds == 0 || self.max_iters == 0 || self.samples_per_provider == 0 {
            return bad("iteration limits and sample counts must be positive".into());
        }
        Ok(())
    }

    pub fn central_config(&self) -> CentralConfig {
        CentralConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            start: self.start,
            restarts: self.restarts,
            seed: self.seed,
            ..CentralConfig::default()
        }
    }

    pub fn dist_config(&self, instance: &Instance) -> DistConfig {
        let mut steps = StepSizes::uniform(instance, self.dual_step);
        steps
            .phi
            .iter_mut()
            .flatten()
            .for_each(|v| *v = self.alpha_gain);
        steps.decay = self.step_decay;
        DistConfig {
            steps: Some(steps),
            kkt_tol: self.kkt_tol,
            max_rounds: self.max_rounds,
            seed: self.seed,
            start: self.start,
            relaxation: self.relaxation,
            ..DistConfig::default()
        }
    }
}
