//! Distributed primal-dual engine.
//!
//! The Lagrangian of the log program carries five multiplier groups:
//!
//! ```text
//! L = sum_n ln(D_n) + sum gamma x + sum_nk alpha (C - sum_j x) + sum_jk beta (r - sum_n x)
//!     + sum_n zeta D_n + sum_{n, foreign l, k} pi f_nlk
//! ```
//!
//! with `D_n = s_n - d0[n]` and `f_nlk` the net differential utility of a
//! foreign pair. Each provider in turn recomputes its block `x[n][.][.]` from
//! the stationarity condition `dL/dx = 0`, using the surpluses of the previous
//! round, and then moves its multipliers by projected dual descent.
//!
//! Stationarity in `x[n][j][k]` with the other providers held fixed reads
//!
//! ```text
//! u'(T) * (c_n - sum_{m != n} c_m (exp(x_m) - 1)) = alpha + beta - gamma + [foreign] c_n / w
//! c_m = 1 / D_m + zeta_m + [m foreign to j] pi_mjk
//! ```
//!
//! because `u'(T - x_m) = u'(T) exp(x_m)` for the exponential family. When no
//! other provider serves the pair this is exactly the closed-form price of
//! [`price_native`] / [`price_foreign`]; the extra term accounts for the
//! surplus other providers lose when `T` grows.

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::central::{initial_point, StartRule};
use crate::error::{Error, Result};
use crate::model::{
    pair_term, utilities, weighted_term_gradient, Allocation, Instance, SurplusVector,
};
use crate::report::{SolveReport, SolverKind};
use crate::standalone;

/// Floor used by the capacity step when no coordinate of a row is free.
const ALPHA_MIN: f64 = 1e-3;
/// Distance from a box bound below which a coordinate counts as clamped.
const BOUND_TOL: f64 = 1e-12;

pub const DEFAULT_DUAL_STEP: f64 = 0.01;
pub const DEFAULT_ALPHA_GAIN: f64 = 0.5;
pub const DEFAULT_KKT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ROUNDS: usize = 200_000;
pub const DEFAULT_RELAXATION: f64 = 1.0;
/// Smallest fraction of its block response a provider moves by.
const MIN_THETA: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    /// `alpha[n][k]`, capacity.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[j][k]`, request cap.
    pub beta: Vec<Vec<f64>>,
    /// `zeta[n]`, disagreement constraint.
    pub zeta: Vec<f64>,
    /// `gamma[n][j][k]`, nonnegativity.
    pub gamma: Allocation,
    /// `pi[n][l][k]`, foreign net utility; always 0 on native pairs.
    pub pi: Allocation,
}

impl Multipliers {
    pub fn zeros(instance: &Instance) -> Self {
        let (np, na, nr) = (
            instance.num_providers(),
            instance.num_apps(),
            instance.num_resources(),
        );
        Self {
            alpha: vec![vec![0.0; nr]; np],
            beta: vec![vec![0.0; nr]; na],
            zeta: vec![0.0; np],
            gamma: Allocation::zeros(instance),
            pi: Allocation::zeros(instance),
        }
    }

    /// Smallest entry over every group (dual feasibility means `>= 0`).
    pub fn min_entry(&self) -> f64 {
        self.alpha
            .iter()
            .chain(&self.beta)
            .flatten()
            .chain(&self.zeta)
            .chain(self.gamma.as_slice())
            .chain(self.pi.as_slice())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Weight `c_m` of provider `m`'s pair term `(j, k)` in the Lagrangian.
    #[inline]
    fn weight(&self, instance: &Instance, delta: &[f64], m: usize, j: usize, k: usize) -> f64 {
        let base = 1.0 / delta[m] + self.zeta[m];
        if instance.is_native(m, j) {
            base
        } else {
            base + self.pi.get(m, j, k)
        }
    }
}

/// Dual step sizes.
///
/// In [`update_multipliers`] every entry is a plain step. The engine uses
/// `phi` as a gain on a curvature-scaled capacity step instead, see
/// [`Engine::step_provider`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub phi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub theta: Allocation,
    pub psi: Allocation,
    /// Multiply every step by `1 / sqrt(round + 1)`.
    pub decay: bool,
}

impl StepSizes {
    pub fn uniform(instance: &Instance, step: f64) -> Self {
        let mut theta = Allocation::zeros(instance);
        theta.as_mut_slice().fill(step);
        let psi = theta.clone();
        Self {
            phi: vec![vec![step; instance.num_resources()]; instance.num_providers()],
            eta: vec![vec![step; instance.num_resources()]; instance.num_apps()],
            omega: vec![step; instance.num_providers()],
            theta,
            psi,
            decay: false,
        }
    }

    /// Uniform dual steps with the engine's default capacity gain.
    pub fn engine_default(instance: &Instance) -> Self {
        let mut s = Self::uniform(instance, DEFAULT_DUAL_STEP);
        s.phi
            .iter_mut()
            .flatten()
            .for_each(|v| *v = DEFAULT_ALPHA_GAIN);
        s
    }

    pub fn validate(&self, instance: &Instance) -> Result<()> {
        let dims_ok = self.phi.len() == instance.num_providers()
            && self.eta.len() == instance.num_apps()
            && self.omega.len() == instance.num_providers()
            && self.theta.dims() == Allocation::zeros(instance).dims()
            && self.psi.dims() == self.theta.dims();
        let positive = self
            .phi
            .iter()
            .chain(&self.eta)
            .flatten()
            .chain(&self.omega)
            .chain(self.theta.as_slice())
            .chain(self.psi.as_slice())
            .all(|&v| v > 0.0 && v.is_finite());
        if dims_ok && positive {
            Ok(())
        } else {
            Err(Error::BadConfig(
                "step sizes must be positive and match the instance".into(),
            ))
        }
    }

    fn factor(&self, round: usize) -> f64 {
        if self.decay {
            1.0 / ((round + 1) as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// One record of which surplus a provider consumed in which round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaUse {
    pub round: usize,
    pub provider: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub multipliers: Multipliers,
    pub x: Allocation,
    /// Surpluses computed at the end of the previous round.
    pub delta_prev: Vec<f64>,
    /// Completed rounds.
    pub round: usize,
    pub residual_history: Vec<f64>,
    /// Filled only when instrumentation is enabled.
    pub delta_log: Vec<DeltaUse>,
    /// Surpluses at the end of every round; filled only when instrumented.
    pub delta_rounds: Vec<Vec<f64>>,
}

/// `D_n = s_n(X) - d0[n]`.
pub fn surplus_delta(instance: &Instance, x: &Allocation, n: usize, d0: &[f64]) -> f64 {
    SurplusVector::at(instance, x, d0).surplus[n]
}

fn net_foreign(
    instance: &Instance,
    x: &Allocation,
    totals: &[f64],
    n: usize,
    j: usize,
    k: usize,
) -> f64 {
    let nr = instance.num_resources();
    pair_term(instance, totals[j * nr + k], x.get(n, j, k), n, j, k)
}

/// Value of the Lagrangian with all five multiplier groups.
pub fn lagrangian_eval(
    instance: &Instance,
    x: &Allocation,
    mult: &Multipliers,
    d0: &[f64],
) -> Result<f64> {
    let sv = SurplusVector::at(instance, x, d0);
    let (np, na, nr) = x.dims();
    let totals = x.app_totals();
    let mut l = 0.0;
    for (n, &d) in sv.surplus.iter().enumerate() {
        if !(d > 0.0) {
            return Err(Error::OutOfDomain {
                provider: n,
                surplus: d,
            });
        }
        l += d.ln() + mult.zeta[n] * d;
    }
    for n in 0..np {
        for k in 0..nr {
            l += mult.alpha[n][k] * (instance.capacity(n, k) - x.provider_load(n, k));
        }
        for j in 0..na {
            for k in 0..nr {
                l += mult.gamma.get(n, j, k) * x.get(n, j, k);
                if !instance.is_native(n, j) {
                    l += mult.pi.get(n, j, k) * net_foreign(instance, x, &totals, n, j, k);
                }
            }
        }
    }
    for j in 0..na {
        for k in 0..nr {
            l += mult.beta[j][k] * (instance.request(j, k) - totals[j * nr + k]);
        }
    }
    Ok(l)
}

/// `dL/dx[n][j][k]` for every coordinate.
pub fn lagrangian_gradient(
    instance: &Instance,
    x: &Allocation,
    mult: &Multipliers,
    d0: &[f64],
) -> Result<Vec<f64>> {
    let sv = SurplusVector::at(instance, x, d0);
    if let Some(n) = sv.surplus.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::OutOfDomain {
            provider: n,
            surplus: sv.surplus[n],
        });
    }
    Ok(gradient_with_delta(instance, x, mult, &sv.surplus))
}

fn gradient_with_delta(
    instance: &Instance,
    x: &Allocation,
    mult: &Multipliers,
    delta: &[f64],
) -> Vec<f64> {
    let mut g =
        weighted_term_gradient(instance, x, |m, j, k| mult.weight(instance, delta, m, j, k));
    let (np, na, nr) = x.dims();
    for n in 0..np {
        for j in 0..na {
            for k in 0..nr {
                let i = x.index(n, j, k);
                g[i] += mult.gamma.get(n, j, k) - mult.alpha[n][k] - mult.beta[j][k];
            }
        }
    }
    g
}

fn target(mult: &Multipliers, n: usize, j: usize, k: usize) -> f64 {
    mult.alpha[n][k] + mult.beta[j][k] - mult.gamma.get(n, j, k)
}

/// Closed-form price for a native pair: `u'^{-1}(t) - others_total` with
/// `t = D (alpha + beta - gamma) / (1 + D zeta)`. Raw, unclamped.
pub fn price_native(
    instance: &Instance,
    n: usize,
    j: usize,
    k: usize,
    mult: &Multipliers,
    delta_prev_n: f64,
    others_total: f64,
) -> Result<f64> {
    if !instance.is_native(n, j) {
        return Err(Error::InvalidInstance(format!(
            "application {j} is not native to provider {n}"
        )));
    }
    let t = delta_prev_n * target(mult, n, j, k) / (1.0 + delta_prev_n * mult.zeta[n]);
    Ok(instance.utility(j, k).deriv_inv(t)? - others_total)
}

/// Closed-form price for a foreign pair: solves `u'(others + x) - 1/w = t`
/// with `t = D (alpha + beta - gamma) / (1 + D zeta + D pi)`. Raw, unclamped.
pub fn price_foreign(
    instance: &Instance,
    n: usize,
    l: usize,
    k: usize,
    mult: &Multipliers,
    delta_prev_n: f64,
    others_total: f64,
) -> Result<f64> {
    if instance.is_native(n, l) {
        return Err(Error::NativeApp {
            provider: n,
            app: l,
        });
    }
    let denom = 1.0 + delta_prev_n * mult.zeta[n] + delta_prev_n * mult.pi.get(n, l, k);
    let t = delta_prev_n * target(mult, n, l, k) / denom;
    Ok(instance
        .utility(l, k)
        .deriv_inv(t + 1.0 / instance.comm_weight(n, l))?
        - others_total)
}

/// Clamps a raw price to `[0, r[j][k] - others]`.
pub fn clamp_primal(
    instance: &Instance,
    raw: f64,
    n: usize,
    j: usize,
    k: usize,
    x: &Allocation,
) -> f64 {
    let ub = (instance.request(j, k) - x.others_total(n, j, k)).max(0.0);
    raw.clamp(0.0, ub)
}

/// Scales provider `n`'s row for resource `k` down onto its capacity.
/// Returns the load before scaling.
pub fn enforce_capacity(instance: &Instance, x: &mut Allocation, n: usize, k: usize) -> f64 {
    let load = x.provider_load(n, k);
    let cap = instance.capacity(n, k);
    if load > cap {
        let f = if load > 0.0 { cap / load } else { 0.0 };
        for j in 0..instance.num_apps() {
            let v = x.get(n, j, k) * f;
            x.set(n, j, k, v);
        }
    }
    load
}

/// One projected dual-descent step on every multiplier with fixed steps:
/// `mu <- max(0, mu - step * residual)`.
pub fn update_multipliers(
    state: &DualState,
    instance: &Instance,
    d0: &[f64],
    steps: &StepSizes,
) -> Multipliers {
    let x = &state.x;
    let (np, na, nr) = x.dims();
    let mut m = state.multipliers.clone();
    let f = steps.factor(state.round);
    let totals = x.app_totals();
    let sv = SurplusVector::at(instance, x, d0);
    for n in 0..np {
        for k in 0..nr {
            let g = instance.capacity(n, k) - x.provider_load(n, k);
            m.alpha[n][k] = (m.alpha[n][k] - f * steps.phi[n][k] * g).max(0.0);
        }
        m.zeta[n] = (m.zeta[n] - f * steps.omega[n] * sv.surplus[n]).max(0.0);
        for j in 0..na {
            for k in 0..nr {
                let g =
                    (m.gamma.get(n, j, k) - f * steps.theta.get(n, j, k) * x.get(n, j, k)).max(0.0);
                m.gamma.set(n, j, k, g);
                if !instance.is_native(n, j) {
                    let res = net_foreign(instance, x, &totals, n, j, k);
                    let p = (m.pi.get(n, j, k) - f * steps.psi.get(n, j, k) * res).max(0.0);
                    m.pi.set(n, j, k, p);
                }
            }
        }
    }
    for j in 0..na {
        for k in 0..nr {
            let g = instance.request(j, k) - totals[j * nr + k];
            m.beta[j][k] = (m.beta[j][k] - f * steps.eta[j][k] * g).max(0.0);
        }
    }
    m
}

/// Components of the first-order optimality residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktBreakdown {
    pub primal: f64,
    pub dual: f64,
    pub slackness: f64,
    pub stationarity: f64,
}

impl KktBreakdown {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.slackness)
            .max(self.stationarity)
    }
}

pub fn kkt_breakdown(
    instance: &Instance,
    x: &Allocation,
    mult: &Multipliers,
    d0: &[f64],
) -> KktBreakdown {
    let (np, na, nr) = x.dims();
    let totals = x.app_totals();
    let sv = SurplusVector::at(instance, x, d0);
    let mut primal = x
        .max_violation(instance)
        .max(x.foreign_violation(instance))
        .max(0.0);
    for &d in &sv.surplus {
        primal = primal.max(-d);
    }
    let dual = (-mult.min_entry()).max(0.0);

    let mut slack = 0.0f64;
    for n in 0..np {
        for k in 0..nr {
            let r = instance.capacity(n, k) - x.provider_load(n, k);
            slack = slack.max((mult.alpha[n][k] * r).abs());
        }
        slack = slack.max((mult.zeta[n] * sv.surplus[n]).abs());
        for j in 0..na {
            for k in 0..nr {
                slack = slack.max((mult.gamma.get(n, j, k) * x.get(n, j, k)).abs());
                if !instance.is_native(n, j) {
                    let f = net_foreign(instance, x, &totals, n, j, k);
                    slack = slack.max((mult.pi.get(n, j, k) * f).abs());
                }
            }
        }
    }
    for j in 0..na {
        for k in 0..nr {
            let r = instance.request(j, k) - totals[j * nr + k];
            slack = slack.max((mult.beta[j][k] * r).abs());
        }
    }

    let mut stationarity = 0.0f64;
    if sv.all_positive() {
        let g = gradient_with_delta(instance, x, mult, &sv.surplus);
        for n in 0..np {
            for j in 0..na {
                for k in 0..nr {
                    let v = x.get(n, j, k);
                    let ub = instance.request(j, k) - (totals[j * nr + k] - v);
                    if v > BOUND_TOL && v < ub - BOUND_TOL {
                        stationarity = stationarity.max(g[x.index(n, j, k)].abs());
                    }
                }
            }
        }
    } else {
        stationarity = f64::INFINITY;
    }
    KktBreakdown {
        primal,
        dual,
        slackness: slack,
        stationarity,
    }
}

/// First-order optimality residual; always nonnegative.
pub fn kkt_residual(instance: &Instance, x: &Allocation, mult: &Multipliers, d0: &[f64]) -> f64 {
    kkt_breakdown(instance, x, mult, d0).max()
}

/// Multipliers consistent with a candidate optimum `x`.
///
/// `zeta`, `gamma` and `pi` are zero (their constraints are strict or
/// inactive at an interior optimum). `alpha[n][k]` is the mean Lagrangian
/// slope over coordinates strictly inside their box, or the largest slope
/// over zero coordinates when none are interior. `beta[j][k]` absorbs the
/// remaining slope of pairs whose request is fully served.
pub fn recover_multipliers(instance: &Instance, x: &Allocation, d0: &[f64]) -> Result<Multipliers> {
    let sv = SurplusVector::at(instance, x, d0);
    if let Some(n) = sv.surplus.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::OutOfDomain {
            provider: n,
            surplus: sv.surplus[n],
        });
    }
    let mut mult = Multipliers::zeros(instance);
    let g = gradient_with_delta(instance, x, &mult, &sv.surplus);
    let (np, na, nr) = x.dims();
    let totals = x.app_totals();
    let tol = 1e-7;
    for n in 0..np {
        for k in 0..nr {
            let slack = instance.capacity(n, k) - x.provider_load(n, k);
            if slack > tol {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0;
            let mut zero_max = 0.0f64;
            for j in 0..na {
                let v = x.get(n, j, k);
                let ub = instance.request(j, k) - (totals[j * nr + k] - v);
                let gi = g[x.index(n, j, k)];
                if v > tol && v < ub - tol {
                    sum += gi;
                    count += 1;
                } else if v <= tol {
                    zero_max = zero_max.max(gi);
                }
            }
            mult.alpha[n][k] = if count > 0 {
                (sum / count as f64).max(0.0)
            } else {
                zero_max
            };
        }
    }
    for j in 0..na {
        for k in 0..nr {
            if instance.request(j, k) - totals[j * nr + k] > tol {
                continue;
            }
            let b = (0..np)
                .filter(|&n| x.get(n, j, k) > tol)
                .map(|n| g[x.index(n, j, k)] - mult.alpha[n][k])
                .fold(0.0, f64::max);
            mult.beta[j][k] = b;
        }
    }
    Ok(mult)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistConfig {
    /// `None` selects [`StepSizes::engine_default`].
    pub steps: Option<StepSizes>,
    pub kkt_tol: f64,
    pub max_rounds: usize,
    /// Picks the provider that starts every round.
    pub seed: u64,
    pub start: StartRule,
    /// Fraction of the way each provider moves toward its block response,
    /// in `(0, 1]`.
    pub relaxation: f64,
    /// Record which surplus every primal update consumed.
    pub instrument: bool,
    /// Keep one [`RoundRecord`] per round.
    pub record_rounds: bool,
}

impl DistConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) || self.max_rounds == 0 {
            return Err(Error::BadConfig(
                "kkt_tol must be > 0 and max_rounds >= 1".into(),
            ));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::BadConfig("relaxation must be in (0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for DistConfig {
    fn default() -> Self {
        Self {
            steps: None,
            kkt_tol: DEFAULT_KKT_TOL,
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
            start: StartRule::default(),
            relaxation: DEFAULT_RELAXATION,
            instrument: false,
            record_rounds: false,
        }
    }
}

/// Per-round trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Provider holding the token at the start of the round.
    pub provider: usize,
    pub kkt_residual: f64,
    /// Log objective; `None` when some surplus is not positive.
    pub objective: Option<f64>,
    pub capacity_violation: f64,
    pub request_violation: f64,
    pub nonnegativity_violation: f64,
    pub foreign_violation: f64,
}

/// Round-robin order starting from a seeded random provider.
pub fn schedule(num_providers: usize, seed: u64) -> Vec<usize> {
    let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..num_providers);
    (0..num_providers)
        .map(|i| (first + i) % num_providers)
        .collect()
}

/// Sequential state machine behind [`solve_distributed`] and the protocol
/// simulator.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    instance: &'a Instance,
    d0: Vec<f64>,
    steps: StepSizes,
    order: Vec<usize>,
    relaxation: f64,
    theta: Vec<f64>,
    last_move: Vec<Vec<f64>>,
    instrument: bool,
    pub state: DualState,
}

impl<'a> Engine<'a> {
    /// Starts from the point picked by `config.start` with capacity multipliers at the
    /// standalone marginal levels.
    pub fn new(instance: &'a Instance, d0: &[f64], config: &DistConfig) -> Result<Self> {
        config.validate()?;
        let steps = config
            .steps
            .clone()
            .unwrap_or_else(|| StepSizes::engine_default(instance));
        steps.validate(instance)?;
        let x = initial_point(instance, d0, config.start)?;
        Self::build(instance, d0, config, steps, x)
    }

    /// Like [`Engine::new`] but from a caller-supplied strictly interior `x`.
    pub fn with_start(
        instance: &'a Instance,
        d0: &[f64],
        config: &DistConfig,
        x: Allocation,
    ) -> Result<Self> {
        config.validate()?;
        let steps = config
            .steps
            .clone()
            .unwrap_or_else(|| StepSizes::engine_default(instance));
        steps.validate(instance)?;
        if x.dims() != Allocation::zeros(instance).dims() {
            return Err(Error::BadConfig(
                "start allocation has the wrong shape".into(),
            ));
        }
        if !SurplusVector::at(instance, &x, d0).all_positive() {
            return Err(Error::InfeasibleBargain(
                "start point has a nonpositive surplus".into(),
            ));
        }
        Self::build(instance, d0, config, steps, x)
    }

    fn build(
        instance: &'a Instance,
        d0: &[f64],
        config: &DistConfig,
        steps: StepSizes,
        x: Allocation,
    ) -> Result<Self> {
        let delta = SurplusVector::at(instance, &x, d0).surplus;
        let alone = standalone::solve_all(instance);
        let mut multipliers = Multipliers::zeros(instance);
        for (n, row) in alone.levels.iter().enumerate() {
            for (k, level) in row.iter().enumerate() {
                multipliers.alpha[n][k] = level.map_or(0.0, |l| l / delta[n]);
            }
        }
        Ok(Self {
            instance,
            d0: d0.to_vec(),
            steps,
            order: schedule(instance.num_providers(), config.seed),
            relaxation: config.relaxation,
            theta: vec![config.relaxation; instance.num_providers()],
            last_move: vec![
                vec![0.0; instance.num_apps() * instance.num_resources()];
                instance.num_providers()
            ],
            instrument: config.instrument,
            state: DualState {
                multipliers,
                x,
                delta_prev: delta,
                round: 0,
                residual_history: Vec::new(),
                delta_log: Vec::new(),
                delta_rounds: Vec::new(),
            },
        })
    }

    pub fn schedule(&self) -> &[usize] {
        &self.order
    }

    pub fn d0(&self) -> &[f64] {
        &self.d0
    }

    /// Primal block update of provider `n` followed by its local multipliers
    /// (`alpha[n]`, `zeta[n]`, `gamma[n]`, `pi[n]`).
    ///
    /// The capacity multiplier moves by a damped Newton step on the row
    /// demand: the demand of a free coordinate has slope `-1/L` in `alpha`,
    /// so the step is `phi / sum_free(1/L)`.
    pub fn step_provider(&mut self, n: usize) {
        let inst = self.instance;
        let (np, na, nr) = self.state.x.dims();
        let delta = &self.state.delta_prev;
        let mult = &self.state.multipliers;
        let f = self.steps.factor(self.state.round);
        if self.instrument {
            self.state.delta_log.push(DeltaUse {
                round: self.state.round,
                provider: n,
                delta: delta[n],
            });
        }
        let old: Vec<f64> = (0..na * nr)
            .map(|i| self.state.x.get(n, i / nr, i % nr))
            .collect();
        let mut row = vec![0.0; na];
        let mut new_alpha = mult.alpha[n].clone();
        for k in 0..nr {
            let mut curvature = 0.0;
            for (j, slot) in row.iter_mut().enumerate() {
                let x = &self.state.x;
                let others = x.others_total(n, j, k);
                let ub = (inst.request(j, k) - others).max(0.0);
                let c_n = mult.weight(inst, delta, n, j, k);
                let mut c_eff = c_n;
                for m in (0..np).filter(|&m| m != n) {
                    let xm = x.get(m, j, k);
                    if xm > 0.0 {
                        c_eff -= mult.weight(inst, delta, m, j, k) * xm.exp_m1();
                    }
                }
                let mut l = target(mult, n, j, k);
                if !inst.is_native(n, j) {
                    l += c_n / inst.comm_weight(n, j);
                }
                *slot = if c_eff <= 0.0 {
                    0.0
                } else if l <= 0.0 {
                    ub
                } else {
                    let raw = inst
                        .utility(j, k)
                        .deriv_inv(l / c_eff)
                        .unwrap_or(f64::INFINITY)
                        - others;
                    let v = raw.clamp(0.0, ub);
                    if v > BOUND_TOL && v < ub - BOUND_TOL {
                        curvature += 1.0 / l;
                    }
                    v
                };
            }
            // the capacity gradient sees the unscaled demand
            let demand: f64 = row.iter().sum();
            let grad = inst.capacity(n, k) - demand;
            for (j, &v) in row.iter().enumerate() {
                self.state.x.set(n, j, k, v);
            }
            enforce_capacity(inst, &mut self.state.x, n, k);

            let a = mult.alpha[n][k];
            let step = if curvature > 0.0 {
                self.steps.phi[n][k] / curvature
            } else {
                self.steps.phi[n][k] * a.max(ALPHA_MIN)
            };
            new_alpha[k] = (a - f * step * grad).max(0.0);
        }
        self.settle_block(n, &old);

        let x = &self.state.x;
        let totals = x.app_totals();
        let surplus_n = utilities(inst, x)[n] - self.d0[n];
        let mult = &mut self.state.multipliers;
        mult.alpha[n] = new_alpha;
        mult.zeta[n] = (mult.zeta[n] - f * self.steps.omega[n] * surplus_n).max(0.0);
        for j in 0..na {
            for k in 0..nr {
                let g = (mult.gamma.get(n, j, k)
                    - f * self.steps.theta.get(n, j, k) * x.get(n, j, k))
                .max(0.0);
                mult.gamma.set(n, j, k, g);
                if !inst.is_native(n, j) {
                    let res = net_foreign(inst, x, &totals, n, j, k);
                    let p = (mult.pi.get(n, j, k) - f * self.steps.psi.get(n, j, k) * res).max(0.0);
                    mult.pi.set(n, j, k, p);
                }
            }
        }
    }

    /// Moves provider `n`'s block from `old` toward the response now stored
    /// in `x`. The provider's step starts at `relaxation`, halves whenever
    /// its move reverses the previous one and grows back while moves agree.
    /// Both ends are feasible, so every point between is.
    fn settle_block(&mut self, n: usize, old: &[f64]) {
        let (_, _, nr) = self.state.x.dims();
        let step: Vec<f64> = old
            .iter()
            .enumerate()
            .map(|(i, &a)| self.state.x.get(n, i / nr, i % nr) - a)
            .collect();
        let turn: f64 = step
            .iter()
            .zip(&self.last_move[n])
            .map(|(a, b)| a * b)
            .sum();
        let theta = &mut self.theta[n];
        *theta = if turn < 0.0 {
            (*theta * 0.5).max(MIN_THETA)
        } else {
            (*theta * 1.25).min(self.relaxation)
        };
        let t = *theta;
        for (i, (&a, &d)) in old.iter().zip(&step).enumerate() {
            self.state.x.set(n, i / nr, i % nr, a + t * d);
        }
        self.last_move[n] = step.iter().map(|d| t * d).collect();
    }

    /// End-of-round work: shared request multipliers, fresh surpluses and
    /// the convergence residual.
    pub fn finish_round(&mut self) -> RoundRecord {
        let inst = self.instance;
        let f = self.steps.factor(self.state.round);
        let x = &self.state.x;
        let (_, na, nr) = x.dims();
        let totals = x.app_totals();
        for j in 0..na {
            for k in 0..nr {
                let g = inst.request(j, k) - totals[j * nr + k];
                let b = &mut self.state.multipliers.beta[j][k];
                *b = (*b - f * self.steps.eta[j][k] * g).max(0.0);
            }
        }
        let sv = SurplusVector::at(inst, x, &self.d0);
        for (n, &d) in sv.surplus.iter().enumerate() {
            if d > 0.0 {
                self.state.delta_prev[n] = d;
            } else {
                warn!(
                    "round {}: surplus of provider {n} is {d}; keeping the previous value",
                    self.state.round
                );
            }
        }
        if self.instrument {
            self.state.delta_rounds.push(self.state.delta_prev.clone());
        }
        let residual = kkt_residual(inst, x, &self.state.multipliers, &self.d0);
        self.state.residual_history.push(residual);
        let objective = if sv.all_positive() {
            Some(sv.surplus.iter().map(|d| d.ln()).sum())
        } else {
            None
        };
        let record = RoundRecord {
            round: self.state.round,
            provider: self.order[0],
            kkt_residual: residual,
            objective,
            capacity_violation: group_violation(inst, x, Group::Capacity),
            request_violation: group_violation(inst, x, Group::Request),
            nonnegativity_violation: group_violation(inst, x, Group::Nonnegativity),
            foreign_violation: x.foreign_violation(inst),
        };
        self.state.round += 1;
        record
    }

    pub fn report(
        &self,
        solver: SolverKind,
        objective_history: Vec<f64>,
        converged: bool,
    ) -> SolveReport {
        SolveReport {
            solver,
            allocation: self.state.x.clone(),
            surplus: SurplusVector::at(self.instance, &self.state.x, &self.d0),
            objective_history,
            residual_history: self.state.residual_history.clone(),
            iterations: self.state.round,
            converged,
            final_residual: self
                .state
                .residual_history
                .last()
                .copied()
                .unwrap_or(f64::INFINITY),
        }
    }
}

enum Group {
    Capacity,
    Request,
    Nonnegativity,
}

fn group_violation(instance: &Instance, x: &Allocation, group: Group) -> f64 {
    let (np, na, nr) = x.dims();
    let mut worst = 0.0f64;
    match group {
        Group::Capacity => {
            for n in 0..np {
                for k in 0..nr {
                    worst = worst.max(x.provider_load(n, k) - instance.capacity(n, k));
                }
            }
        }
        Group::Request => {
            for j in 0..na {
                for k in 0..nr {
                    worst = worst.max(x.app_total(j, k) - instance.request(j, k));
                }
            }
        }
        Group::Nonnegativity => {
            for &v in x.as_slice() {
                worst = worst.max(-v);
            }
        }
    }
    worst
}

/// Result of a distributed solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DistSolution {
    pub report: SolveReport,
    pub state: DualState,
    pub schedule: Vec<usize>,
    /// Empty unless [`DistConfig::record_rounds`] is set.
    pub rounds: Vec<RoundRecord>,
}

pub fn solve_distributed(
    instance: &Instance,
    d0: &[f64],
    config: &DistConfig,
) -> Result<DistSolution> {
    run_engine(Engine::new(instance, d0, config)?, config)
}

/// [`solve_distributed`] from a caller-supplied strictly interior start.
pub fn solve_distributed_from(
    instance: &Instance,
    d0: &[f64],
    config: &DistConfig,
    start: Allocation,
) -> Result<DistSolution> {
    run_engine(Engine::with_start(instance, d0, config, start)?, config)
}

fn run_engine(mut engine: Engine<'_>, config: &DistConfig) -> Result<DistSolution> {
    let order = engine.schedule().to_vec();
    let mut objective = Vec::new();
    let mut rounds = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_rounds {
        for &n in &order {
            engine.step_provider(n);
        }
        let rec = engine.finish_round();
        if let Some(o) = rec.objective {
            objective.push(o);
        }
        let done = rec.kkt_residual < config.kkt_tol;
        if config.record_rounds {
            rounds.push(rec);
        }
        if done {
            converged = true;
            break;
        }
    }
    let report = engine.report(SolverKind::Dist, objective, converged);
    if converged {
        Ok(DistSolution {
            report,
            state: engine.state,
            schedule: order,
            rounds,
        })
    } else {
        Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.final_residual,
            best: Box::new(report),
            state: Some(Box::new(engine.state)),
            trace: None,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_round_trace<W: Write>(mut w: W, rounds: &[RoundRecord]) -> Result<()> {
    for r in rounds {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
