//! Centralized reference solver for the bargaining program
//!
//! ```text
//! maximize   sum_n ln(s_n(X) - d0[n])
//! subject to sum_j x[n][j][k] <= C[n][k],  sum_n x[n][j][k] <= r[j][k],  x >= 0,
//!            net differential utility of every foreign pair >= 0
//! ```
//!
//! by projected gradient ascent. The log objective is its own barrier for
//! `s_n > d0[n]`: the line search rejects any trial point that leaves the
//! domain. Projection onto the two families of capped simplices uses Dykstra's
//! alternating projections; foreign pairs with negative net utility are then
//! shrunk toward zero.
//!
//! A native pair term `u(T) - u(T - x_n)` is convex in the other providers'
//! share of `T`, so the program can have several local maxima when providers
//! overlap on a pair. [`solve_central`] ascends from one deterministic start
//! and, when asked, from seeded random interior starts as well, keeping the
//! best stationary point.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    pair_term, utilities, weighted_term_gradient, Allocation, Instance, SurplusVector,
    DEFAULT_FEAS_TOL,
};
use crate::report::{SolveReport, SolverKind};
use crate::standalone;

#[derive(Debug, Clone, PartialEq)]
pub struct CentralConfig {
    /// Trial step of the first iteration; later iterations use a spectral step.
    pub step_init: f64,
    /// Step shrink factor of the backtracking line search, in `(0, 1)`.
    pub backtrack: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub feas_tol: f64,
    pub projection_sweeps: usize,
    pub start: StartRule,
    /// Seeded random interior starts tried in addition to `start`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CentralConfig {
    fn default() -> Self {
        Self {
            step_init: 0.1,
            backtrack: 0.5,
            max_iters: 50_000,
            grad_tol: 1e-6,
            feas_tol: DEFAULT_FEAS_TOL,
            projection_sweeps: 500,
            start: StartRule::default(),
            restarts: 0,
            seed: 0,
        }
    }
}

impl CentralConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_init > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.max_iters > 0
            && self.grad_tol > 0.0
            && self.feas_tol > 0.0
            && self.projection_sweeps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig(format!(
                "invalid central solver config {self:?}"
            )))
        }
    }
}

/// `sum_n ln(s_n - d0[n])`.
pub fn nbs_log_objective(instance: &Instance, x: &Allocation, d0: &[f64]) -> Result<f64> {
    log_objective_of(&utilities(instance, x), d0)
}

fn log_objective_of(s: &[f64], d0: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (n, (&s_n, &d_n)) in s.iter().zip(d0).enumerate() {
        let surplus = s_n - d_n;
        if !(surplus > 0.0) {
            return Err(Error::OutOfDomain {
                provider: n,
                surplus,
            });
        }
        total += surplus.ln();
    }
    Ok(total)
}

/// `prod_n (s_n - d0[n])`, without any domain check.
pub fn nbs_product_objective(instance: &Instance, x: &Allocation, d0: &[f64]) -> f64 {
    utilities(instance, x)
        .iter()
        .zip(d0)
        .map(|(s, d)| s - d)
        .product()
}

/// Gradient of the log objective with respect to every `x[n][j][k]`.
pub fn log_objective_gradient(instance: &Instance, x: &Allocation, d0: &[f64]) -> Result<Vec<f64>> {
    let s = utilities(instance, x);
    let mut inv = Vec::with_capacity(s.len());
    for (n, (&s_n, &d_n)) in s.iter().zip(d0).enumerate() {
        let surplus = s_n - d_n;
        if !(surplus > 0.0) {
            return Err(Error::OutOfDomain {
                provider: n,
                surplus,
            });
        }
        inv.push(1.0 / surplus);
    }
    Ok(weighted_term_gradient(instance, x, |m, _, _| inv[m]))
}

/// Euclidean projection of `v` onto `{y >= 0, sum y <= cap}`.
pub fn project_capped_simplex(v: &mut [f64], cap: f64) {
    let pos: f64 = v.iter().map(|&a| a.max(0.0)).sum();
    if pos <= cap {
        v.iter_mut().for_each(|a| *a = a.max(0.0));
        return;
    }
    // find tau with sum max(v - tau, 0) = cap using the sorted breakpoints
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - cap) / (i + 1) as f64;
        let next = sorted.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if t >= next {
            tau = t;
            break;
        }
    }
    v.iter_mut().for_each(|a| *a = (*a - tau).max(0.0));
}

fn project_capacity_sets(instance: &Instance, x: &mut Allocation) {
    let (np, na, nr) = x.dims();
    let mut buf = vec![0.0; na];
    for n in 0..np {
        for k in 0..nr {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x.get(n, j, k);
            }
            project_capped_simplex(&mut buf, instance.capacity(n, k));
            for (j, &b) in buf.iter().enumerate() {
                x.set(n, j, k, b);
            }
        }
    }
}

fn project_request_sets(instance: &Instance, x: &mut Allocation) {
    let (np, na, nr) = x.dims();
    let mut buf = vec![0.0; np];
    for j in 0..na {
        for k in 0..nr {
            for (n, b) in buf.iter_mut().enumerate() {
                *b = x.get(n, j, k);
            }
            project_capped_simplex(&mut buf, instance.request(j, k));
            for (n, &b) in buf.iter().enumerate() {
                x.set(n, j, k, b);
            }
        }
    }
}

fn capacity_violation(instance: &Instance, x: &Allocation) -> f64 {
    let (np, _, nr) = x.dims();
    let mut worst = 0.0f64;
    for n in 0..np {
        for k in 0..nr {
            worst = worst.max(x.provider_load(n, k) - instance.capacity(n, k));
        }
    }
    worst
}

/// Projects onto the intersection of the capacity and request polytopes with
/// Dykstra's algorithm. The result satisfies the request sets exactly and the
/// capacity sets to within `feas_tol`.
pub fn project_polytopes(
    instance: &Instance,
    v: &Allocation,
    feas_tol: f64,
    max_sweeps: usize,
) -> Allocation {
    let mut x = v.clone();
    let len = x.as_slice().len();
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut y = x.clone();
    for _ in 0..max_sweeps {
        // y = P_A(x + p); p = x + p - y
        for i in 0..len {
            y.as_mut_slice()[i] = x.as_slice()[i] + p[i];
        }
        let before = y.clone();
        project_capacity_sets(instance, &mut y);
        let mut shift = 0.0f64;
        for i in 0..len {
            let next = before.as_slice()[i] - y.as_slice()[i];
            shift = shift.max((next - p[i]).abs());
            p[i] = next;
        }
        // x = P_B(y + q); q = y + q - x
        let mut z = y.clone();
        for i in 0..len {
            z.as_mut_slice()[i] += q[i];
        }
        let before = z.clone();
        project_request_sets(instance, &mut z);
        for i in 0..len {
            let next = before.as_slice()[i] - z.as_slice()[i];
            shift = shift.max((next - q[i]).abs());
            q[i] = next;
        }
        let moved = z
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = z;
        // neither feasibility nor a still iterate is enough: Dykstra's iterate
        // can sit in place for whole sweeps while the corrections keep moving
        let tol = 0.1 * feas_tol;
        if capacity_violation(instance, &x) < tol && moved < tol && shift < tol {
            break;
        }
    }
    // the request projection keeps x >= 0; a final shrink fixes any
    // remaining capacity excess without breaking the request sets
    let (np, na, nr) = x.dims();
    for n in 0..np {
        for k in 0..nr {
            let load = x.provider_load(n, k);
            let cap = instance.capacity(n, k);
            if load > cap {
                let f = if load > 0.0 { cap / load } else { 0.0 };
                for j in 0..na {
                    let v = x.get(n, j, k) * f;
                    x.set(n, j, k, v);
                }
            }
        }
    }
    x
}

/// Shrinks foreign pairs with negative net differential utility toward zero
/// until every foreign pair is nonnegative. Returns the number of shrinks.
pub fn shrink_foreign_pairs(instance: &Instance, x: &mut Allocation) -> usize {
    let (np, na, nr) = x.dims();
    let mut shrinks = 0;
    // shrinking one coordinate changes the pair total seen by the others
    for _pass in 0..=np {
        let mut changed = false;
        for j in 0..na {
            for k in 0..nr {
                for n in 0..np {
                    if instance.is_native(n, j) {
                        continue;
                    }
                    let xn = x.get(n, j, k);
                    if xn <= 0.0 {
                        continue;
                    }
                    let others = x.app_total(j, k) - xn;
                    let f = |v: f64| pair_term(instance, others + v, v, n, j, k);
                    if f(xn) >= 0.0 {
                        continue;
                    }
                    // f is concave with f(0) = 0: the feasible set is [0, root]
                    let (mut lo, mut hi) = (0.0, xn);
                    while hi - lo > 1e-9 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) >= 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    x.set(n, j, k, lo);
                    shrinks += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    shrinks
}

fn project_feasible(instance: &Instance, v: &Allocation, cfg: &CentralConfig) -> Allocation {
    let mut x = project_polytopes(instance, v, cfg.feas_tol, cfg.projection_sweeps);
    shrink_foreign_pairs(instance, &mut x);
    x
}

/// Builds a strictly feasible allocation with every surplus positive.
///
/// Starts from the standalone allocation shrunk by 0.999, then lets providers
/// whose surplus is not yet positive serve foreign pairs at their individually
/// optimal amount. If some surplus is still not positive, hands the point to
/// [`phase_one`].
pub fn find_interior_start(instance: &Instance, d0: &[f64]) -> Result<Allocation> {
    let alone = standalone::solve_all(instance);
    let mut x = alone.x_alone;
    x.as_mut_slice().iter_mut().for_each(|v| *v *= 0.999);
    let (np, na, nr) = x.dims();

    for _ in 0..(np * na * nr + 1) {
        let surplus = SurplusVector::at(instance, &x, d0);
        if surplus.all_positive() {
            return Ok(x);
        }
        let mut progressed = false;
        for n in (0..np).filter(|&n| surplus.surplus[n] <= 0.0) {
            for j in (0..na).filter(|&j| !instance.is_native(n, j)) {
                for k in 0..nr {
                    let spare = instance.capacity(n, k) - x.provider_load(n, k);
                    let residual = instance.request(j, k) - x.app_total(j, k);
                    let room = 0.999 * spare.min(residual);
                    if room <= 1e-12 || x.get(n, j, k) > 0.0 {
                        continue;
                    }
                    let u = instance.utility(j, k);
                    let others = x.app_total(j, k);
                    let best = u.deriv_inv(1.0 / instance.comm_weight(n, j))? - others;
                    let amount = best.min(room);
                    if amount > 1e-12 && pair_term(instance, others + amount, amount, n, j, k) > 0.0
                    {
                        x.set(n, j, k, amount);
                        progressed = true;
                    }
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let surplus = SurplusVector::at(instance, &x, d0);
    if surplus.all_positive() {
        return Ok(x);
    }
    if let Some(x) = phase_one(instance, d0, x) {
        return Ok(x);
    }
    let worst = surplus
        .surplus
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(n, s)| format!("provider {n} surplus {s:.6}"))
        .unwrap_or_default();
    Err(Error::InfeasibleBargain(worst))
}

const PHASE_ONE_SHARPNESS: f64 = 20.0;
const PHASE_ONE_ITERS: usize = 5000;

/// Projected ascent on the soft minimum `-ln(sum_n exp(-t * e_n)) / t` of the
/// surpluses `e_n`, stopped as soon as every surplus is positive. `None` if
/// the ascent stalls first.
pub fn phase_one(instance: &Instance, d0: &[f64], start: Allocation) -> Option<Allocation> {
    let cfg = CentralConfig::default();
    let soft_min = |x: &Allocation| -> (f64, Vec<f64>) {
        let e = SurplusVector::at(instance, x, d0).surplus;
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = e
            .iter()
            .map(|v| (-PHASE_ONE_SHARPNESS * (v - lo)).exp())
            .collect();
        let z: f64 = w.iter().sum();
        (
            lo - z.ln() / PHASE_ONE_SHARPNESS,
            w.iter().map(|v| v / z).collect(),
        )
    };
    let mut x = start;
    let (mut f, mut w) = soft_min(&x);
    let mut step = 1.0;
    for _ in 0..PHASE_ONE_ITERS {
        if SurplusVector::at(instance, &x, d0).all_positive() {
            return Some(x);
        }
        let g = weighted_term_gradient(instance, &x, |n, _, _| w[n]);
        loop {
            let trial = project_feasible(instance, &offset(&x, &g, step), &cfg);
            let (ft, wt) = soft_min(&trial);
            if ft > f {
                x = trial;
                f = ft;
                w = wt;
                step = (2.0 * step).min(1e6);
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                return None;
            }
        }
    }
    None
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn offset(x: &Allocation, dir: &[f64], step: f64) -> Allocation {
    let mut y = x.clone();
    for (v, d) in y.as_mut_slice().iter_mut().zip(dir) {
        *v += step * d;
    }
    y
}

/// How the solvers pick their first strictly interior point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartRule {
    /// [`find_interior_start`].
    #[default]
    Greedy,
    /// [`sharing_start`].
    Sharing,
}

/// Strictly interior start selected by `rule`.
pub fn initial_point(instance: &Instance, d0: &[f64], rule: StartRule) -> Result<Allocation> {
    match rule {
        StartRule::Greedy => find_interior_start(instance, d0),
        StartRule::Sharing => sharing_start(instance, d0),
    }
}

/// Start in which no pair is served by two providers.
///
/// A provider whose capacity covers its native demand of resource `k` serves
/// it in full. Otherwise it serves its native pairs whole, smallest request
/// first, gives the remainder to the first pair that does not fit and leaves
/// the rest unserved. Each unserved pair then goes to the provider with the
/// most spare capacity, at most up to the amount where its net foreign
/// utility stops increasing. Everything is shrunk by 0.999. Falls back to
/// [`find_interior_start`] if a surplus is not positive.
pub fn sharing_start(instance: &Instance, d0: &[f64]) -> Result<Allocation> {
    let np = instance.num_providers();
    let nr = instance.num_resources();
    let mut x = Allocation::zeros(instance);
    for k in 0..nr {
        let mut spare = vec![0.0; np];
        let mut unserved = Vec::new();
        for n in 0..np {
            let mut apps = instance.native_apps(n).to_vec();
            apps.sort_by(|&a, &b| instance.request(a, k).total_cmp(&instance.request(b, k)));
            let mut left = instance.capacity(n, k);
            for j in apps {
                let give = instance.request(j, k).min(left);
                if give > 0.0 {
                    x.set(n, j, k, give);
                    left -= give;
                } else {
                    unserved.push(j);
                }
            }
            spare[n] = left;
        }
        for j in unserved {
            let Some(h) = (0..np)
                .filter(|&h| !instance.is_native(h, j) && spare[h] > 0.0)
                .max_by(|&a, &b| spare[a].total_cmp(&spare[b]))
            else {
                continue;
            };
            let best = instance
                .utility(j, k)
                .deriv_inv(1.0 / instance.comm_weight(h, j))?;
            let amount = best.min(spare[h]).min(instance.request(j, k));
            if amount > 0.0 {
                x.set(h, j, k, amount);
                spare[h] -= amount;
            }
        }
    }
    x.as_mut_slice().iter_mut().for_each(|v| *v *= 0.999);
    if SurplusVector::at(instance, &x, d0).all_positive() {
        Ok(x)
    } else {
        debug!("sharing start has a nonpositive surplus, using the greedy start");
        find_interior_start(instance, d0)
    }
}

/// Seeded random feasible point with every surplus positive, blended toward
/// `anchor` until it is interior. `None` if even a small blend fails.
pub fn random_interior_start(
    instance: &Instance,
    d0: &[f64],
    anchor: &Allocation,
    rng: &mut ChaCha8Rng,
    config: &CentralConfig,
) -> Option<Allocation> {
    let (np, na, nr) = anchor.dims();
    let mut v = anchor.clone();
    for n in 0..np {
        for j in 0..na {
            for k in 0..nr {
                let hi = instance.request(j, k).min(instance.capacity(n, k));
                v.set(n, j, k, rng.gen_range(0.0..=hi.max(0.0)));
            }
        }
    }
    let random = project_feasible(instance, &v, config);
    let mut t = 1.0;
    while t > 1e-3 {
        let mut x = random.clone();
        for (a, b) in x.as_mut_slice().iter_mut().zip(anchor.as_slice()) {
            *a = t * *a + (1.0 - t) * b;
        }
        shrink_foreign_pairs(instance, &mut x);
        if SurplusVector::at(instance, &x, d0).all_positive() {
            return Some(x);
        }
        t *= 0.5;
    }
    None
}

/// Maximizes the log objective from the start picked by `config.start` and
/// from `config.restarts` random interior starts; returns the best
/// converged run.
pub fn solve_central(
    instance: &Instance,
    d0: &[f64],
    config: &CentralConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let start = initial_point(instance, d0, config.start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![start.clone()];
    for _ in 0..config.restarts {
        if let Some(x) = random_interior_start(instance, d0, &start, &mut rng, config) {
            starts.push(x);
        }
    }
    let mut best: Option<SolveReport> = None;
    let mut failure = None;
    for x in starts {
        match solve_central_from(instance, d0, config, x) {
            Ok(rep) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| rep.objective_history.last() > b.objective_history.last());
                if better {
                    best = Some(rep);
                }
            }
            Err(e) => {
                debug!("central run failed: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    match (best, failure) {
        (Some(rep), _) => Ok(rep),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one start is always tried"),
    }
}

/// Projected gradient ascent from a given strictly interior start.
pub fn solve_central_from(
    instance: &Instance,
    d0: &[f64],
    config: &CentralConfig,
    start: Allocation,
) -> Result<SolveReport> {
    config.validate()?;
    let mut x = start;
    let mut f = nbs_log_objective(instance, &x, d0)?;
    let mut g = log_objective_gradient(instance, &x, d0)?;
    let mut step = config.step_init;
    let mut objective_history = vec![f];
    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut pg_norm = f64::INFINITY;

    while iterations < config.max_iters {
        let unit = project_feasible(instance, &offset(&x, &g, 1.0), config);
        pg_norm = inf_norm_diff(unit.as_slice(), x.as_slice());
        residual_history.push(pg_norm);
        if pg_norm < config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        let mut trial_step = step;
        while trial_step > 1e-20 {
            let trial = project_feasible(instance, &offset(&x, &g, trial_step), config);
            let d: Vec<f64> = trial
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            if let Ok(ft) = nbs_log_objective(instance, &trial, d0) {
                if ft >= f + 1e-4 * dot(&g, &d) && ft >= f {
                    accepted = Some((trial, ft, d));
                    break;
                }
            }
            trial_step *= config.backtrack;
        }
        let Some((trial, ft, d)) = accepted else {
            debug!("line search stalled at iteration {iterations}");
            break;
        };
        let g_new = log_objective_gradient(instance, &trial, d0)?;
        // spectral (Barzilai-Borwein) step for the next trial
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = -dot(&d, &y);
        step = if sy > 0.0 {
            (dot(&d, &d) / sy).clamp(1e-10, 1e10)
        } else {
            (trial_step / config.backtrack).min(1e10)
        };
        x = trial;
        f = ft;
        g = g_new;
        objective_history.push(f);
    }

    let report = SolveReport {
        solver: SolverKind::Central,
        surplus: SurplusVector::at(instance, &x, d0),
        allocation: x,
        objective_history,
        residual_history,
        iterations,
        converged,
        final_residual: pg_norm,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::NotConverged {
            iterations,
            residual: pg_norm,
            best: Box::new(report),
            state: None,
            trace: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::two_provider;
    use crate::model::UtilityParams;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_objective_values() {
        let inst = two_provider(10.0);
        let mut x = Allocation::zeros(&inst);
        x.set(0, 0, 0, 0.5);
        x.set(1, 1, 0, 1.5);
        let s = utilities(&inst, &x);
        let ones: Vec<f64> = s.iter().map(|v| v - 1.0).collect();
        assert_abs_diff_eq!(
            nbs_log_objective(&inst, &x, &ones).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let e: Vec<f64> = s.iter().map(|v| v - std::f64::consts::E).collect();
        assert_abs_diff_eq!(
            nbs_log_objective(&inst, &x, &e).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        let bad: Vec<f64> = s.iter().map(|v| v + 0.1).collect();
        assert!(matches!(
            nbs_log_objective(&inst, &x, &bad),
            Err(Error::OutOfDomain { provider: 0, .. })
        ));
    }

    #[test]
    fn product_objective_values() {
        let inst = two_provider(10.0);
        let mut x = Allocation::zeros(&inst);
        x.set(0, 0, 0, 0.5);
        x.set(1, 1, 0, 1.5);
        x.set(1, 0, 0, 0.25);
        let s = utilities(&inst, &x);
        let d0 = vec![s[0] - 2.0, s[1] - 3.0];
        assert_abs_diff_eq!(nbs_product_objective(&inst, &x, &d0), 6.0, epsilon = 1e-12);
        let zero = vec![s[0], s[1] - 3.0];
        assert_eq!(nbs_product_objective(&inst, &x, &zero), 0.0);
        let d0 = vec![s[0] - 0.7, s[1] - 1.3];
        let lp = nbs_log_objective(&inst, &x, &d0).unwrap();
        let pp = nbs_product_objective(&inst, &x, &d0);
        assert!((lp.exp() - pp).abs() <= 1e-9 * pp);
    }

    fn pair(r: [f64; 2], c: [f64; 2], offset: f64, w: f64) -> Instance {
        Instance::new(
            1,
            vec![vec![0], vec![1]],
            vec![vec![c[0]], vec![c[1]]],
            vec![vec![r[0]], vec![r[1]]],
            vec![UtilityParams { offset, scale: 1.0 }; 2],
            vec![vec![0.0, w], vec![w, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn dykstra_waits_for_its_corrections() {
        // the iterate stands still for whole sweeps before x[1][0] returns
        let inst = pair([1.5, 1.2], [0.8, 1.5], 1.0, 10.0);
        let mut v = Allocation::zeros(&inst);
        v.as_mut_slice()
            .copy_from_slice(&[1.6557, -2.0145, 0.1947, 2.3048]);
        let p = project_polytopes(&inst, &v, 1e-6, 500);
        for (a, b) in p.as_slice().iter().zip([0.8, 0.0, 0.1947, 1.2]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn phase_one_finds_a_start_the_greedy_pass_misses() {
        // app 1's request is below its offset: standing alone is not individually rational
        let inst = pair([1.794, 1.175], [1.0155, 0.788], 1.24, 10.2);
        let d0 = standalone::disagreement_vector(&inst);
        let alone = standalone::solve_all(&inst).x_alone;
        assert!(!SurplusVector::at(&inst, &alone, &d0).all_positive());
        let x = find_interior_start(&inst, &d0).unwrap();
        assert!(SurplusVector::at(&inst, &x, &d0).all_positive());
        assert!(x.max_violation(&inst) <= 1e-9);
        assert!(x.foreign_violation(&inst) <= 0.0);
    }

    #[test]
    fn capped_simplex_projection() {
        let mut v = vec![0.5, -1.0, 0.2];
        project_capped_simplex(&mut v, 1.0);
        assert_eq!(v, vec![0.5, 0.0, 0.2]);
        let mut v = vec![2.0, 1.0, -3.0];
        project_capped_simplex(&mut v, 1.0);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        let mut v = vec![1.0, 1.0];
        project_capped_simplex(&mut v, 1.0);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![3.0, 2.0];
        project_capped_simplex(&mut v, 0.0);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn capped_simplex_projection_is_nearest_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..3.0)).collect();
            let cap = rng.gen_range(0.0..4.0);
            let mut p = v.clone();
            project_capped_simplex(&mut p, cap);
            assert!(p.iter().all(|&a| a >= 0.0));
            assert!(p.iter().sum::<f64>() <= cap + 1e-12);
            let dist = |y: &[f64]| y.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            // no random feasible point is closer
            for _ in 0..50 {
                let mut y: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
                let s: f64 = y.iter().sum();
                if s > cap {
                    y.iter_mut().for_each(|a| *a *= cap / s);
                }
                assert!(dist(&p) <= dist(&y) + 1e-12);
            }
        }
    }

    #[test]
    fn dykstra_reaches_both_polytopes() {
        let inst = two_provider(10.0);
        let mut v = Allocation::zeros(&inst);
        v.set(0, 0, 0, 2.0);
        v.set(0, 1, 0, 1.0);
        v.set(1, 0, 0, 1.5);
        v.set(1, 1, 0, 2.5);
        let x = project_polytopes(&inst, &v, 1e-9, 500);
        assert!(x.max_violation(&inst) < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = two_provider(6.0);
        let d0 = standalone::disagreement_vector(&inst);
        let mut x = Allocation::zeros(&inst);
        x.set(0, 0, 0, 0.8);
        x.set(1, 0, 0, 0.6);
        x.set(1, 1, 0, 1.7);
        x.set(0, 1, 0, 0.1);
        let g = log_objective_gradient(&inst, &x, &d0).unwrap();
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let fd = (nbs_log_objective(&inst, &a, &d0).unwrap()
                - nbs_log_objective(&inst, &b, &d0).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn shrink_restores_nonnegative_foreign_terms() {
        let inst = two_provider(0.5);
        let mut x = Allocation::zeros(&inst);
        x.set(0, 1, 0, 0.9);
        x.set(1, 1, 0, 1.0);
        assert!(x.foreign_violation(&inst) > 0.0);
        assert!(shrink_foreign_pairs(&inst, &mut x) > 0);
        assert!(x.foreign_violation(&inst) <= 1e-12);
    }

    #[test]
    fn self_sufficient_providers_have_no_bargain() {
        // requests below the offset: serving anything from others cannot
        // lift a provider over its standalone utility
        let inst = Instance::new(
            1,
            vec![vec![0], vec![1]],
            vec![vec![5.0], vec![5.0]],
            vec![vec![0.5], vec![0.5]],
            vec![UtilityParams::default(); 2],
            vec![vec![0.0, 10.0], vec![10.0, 0.0]],
        )
        .unwrap();
        let d0 = standalone::disagreement_vector(&inst);
        assert!(matches!(
            find_interior_start(&inst, &d0),
            Err(Error::InfeasibleBargain(_))
        ));
        assert!(matches!(
            solve_central(&inst, &d0, &CentralConfig::default()),
            Err(Error::InfeasibleBargain(_))
        ));
    }

    #[test]
    fn symmetric_twins_get_equal_surplus() {
        let inst = Instance::new(
            1,
            vec![vec![0], vec![1], vec![2]],
            vec![vec![1.0], vec![4.0], vec![4.0]],
            vec![vec![3.0], vec![2.0], vec![2.0]],
            vec![UtilityParams::default(); 3],
            vec![
                vec![0.0, 10.0, 10.0],
                vec![10.0, 0.0, 10.0],
                vec![10.0, 10.0, 0.0],
            ],
        )
        .unwrap();
        let d0 = standalone::disagreement_vector(&inst);
        let cfg = CentralConfig {
            grad_tol: 1e-9,
            ..Default::default()
        };
        let rep = solve_central(&inst, &d0, &cfg).unwrap();
        assert!(rep.surplus.all_positive());
        assert!((rep.surplus.surplus[1] - rep.surplus.surplus[2]).abs() < 1e-4);
        assert!(rep.objective_history.windows(2).all(|w| w[1] >= w[0]));
    }
}
