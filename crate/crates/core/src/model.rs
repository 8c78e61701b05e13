//! Problem data model shared by every solver.
//!
//! An [`Instance`] describes `N` providers, `K` resource types, a partition of
//! the `M` applications into per-provider native sets, capacities `C[n][k]`,
//! requests `r[j][k]` and the utility / communication-cost parameters.
//! An [`Allocation`] is the dense tensor `x[n][j][k]`.
//!
//! The utility of serving a total `T` of resource `k` to application `j` is
//!
//! ```text
//! u(T) = scale_j * (1 - exp(-(T - r[j][k] + offset_j)))
//! ```
//!
//! and serving a foreign application costs `x / w[n][j]`. Provider `n` earns
//! the differential utility `u(T) - u(T - x[n][j][k])` on every `(j, k)` pair
//! it contributes to, minus the communication cost on foreign pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when checking allocation feasibility.
pub const DEFAULT_FEAS_TOL: f64 = 1e-6;

/// Per-application parameters of the exponential utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    /// Distance below the request at which the utility crosses zero.
    pub offset: f64,
    /// Positive multiplier on the whole utility.
    pub scale: f64,
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self {
            offset: 1.0,
            scale: 1.0,
        }
    }
}

/// The utility of one `(application, resource)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utility {
    pub request: f64,
    pub offset: f64,
    pub scale: f64,
}

impl Utility {
    pub fn new(request: f64, params: UtilityParams) -> Self {
        Self {
            request,
            offset: params.offset,
            scale: params.scale,
        }
    }

    #[inline]
    fn exponent(&self, total: f64) -> f64 {
        -(total - self.request + self.offset)
    }

    #[inline]
    pub fn eval(&self, total: f64) -> f64 {
        -self.scale * self.exponent(total).exp_m1()
    }

    /// First derivative; strictly positive and strictly decreasing.
    #[inline]
    pub fn deriv(&self, total: f64) -> f64 {
        self.scale * self.exponent(total).exp()
    }

    /// Second derivative.
    #[inline]
    pub fn second_deriv(&self, total: f64) -> f64 {
        -self.deriv(total)
    }

    /// Inverse of [`Utility::deriv`]: the total `y` with `u'(y) = v`.
    ///
    /// The result is unclamped and may be negative.
    pub fn deriv_inv(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(Error::NonPositiveTarget(v));
        }
        Ok(self.request - self.offset - (v / self.scale).ln())
    }

    /// Derivative of [`Utility::deriv_inv`] with respect to its argument.
    #[inline]
    pub fn deriv_inv_slope(&self, v: f64) -> f64 {
        -1.0 / v
    }

    /// `u(total) - u(total - x)`, evaluated without cancellation.
    #[inline]
    pub fn increment(&self, total: f64, x: f64) -> f64 {
        self.scale * self.exponent(total).exp() * x.exp_m1()
    }

    /// `u'(total - x) / u'(total)`; independent of `total` for this family.
    #[inline]
    pub fn deriv_ratio(&self, x: f64) -> f64 {
        x.exp()
    }

    /// `u'(total) - u'(total - x)`, evaluated without cancellation.
    #[inline]
    pub fn deriv_increment(&self, total: f64, x: f64) -> f64 {
        -self.deriv(total) * x.exp_m1()
    }
}

/// Full problem statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceData", into = "InstanceData")]
pub struct Instance {
    num_resources: usize,
    native_apps: Vec<Vec<usize>>,
    capacity: Vec<Vec<f64>>,
    requests: Vec<Vec<f64>>,
    utility: Vec<UtilityParams>,
    comm_weights: Vec<Vec<f64>>,
    owner: Vec<usize>,
}

/// Serialized form of [`Instance`]; `owner` is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceData {
    pub num_providers: usize,
    pub num_resources: usize,
    pub native_apps: Vec<Vec<usize>>,
    pub capacity: Vec<Vec<f64>>,
    pub requests: Vec<Vec<f64>>,
    pub utility: Vec<UtilityParams>,
    /// `w[n][j]`; entries for native pairs are ignored (written as 0).
    pub comm_weights: Vec<Vec<f64>>,
}

impl TryFrom<InstanceData> for Instance {
    type Error = Error;

    fn try_from(d: InstanceData) -> Result<Self> {
        if d.native_apps.len() != d.num_providers {
            return Err(Error::InvalidInstance(format!(
                "num_providers is {} but {} native app sets given",
                d.num_providers,
                d.native_apps.len()
            )));
        }
        Instance::new(
            d.num_resources,
            d.native_apps,
            d.capacity,
            d.requests,
            d.utility,
            d.comm_weights,
        )
    }
}

impl From<Instance> for InstanceData {
    fn from(i: Instance) -> Self {
        Self {
            num_providers: i.native_apps.len(),
            num_resources: i.num_resources,
            native_apps: i.native_apps,
            capacity: i.capacity,
            requests: i.requests,
            utility: i.utility,
            comm_weights: i.comm_weights,
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInstance(msg.into()))
}

impl Instance {
    /// Validates and builds an instance.
    ///
    /// Native-pair entries of `comm_weights` are not used and are normalized to 0.
    pub fn new(
        num_resources: usize,
        native_apps: Vec<Vec<usize>>,
        capacity: Vec<Vec<f64>>,
        requests: Vec<Vec<f64>>,
        utility: Vec<UtilityParams>,
        mut comm_weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_prov = native_apps.len();
        if n_prov == 0 {
            return invalid("at least one provider is required");
        }
        if num_resources == 0 {
            return invalid("at least one resource type is required");
        }
        let n_apps = requests.len();
        let mut owner = vec![usize::MAX; n_apps];
        for (n, apps) in native_apps.iter().enumerate() {
            for &j in apps {
                if j >= n_apps {
                    return invalid(format!("provider {n} lists unknown application {j}"));
                }
                if owner[j] != usize::MAX {
                    return invalid(format!(
                        "application {j} is native to both provider {} and provider {n}",
                        owner[j]
                    ));
                }
                owner[j] = n;
            }
        }
        if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
            return invalid(format!("application {j} has no native provider"));
        }
        if capacity.len() != n_prov || capacity.iter().any(|row| row.len() != num_resources) {
            return invalid("capacity must be an N x K matrix");
        }
        if requests.iter().any(|row| row.len() != num_resources) {
            return invalid("requests must be an M x K matrix");
        }
        let finite_nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if !capacity.iter().flatten().all(finite_nonneg) {
            return invalid("capacities must be finite and nonnegative");
        }
        if !requests.iter().flatten().all(finite_nonneg) {
            return invalid("requests must be finite and nonnegative");
        }
        if utility.len() != n_apps {
            return invalid("one utility parameter set per application is required");
        }
        for (j, p) in utility.iter().enumerate() {
            if !(p.offset > 0.0 && p.offset.is_finite()) {
                return invalid(format!("application {j}: offset must be > 0"));
            }
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return invalid(format!("application {j}: scale must be > 0"));
            }
        }
        if comm_weights.len() != n_prov || comm_weights.iter().any(|row| row.len() != n_apps) {
            return invalid("comm_weights must be an N x M matrix");
        }
        for (n, row) in comm_weights.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                if owner[j] == n {
                    *w = 0.0;
                } else if !(*w > 0.0 && w.is_finite()) {
                    return invalid(format!("comm weight w[{n}][{j}] must be finite and > 0"));
                }
            }
        }
        Ok(Self {
            num_resources,
            native_apps,
            capacity,
            requests,
            utility,
            comm_weights,
            owner,
        })
    }

    pub fn num_providers(&self) -> usize {
        self.native_apps.len()
    }

    pub fn num_apps(&self) -> usize {
        self.requests.len()
    }

    pub fn num_resources(&self) -> usize {
        self.num_resources
    }

    pub fn native_apps(&self, n: usize) -> &[usize] {
        &self.native_apps[n]
    }

    pub fn owner(&self, j: usize) -> usize {
        self.owner[j]
    }

    pub fn is_native(&self, n: usize, j: usize) -> bool {
        self.owner[j] == n
    }

    pub fn capacity(&self, n: usize, k: usize) -> f64 {
        self.capacity[n][k]
    }

    pub fn capacities(&self) -> &[Vec<f64>] {
        &self.capacity
    }

    pub fn request(&self, j: usize, k: usize) -> f64 {
        self.requests[j][k]
    }

    pub fn requests(&self) -> &[Vec<f64>] {
        &self.requests
    }

    pub fn utility_params(&self, j: usize) -> UtilityParams {
        self.utility[j]
    }

    pub fn utility(&self, j: usize, k: usize) -> Utility {
        Utility::new(self.requests[j][k], self.utility[j])
    }

    /// `w[n][j]`; only meaningful for foreign pairs.
    pub fn comm_weight(&self, n: usize, j: usize) -> f64 {
        self.comm_weights[n][j]
    }

    /// Returns a copy with one provider's capacity row replaced.
    pub fn with_capacity(&self, n: usize, row: Vec<f64>) -> Result<Self> {
        let mut capacity = self.capacity.clone();
        capacity[n] = row;
        Instance::new(
            self.num_resources,
            self.native_apps.clone(),
            capacity,
            self.requests.clone(),
            self.utility.clone(),
            self.comm_weights.clone(),
        )
    }

    /// Returns a copy with the utility scale of every application native to
    /// provider `n` multiplied by `factor`.
    pub fn with_scaled_provider(&self, n: usize, factor: f64) -> Result<Self> {
        let mut utility = self.utility.clone();
        for &j in &self.native_apps[n] {
            utility[j].scale *= factor;
        }
        Instance::new(
            self.num_resources,
            self.native_apps.clone(),
            self.capacity.clone(),
            self.requests.clone(),
            utility,
            self.comm_weights.clone(),
        )
    }
}

/// Dense allocation tensor `x[n][j][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    providers: usize,
    apps: usize,
    resources: usize,
    data: Vec<f64>,
}

impl Allocation {
    pub fn zeros(instance: &Instance) -> Self {
        Self::with_dims(
            instance.num_providers(),
            instance.num_apps(),
            instance.num_resources(),
        )
    }

    pub fn with_dims(providers: usize, apps: usize, resources: usize) -> Self {
        Self {
            providers,
            apps,
            resources,
            data: vec![0.0; providers * apps * resources],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.providers, self.apps, self.resources)
    }

    #[inline]
    pub fn index(&self, n: usize, j: usize, k: usize) -> usize {
        (n * self.apps + j) * self.resources + k
    }

    #[inline]
    pub fn get(&self, n: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(n, j, k)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, j: usize, k: usize, v: f64) {
        let i = self.index(n, j, k);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `sum_n x[n][j][k]`.
    pub fn app_total(&self, j: usize, k: usize) -> f64 {
        (0..self.providers).map(|n| self.get(n, j, k)).sum()
    }

    /// `sum_{m != n} x[m][j][k]`.
    pub fn others_total(&self, n: usize, j: usize, k: usize) -> f64 {
        (0..self.providers)
            .filter(|&m| m != n)
            .map(|m| self.get(m, j, k))
            .sum()
    }

    /// `sum_j x[n][j][k]`.
    pub fn provider_load(&self, n: usize, k: usize) -> f64 {
        (0..self.apps).map(|j| self.get(n, j, k)).sum()
    }

    /// `(j, k) -> sum_n x[n][j][k]` as a flat `M * K` table.
    pub fn app_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.apps * self.resources];
        for n in 0..self.providers {
            for j in 0..self.apps {
                for k in 0..self.resources {
                    t[j * self.resources + k] += self.get(n, j, k);
                }
            }
        }
        t
    }

    /// Largest violation of capacity, request and nonnegativity constraints.
    pub fn max_violation(&self, instance: &Instance) -> f64 {
        let mut worst = 0.0f64;
        for &v in &self.data {
            worst = worst.max(-v);
        }
        for n in 0..self.providers {
            for k in 0..self.resources {
                worst = worst.max(self.provider_load(n, k) - instance.capacity(n, k));
            }
        }
        for j in 0..self.apps {
            for k in 0..self.resources {
                worst = worst.max(self.app_total(j, k) - instance.request(j, k));
            }
        }
        worst
    }

    /// Most negative net differential utility over foreign pairs, as a
    /// nonnegative violation amount.
    pub fn foreign_violation(&self, instance: &Instance) -> f64 {
        let totals = self.app_totals();
        let mut worst = 0.0f64;
        for n in 0..self.providers {
            for j in 0..self.apps {
                if instance.is_native(n, j) {
                    continue;
                }
                for k in 0..self.resources {
                    let x = self.get(n, j, k);
                    if x > 0.0 {
                        let f = pair_term(instance, totals[j * self.resources + k], x, n, j, k);
                        worst = worst.max(-f);
                    }
                }
            }
        }
        worst
    }

    fn check_dims(&self, instance: &Instance) -> Result<()> {
        if self.dims()
            != (
                instance.num_providers(),
                instance.num_apps(),
                instance.num_resources(),
            )
        {
            return Err(Error::InvalidInstance(format!(
                "allocation dims {:?} do not match the instance",
                self.dims()
            )));
        }
        Ok(())
    }

    /// Errors with [`Error::InfeasibleAllocation`] if any linear constraint is
    /// violated by more than `tol`.
    pub fn check_feasible(&self, instance: &Instance, tol: f64) -> Result<()> {
        self.check_dims(instance)?;
        let violation = self.max_violation(instance);
        if violation > tol {
            return Err(Error::InfeasibleAllocation { violation, tol });
        }
        Ok(())
    }
}

pub fn utility_eval(instance: &Instance, total: f64, j: usize, k: usize) -> f64 {
    instance.utility(j, k).eval(total)
}

pub fn utility_deriv(instance: &Instance, total: f64, j: usize, k: usize) -> f64 {
    instance.utility(j, k).deriv(total)
}

pub fn utility_deriv_inv(instance: &Instance, v: f64, j: usize, k: usize) -> Result<f64> {
    instance.utility(j, k).deriv_inv(v)
}

/// Communication cost `x / w[n][j]` of serving foreign application `j` at `n`.
pub fn comm_cost(instance: &Instance, x: f64, n: usize, j: usize) -> Result<f64> {
    if instance.is_native(n, j) {
        return Err(Error::NativeApp {
            provider: n,
            app: j,
        });
    }
    Ok(x / instance.comm_weight(n, j))
}

/// Net utility provider `n` earns by adding `x` on top of `others_total`
/// for a foreign pair.
pub fn differential_utility(
    instance: &Instance,
    x: f64,
    others_total: f64,
    n: usize,
    j: usize,
    k: usize,
) -> Result<f64> {
    let cost = comm_cost(instance, x, n, j)?;
    Ok(instance.utility(j, k).increment(others_total + x, x) - cost)
}

/// Contribution of pair `(j, k)` to provider `n`'s utility given the pair's
/// total allocation and `n`'s share `x` of it.
#[inline]
pub fn pair_term(instance: &Instance, total: f64, x: f64, n: usize, j: usize, k: usize) -> f64 {
    let gain = instance.utility(j, k).increment(total, x);
    if instance.is_native(n, j) {
        gain
    } else {
        gain - x / instance.comm_weight(n, j)
    }
}

/// Cooperative utility of every provider, without a feasibility check.
pub fn utilities(instance: &Instance, x: &Allocation) -> Vec<f64> {
    let (np, na, nr) = x.dims();
    let totals = x.app_totals();
    let mut s = vec![0.0; np];
    for (n, s_n) in s.iter_mut().enumerate() {
        for j in 0..na {
            for k in 0..nr {
                let v = x.get(n, j, k);
                if v != 0.0 {
                    *s_n += pair_term(instance, totals[j * nr + k], v, n, j, k);
                }
            }
        }
    }
    s
}

/// Gradient of `sum_m weight(m, j, k) * term_m(j, k)` with respect to every
/// coordinate `x[n][j][k]`, where `term_m` is provider `m`'s pair term.
///
/// Coordinate `x[n][j][k]` enters `term_n` directly and every other
/// provider's term through the pair total:
///
/// ```text
/// d/dx_n = c_n (u'(T - x_n) - [foreign] 1/w_n) + sum_m c_m (u'(T) - u'(T - x_m))
/// ```
pub fn weighted_term_gradient(
    instance: &Instance,
    x: &Allocation,
    weight: impl Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let (np, na, nr) = x.dims();
    let totals = x.app_totals();
    let mut g = vec![0.0; np * na * nr];
    for j in 0..na {
        for k in 0..nr {
            let u = instance.utility(j, k);
            let t = totals[j * nr + k];
            let ut = u.deriv(t);
            let mut shared = 0.0;
            for m in 0..np {
                let xm = x.get(m, j, k);
                if xm != 0.0 {
                    shared += weight(m, j, k) * u.deriv_increment(t, xm);
                }
            }
            for n in 0..np {
                let xn = x.get(n, j, k);
                let own = ut * u.deriv_ratio(xn)
                    - if instance.is_native(n, j) {
                        0.0
                    } else {
                        1.0 / instance.comm_weight(n, j)
                    };
                g[x.index(n, j, k)] = weight(n, j, k) * own + shared;
            }
        }
    }
    g
}

/// Cooperative utility of provider `n`: differential utility over native
/// pairs plus net differential utility over foreign pairs.
pub fn esp_utility(instance: &Instance, x: &Allocation, n: usize) -> Result<f64> {
    x.check_feasible(instance, DEFAULT_FEAS_TOL)?;
    let (_, na, nr) = x.dims();
    let mut s = 0.0;
    for j in 0..na {
        for k in 0..nr {
            let v = x.get(n, j, k);
            if v != 0.0 {
                s += pair_term(instance, x.app_total(j, k), v, n, j, k);
            }
        }
    }
    Ok(s)
}

/// Disagreement utilities, cooperative utilities and their differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusVector {
    pub d0: Vec<f64>,
    pub s: Vec<f64>,
    pub surplus: Vec<f64>,
}

impl SurplusVector {
    pub fn new(d0: &[f64], s: Vec<f64>) -> Self {
        let surplus = s.iter().zip(d0).map(|(a, b)| a - b).collect();
        Self {
            d0: d0.to_vec(),
            s,
            surplus,
        }
    }

    pub fn at(instance: &Instance, x: &Allocation, d0: &[f64]) -> Self {
        Self::new(d0, utilities(instance, x))
    }

    pub fn all_positive(&self) -> bool {
        self.surplus.iter().all(|&v| v > 0.0)
    }
}
