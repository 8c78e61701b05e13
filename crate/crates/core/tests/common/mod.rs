//! Oracles and instance builders shared by the integration tests.
//!
//! The oracles evaluate the utility family from its closed form instead of
//! calling into the library, so they can catch errors in the library's own
//! utility code.

#![allow(dead_code)]

use nbs_share::io::{generate_instance, ExperimentConfig};
use nbs_share::standalone::{self, StandaloneSolution};
use nbs_share::{Allocation, Instance, SurplusVector, UtilityParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `scale * (1 - exp(-(t - r + offset)))`.
pub fn u(t: f64, r: f64, p: UtilityParams) -> f64 {
    p.scale * (1.0 - (-(t - r + p.offset)).exp())
}

pub fn du(t: f64, r: f64, p: UtilityParams) -> f64 {
    p.scale * (-(t - r + p.offset)).exp()
}

pub struct Preset {
    pub config: ExperimentConfig,
    pub instance: Instance,
    pub alone: StandaloneSolution,
}

pub fn preset(id: u8, seed: u64) -> Preset {
    let config = ExperimentConfig {
        seed,
        ..ExperimentConfig::preset(id).unwrap()
    };
    let instance = generate_instance(&config).unwrap();
    let alone = standalone::solve_all(&instance);
    Preset {
        config,
        instance,
        alone,
    }
}

/// Random instance with heterogeneous offsets, scales and capacities.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_providers: usize,
    max_apps: usize,
    max_resources: usize,
) -> Instance {
    let np = rng.gen_range(1..=max_providers);
    let nk = rng.gen_range(1..=max_resources);
    let mut native = Vec::new();
    let mut requests = Vec::new();
    let mut params = Vec::new();
    for _ in 0..np {
        let mn = rng.gen_range(1..=max_apps);
        let start = requests.len();
        for _ in 0..mn {
            requests.push(
                (0..nk)
                    .map(|_| rng.gen_range(0.5..5.0))
                    .collect::<Vec<f64>>(),
            );
            params.push(UtilityParams {
                offset: rng.gen_range(0.3..2.0),
                scale: rng.gen_range(0.5..3.0),
            });
        }
        native.push((start..requests.len()).collect::<Vec<_>>());
    }
    let capacity = native
        .iter()
        .map(|apps: &Vec<usize>| {
            (0..nk)
                .map(|k| {
                    rng.gen_range(0.3..1.5) * apps.iter().map(|&j| requests[j][k]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let m = requests.len();
    let comm = (0..np)
        .map(|_| (0..m).map(|_| rng.gen_range(1.0..20.0)).collect())
        .collect();
    Instance::new(nk, native, capacity, requests, params, comm).unwrap()
}

/// Euclidean projection onto `{0 <= x <= r, sum x <= cap}` by bisection on
/// the shift.
pub fn project_box_budget(v: &[f64], r: &[f64], cap: f64) -> Vec<f64> {
    let clip = |tau: f64| -> Vec<f64> {
        v.iter()
            .zip(r)
            .map(|(a, b)| (a - tau).clamp(0.0, *b))
            .collect()
    };
    let x0 = clip(0.0);
    if x0.iter().sum::<f64>() <= cap {
        return x0;
    }
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, a| m.max(*a)));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip(mid).iter().sum::<f64>() > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(hi)
}

/// Standalone optimum by accelerated projected gradient (FISTA), one
/// `(provider, resource)` block at a time. Stops once the projected-gradient
/// map fixes the current iterate.
pub fn reference_standalone(instance: &Instance) -> Allocation {
    let mut x = Allocation::zeros(instance);
    for n in 0..instance.num_providers() {
        let apps = instance.native_apps(n);
        for k in 0..instance.num_resources() {
            let r: Vec<f64> = apps.iter().map(|&j| instance.request(j, k)).collect();
            let p: Vec<UtilityParams> = apps.iter().map(|&j| instance.utility_params(j)).collect();
            // u'' is largest in magnitude at x = 0
            let lip = apps
                .iter()
                .enumerate()
                .map(|(i, _)| du(0.0, r[i], p[i]))
                .fold(0.0f64, f64::max);
            let step = 1.0 / lip;
            let cap = instance.capacity(n, k);
            let mut cur = vec![0.0; apps.len()];
            let mut y = cur.clone();
            let mut t = 1.0f64;
            let grad_step = |z: &[f64]| -> Vec<f64> {
                let v: Vec<f64> = (0..z.len())
                    .map(|i| z[i] + step * du(z[i], r[i], p[i]))
                    .collect();
                project_box_budget(&v, &r, cap)
            };
            for _ in 0..1_000_000 {
                let next = grad_step(&y);
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = (0..apps.len())
                    .map(|i| next[i] + (t - 1.0) / t_next * (next[i] - cur[i]))
                    .collect();
                cur = next;
                t = t_next;
                // stationarity of the current iterate, not the size of the step
                let residual = grad_step(&cur)
                    .iter()
                    .zip(&cur)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if residual < 1e-12 * step {
                    break;
                }
            }
            for (i, &j) in apps.iter().enumerate() {
                x.set(n, j, k, cur[i]);
            }
        }
    }
    x
}

/// Two providers, one resource, application `i` native to provider `i`.
#[derive(Debug, Clone, Copy)]
pub struct TwoByOne {
    pub r: [f64; 2],
    pub c: [f64; 2],
    pub offset: f64,
    pub w: f64,
}

impl TwoByOne {
    pub fn instance(&self) -> Instance {
        Instance::new(
            1,
            vec![vec![0], vec![1]],
            vec![vec![self.c[0]], vec![self.c[1]]],
            vec![vec![self.r[0]], vec![self.r[1]]],
            vec![
                UtilityParams {
                    offset: self.offset,
                    scale: 1.0
                };
                2
            ],
            vec![vec![0.0, self.w], vec![self.w, 0.0]],
        )
        .unwrap()
    }

    fn p(&self) -> UtilityParams {
        UtilityParams {
            offset: self.offset,
            scale: 1.0,
        }
    }

    pub fn d0(&self) -> [f64; 2] {
        [0, 1].map(|i| u(self.r[i].min(self.c[i]), self.r[i], self.p()))
    }

    /// `x[n][j]`: cooperative utilities, or `None` when a foreign pair has
    /// negative net utility.
    pub fn utilities(&self, x: [[f64; 2]; 2]) -> Option<[f64; 2]> {
        let p = self.p();
        let mut s = [0.0; 2];
        for n in 0..2 {
            for j in 0..2 {
                let t = x[0][j] + x[1][j];
                let inc = u(t, self.r[j], p) - u(t - x[n][j], self.r[j], p);
                if n == j {
                    s[n] += inc;
                } else {
                    let net = inc - x[n][j] / self.w;
                    if net < 0.0 {
                        return None;
                    }
                    s[n] += net;
                }
            }
        }
        Some(s)
    }

    /// Exhaustive search on a `step` grid for the largest product of
    /// surpluses among feasible, individually rational points.
    pub fn brute_force(&self, step: f64) -> (f64, [[f64; 2]; 2]) {
        let d0 = self.d0();
        let g = |v: f64| (v / step + 1e-9).floor() as usize;
        let mut best = (f64::NEG_INFINITY, [[0.0; 2]; 2]);
        for a in 0..=g(self.c[0].min(self.r[0])) {
            let x00 = a as f64 * step;
            for b in 0..=g((self.c[0] - x00).min(self.r[1])) {
                let x01 = b as f64 * step;
                for c in 0..=g(self.c[1].min(self.r[1] - x01)) {
                    let x11 = c as f64 * step;
                    for d in 0..=g((self.c[1] - x11).min(self.r[0] - x00)) {
                        let x10 = d as f64 * step;
                        let x = [[x00, x01], [x10, x11]];
                        let Some(s) = self.utilities(x) else { continue };
                        let (e0, e1) = (s[0] - d0[0], s[1] - d0[1]);
                        if e0 > 0.0 && e1 > 0.0 && e0 * e1 > best.0 {
                            best = (e0 * e1, x);
                        }
                    }
                }
            }
        }
        best
    }
}

/// Seeded feasible perturbation of `x` with entries moved by at most `mag`;
/// `None` when the perturbed point breaks a foreign-pair constraint.
pub fn perturb(
    instance: &Instance,
    x: &Allocation,
    mag: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Allocation> {
    let (np, na, nr) = x.dims();
    let mut y = x.clone();
    for v in y.as_mut_slice() {
        *v = (*v + rng.gen_range(-mag..=mag)).max(0.0);
    }
    for n in 0..np {
        for k in 0..nr {
            let load = y.provider_load(n, k);
            let cap = instance.capacity(n, k);
            if load > cap {
                for j in 0..na {
                    let v = y.get(n, j, k) * cap / load;
                    y.set(n, j, k, v);
                }
            }
        }
    }
    for j in 0..na {
        for k in 0..nr {
            let total = y.app_total(j, k);
            let r = instance.request(j, k);
            if total > r {
                for n in 0..np {
                    let v = y.get(n, j, k) * r / total;
                    y.set(n, j, k, v);
                }
            }
        }
    }
    if y.max_violation(instance) > 1e-12 || y.foreign_violation(instance) > 0.0 {
        return None;
    }
    Some(y)
}

pub fn surplus(instance: &Instance, x: &Allocation, d0: &[f64]) -> Vec<f64> {
    SurplusVector::at(instance, x, d0).surplus
}

pub fn max_abs_diff(a: &Allocation, b: &Allocation) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-12))
        .fold(0.0, f64::max)
}
