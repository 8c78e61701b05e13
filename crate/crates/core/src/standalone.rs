//! Standalone (no sharing) allocation of every provider.
//!
//! Each provider maximizes the sum of its native utilities subject to its own
//! capacities and the request caps. The objective separates over resources, so
//! every `(n, k)` is an independent water-filling problem: with a common
//! marginal level `lambda`, application `j` receives
//! `clamp(r_j - offset_j - ln(lambda / scale_j), 0, r_j)` and `lambda` is found
//! by bisection on `ln(lambda)` so that the capacity is met.

use serde::{Deserialize, Serialize};

use crate::model::{Allocation, Instance};

const CAP_TOL: f64 = 1e-9;
const MAX_BISECT: usize = 200;

/// Standalone allocations (native pairs only) and disagreement utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneSolution {
    pub x_alone: Allocation,
    /// `d0[n]`: optimal standalone objective of provider `n`.
    pub d0: Vec<f64>,
    /// Marginal utility level per `(n, k)`; `None` when capacity is slack.
    pub levels: Vec<Vec<Option<f64>>>,
}

/// Result of [`solve_alone`] for one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderAlone {
    pub provider: usize,
    /// `x[i][k]` for the `i`-th native application of the provider.
    pub x: Vec<Vec<f64>>,
    pub d0: f64,
    pub levels: Vec<Option<f64>>,
}

/// Water-fills one resource of one provider.
///
/// `apps` holds `(request, offset, scale)`; returns the allocation and the
/// marginal level (`None` if every request fits).
pub fn water_fill(apps: &[(f64, f64, f64)], capacity: f64) -> (Vec<f64>, Option<f64>) {
    let demand: f64 = apps.iter().map(|a| a.0).sum();
    if demand <= capacity {
        return (apps.iter().map(|a| a.0).collect(), None);
    }
    let fill = |t: f64| -> Vec<f64> {
        apps.iter()
            .map(|&(r, off, scale)| (r - off + scale.ln() - t).clamp(0.0, r))
            .collect()
    };
    // every app saturated below `lo`, every app empty above `hi`
    let mut lo = apps
        .iter()
        .map(|&(_, off, scale)| scale.ln() - off)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let mut hi = apps
        .iter()
        .map(|&(r, off, scale)| r - off + scale.ln())
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let total: f64 = fill(mid).iter().sum();
        if total > capacity {
            lo = mid;
        } else {
            hi = mid;
        }
        if (total - capacity).abs() <= CAP_TOL && total <= capacity {
            break;
        }
    }
    // `fill` is linear between breakpoints: with the active set known, the
    // level that spends exactly `capacity` has a closed form
    let x = fill(hi);
    let (mut free, mut sum_free, mut saturated) = (0usize, 0.0, 0.0);
    for (xi, &(r, off, scale)) in x.iter().zip(apps) {
        if *xi >= r {
            saturated += r;
        } else if *xi > 0.0 {
            free += 1;
            sum_free += r - off + scale.ln();
        }
    }
    if free > 0 {
        let t = (sum_free - (capacity - saturated)) / free as f64;
        let exact = fill(t);
        let total: f64 = exact.iter().sum();
        if total <= capacity * (1.0 + 4.0 * f64::EPSILON)
            && (capacity - total).abs() < (capacity - x.iter().sum::<f64>()).abs() + f64::EPSILON
        {
            return (exact, Some(t.exp()));
        }
    }
    // `hi` always satisfies the capacity
    (x, Some(hi.exp()))
}

pub fn solve_alone(instance: &Instance, n: usize) -> ProviderAlone {
    let apps = instance.native_apps(n);
    let nk = instance.num_resources();
    let mut x = vec![vec![0.0; nk]; apps.len()];
    let mut levels = vec![None; nk];
    let mut d0 = 0.0;
    for k in 0..nk {
        let params: Vec<_> = apps
            .iter()
            .map(|&j| {
                let p = instance.utility_params(j);
                (instance.request(j, k), p.offset, p.scale)
            })
            .collect();
        let (col, level) = water_fill(&params, instance.capacity(n, k));
        levels[k] = level;
        for (i, &j) in apps.iter().enumerate() {
            x[i][k] = col[i];
            d0 += instance.utility(j, k).eval(col[i]);
        }
    }
    ProviderAlone {
        provider: n,
        x,
        d0,
        levels,
    }
}

/// Solves every provider's standalone problem.
pub fn solve_all(instance: &Instance) -> StandaloneSolution {
    let mut x_alone = Allocation::zeros(instance);
    let mut d0 = Vec::with_capacity(instance.num_providers());
    let mut levels = Vec::with_capacity(instance.num_providers());
    for n in 0..instance.num_providers() {
        let p = solve_alone(instance, n);
        for (i, &j) in instance.native_apps(n).iter().enumerate() {
            for (k, &v) in p.x[i].iter().enumerate() {
                x_alone.set(n, j, k, v);
            }
        }
        d0.push(p.d0);
        levels.push(p.levels);
    }
    StandaloneSolution {
        x_alone,
        d0,
        levels,
    }
}

/// Disagreement utilities `d0[n]` of every provider.
pub fn disagreement_vector(instance: &Instance) -> Vec<f64> {
    (0..instance.num_providers())
        .map(|n| solve_alone(instance, n).d0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UtilityParams;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_provider(requests: &[f64], capacity: f64) -> Instance {
        let m = requests.len();
        Instance::new(
            1,
            vec![(0..m).collect()],
            vec![vec![capacity]],
            requests.iter().map(|&r| vec![r]).collect(),
            vec![UtilityParams::default(); m],
            vec![vec![0.0; m]],
        )
        .unwrap()
    }

    fn objective(inst: &Instance, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, &v)| inst.utility(j, 0).eval(v))
            .sum()
    }

    #[test]
    fn saturates_when_capacity_suffices() {
        let inst = one_provider(&[1.0, 2.5, 0.3], 10.0);
        let p = solve_alone(&inst, 0);
        let x: Vec<f64> = p.x.iter().map(|r| r[0]).collect();
        assert_eq!(x, vec![1.0, 2.5, 0.3]);
        assert_eq!(p.levels, vec![None]);
    }

    #[test]
    fn symmetric_split() {
        let inst = one_provider(&[2.0, 2.0], 3.0);
        let p = solve_alone(&inst, 0);
        assert_abs_diff_eq!(p.x[0][0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.x[1][0], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn asymmetric_split_matches_grid_search() {
        let inst = one_provider(&[3.0, 1.0], 2.0);
        let p = solve_alone(&inst, 0);
        assert_abs_diff_eq!(p.x[0][0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(p.x[1][0], 0.0, epsilon = 1e-8);
        // dense grid over the capacity line x0 + x1 = 2, 0 <= x1 <= 1
        let best = (0..=100_000)
            .map(|i| {
                let x1 = i as f64 * 1e-5;
                (x1, objective(&inst, &[2.0 - x1, x1]))
            })
            .fold(
                (0.0, f64::NEG_INFINITY),
                |a, b| if b.1 > a.1 { b } else { a },
            );
        assert_abs_diff_eq!(best.0, p.x[1][0], epsilon = 1e-4);
        // shift s = 1 reproduces x = r - s clamped
        assert_abs_diff_eq!(p.levels[0].unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn zero_capacity() {
        let inst = one_provider(&[1.0, 2.0], 0.0);
        let p = solve_alone(&inst, 0);
        assert!(p.x.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn single_app_disagreement() {
        let inst = crate::model::fixtures::single(2.0, 5.0);
        let d0 = disagreement_vector(&inst);
        assert_abs_diff_eq!(d0[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn unrelated_capacity_change_is_independent() {
        let inst = crate::model::fixtures::two_provider(10.0);
        let base = disagreement_vector(&inst);
        let doubled = inst.with_capacity(1, vec![6.0]).unwrap();
        let after = disagreement_vector(&doubled);
        assert_eq!(base[0], after[0]);
    }

    fn random_instance(rng: &mut ChaCha8Rng, m: usize) -> Instance {
        let requests: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(0.5..5.0)]).collect();
        let total: f64 = requests.iter().map(|r| r[0]).sum();
        let params = (0..m)
            .map(|_| UtilityParams {
                offset: rng.gen_range(0.5..1.5),
                scale: rng.gen_range(0.5..2.0),
            })
            .collect();
        Instance::new(
            1,
            vec![(0..m).collect()],
            vec![vec![total * rng.gen_range(0.2..0.9)]],
            requests,
            params,
            vec![vec![0.0; m]],
        )
        .unwrap()
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 6);
            let p = solve_alone(&inst, 0);
            let lambda = p.levels[0].expect("capacity binds");
            for j in 0..6 {
                let u = inst.utility(j, 0);
                let x = p.x[j][0];
                let r = inst.request(j, 0);
                if x > 1e-12 && x < r - 1e-12 {
                    assert!((u.deriv(x) - lambda).abs() <= 1e-8 * lambda.max(1.0));
                } else if x <= 1e-12 {
                    assert!(u.deriv(0.0) <= lambda + 1e-8);
                } else {
                    assert!(u.deriv(r) >= lambda - 1e-8);
                }
            }
            let load: f64 = p.x.iter().map(|r| r[0]).sum();
            assert!((load - inst.capacity(0, 0)).abs() < 1e-8);
        }
    }

    #[test]
    fn beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = random_instance(&mut rng, 5);
        let p = solve_alone(&inst, 0);
        let cap = inst.capacity(0, 0);
        for _ in 0..1000 {
            let mut x: Vec<f64> = (0..5)
                .map(|j| rng.gen_range(0.0..=inst.request(j, 0)))
                .collect();
            let s: f64 = x.iter().sum();
            if s > cap {
                x.iter_mut().for_each(|v| *v *= cap / s);
            }
            assert!(objective(&inst, &x) <= p.d0 + 1e-12);
        }
    }

    #[test]
    fn disagreement_monotone_in_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 4);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            let c = i as f64 * 0.4;
            let d = disagreement_vector(&inst.with_capacity(0, vec![c]).unwrap())[0];
            assert!(d >= prev - 1e-12);
            prev = d;
        }
    }
}
