//! Evaluation metrics: request satisfaction, utilization, Jain's index and
//! the alone-versus-bargaining comparison.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{utilities, Allocation, Instance};
use crate::report::SolveReport;
use crate::standalone::StandaloneSolution;

/// Percentage of provider `n`'s native requests that is served, averaged over
/// its `(j, k)` pairs. Pairs with a zero request are skipped; a provider with
/// no nonzero request scores 100.
pub fn request_satisfaction(x: &Allocation, instance: &Instance, n: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &j in instance.native_apps(n) {
        for k in 0..instance.num_resources() {
            let r = instance.request(j, k);
            if r > 0.0 {
                sum += x.app_total(j, k) / r;
                count += 1;
            }
        }
    }
    if count == 0 {
        100.0
    } else {
        100.0 * sum / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub percent: f64,
    /// Set when the capacity is zero; `percent` is then 100 by convention.
    pub zero_capacity: bool,
}

/// Share of `C[n][k]` that is allocated, in percent.
pub fn utilization(x: &Allocation, instance: &Instance, n: usize, k: usize) -> Utilization {
    let cap = instance.capacity(n, k);
    if cap <= 0.0 {
        return Utilization {
            percent: 100.0,
            zero_capacity: true,
        };
    }
    Utilization {
        percent: 100.0 * x.provider_load(n, k) / cap,
        zero_capacity: false,
    }
}

/// `(sum v)^2 / (N sum v^2)`.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(Error::AllZero);
    }
    Ok(sum * sum / (values.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspMetrics {
    pub provider: usize,
    /// Disagreement utility.
    pub utility_alone: f64,
    /// Cooperative utility at the bargaining allocation.
    pub utility_nbs: f64,
    /// `utility_nbs - utility_alone`.
    pub utility_gain: f64,
    pub rs_alone: f64,
    pub rs_nbs: f64,
    /// Per resource.
    pub utilization_alone: Vec<f64>,
    pub utilization_nbs: Vec<f64>,
    /// Mean over resources.
    pub mean_utilization_alone: f64,
    pub mean_utilization_nbs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub esps: Vec<EspMetrics>,
    /// Mean request satisfaction over providers.
    pub rs_alone: f64,
    pub rs_nbs: f64,
    /// Mean utilization over every `(n, k)`.
    pub utilization_alone: f64,
    pub utilization_nbs: f64,
    /// Jain's index over the per-provider gains.
    pub jain_gain: Option<f64>,
    /// Jain's index over the raw cooperative utilities, when all are nonnegative.
    pub jain_utility: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn nonneg_jain(v: &[f64]) -> Option<f64> {
    if v.iter().all(|&a| a >= 0.0) {
        jain_index(v).ok()
    } else {
        None
    }
}

/// Assembles every metric for the standalone and the bargaining regime.
pub fn compare_alone_vs_nbs(
    instance: &Instance,
    alone: &StandaloneSolution,
    nbs: &SolveReport,
) -> MetricsReport {
    compare_allocations(instance, &alone.x_alone, &alone.d0, &nbs.allocation)
}

/// [`compare_alone_vs_nbs`] on raw allocations.
pub fn compare_allocations(
    instance: &Instance,
    x_alone: &Allocation,
    d0: &[f64],
    x_nbs: &Allocation,
) -> MetricsReport {
    let s = utilities(instance, x_nbs);
    let nk = instance.num_resources();
    let esps: Vec<EspMetrics> = (0..instance.num_providers())
        .map(|n| {
            let ua: Vec<f64> = (0..nk)
                .map(|k| utilization(x_alone, instance, n, k).percent)
                .collect();
            let un: Vec<f64> = (0..nk)
                .map(|k| utilization(x_nbs, instance, n, k).percent)
                .collect();
            EspMetrics {
                provider: n,
                utility_alone: d0[n],
                utility_nbs: s[n],
                utility_gain: s[n] - d0[n],
                rs_alone: request_satisfaction(x_alone, instance, n),
                rs_nbs: request_satisfaction(x_nbs, instance, n),
                mean_utilization_alone: mean(&ua),
                mean_utilization_nbs: mean(&un),
                utilization_alone: ua,
                utilization_nbs: un,
            }
        })
        .collect();
    let all_alone: Vec<f64> = esps
        .iter()
        .flat_map(|e| e.utilization_alone.clone())
        .collect();
    let all_nbs: Vec<f64> = esps
        .iter()
        .flat_map(|e| e.utilization_nbs.clone())
        .collect();
    let gains: Vec<f64> = esps.iter().map(|e| e.utility_gain).collect();
    MetricsReport {
        rs_alone: mean(&esps.iter().map(|e| e.rs_alone).collect::<Vec<_>>()),
        rs_nbs: mean(&esps.iter().map(|e| e.rs_nbs).collect::<Vec<_>>()),
        utilization_alone: mean(&all_alone),
        utilization_nbs: mean(&all_nbs),
        jain_gain: nonneg_jain(&gains),
        jain_utility: nonneg_jain(&s),
        esps,
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "provider",
    "utility_alone",
    "utility_nbs",
    "utility_gain",
    "rs_alone",
    "rs_nbs",
    "utilization_alone",
    "utilization_nbs",
    "jain_gain",
];

/// One row per provider plus an `all` row with the aggregates.
pub fn write_metrics_csv<W: Write>(w: W, report: &MetricsReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    let fmt = |v: f64| format!("{v:.17e}");
    for e in &report.esps {
        out.write_record([
            e.provider.to_string(),
            fmt(e.utility_alone),
            fmt(e.utility_nbs),
            fmt(e.utility_gain),
            fmt(e.rs_alone),
            fmt(e.rs_nbs),
            fmt(e.mean_utilization_alone),
            fmt(e.mean_utilization_nbs),
            String::new(),
        ])?;
    }
    let total = |f: fn(&EspMetrics) -> f64| report.esps.iter().map(f).sum::<f64>();
    out.write_record([
        "all".to_string(),
        fmt(total(|e| e.utility_alone)),
        fmt(total(|e| e.utility_nbs)),
        fmt(total(|e| e.utility_gain)),
        fmt(report.rs_alone),
        fmt(report.rs_nbs),
        fmt(report.utilization_alone),
        fmt(report.utilization_nbs),
        report.jain_gain.map(fmt).unwrap_or_default(),
    ])?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UtilityParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn inst() -> Instance {
        Instance::new(
            2,
            vec![vec![0, 1], vec![2]],
            vec![vec![4.0, 2.0], vec![3.0, 0.0]],
            vec![vec![2.0, 1.0], vec![1.0, 3.0], vec![2.0, 2.0]],
            vec![UtilityParams::default(); 3],
            vec![vec![0.0, 0.0, 10.0], vec![10.0, 10.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn satisfaction_values() {
        let inst = inst();
        let zero = Allocation::zeros(&inst);
        assert_eq!(request_satisfaction(&zero, &inst, 0), 0.0);
        let mut full = Allocation::zeros(&inst);
        let mut half = Allocation::zeros(&inst);
        for j in 0..3 {
            for k in 0..2 {
                full.set(inst.owner(j), j, k, inst.request(j, k));
                half.set(inst.owner(j), j, k, 0.5 * inst.request(j, k));
            }
        }
        assert_abs_diff_eq!(
            request_satisfaction(&full, &inst, 0),
            100.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(request_satisfaction(&half, &inst, 1), 50.0, epsilon = 1e-12);
        // served by another provider still counts
        let mut other = Allocation::zeros(&inst);
        other.set(1, 0, 0, 2.0);
        assert_abs_diff_eq!(
            request_satisfaction(&other, &inst, 0),
            25.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_requests_are_skipped() {
        let inst = Instance::new(
            2,
            vec![vec![0]],
            vec![vec![5.0, 5.0]],
            vec![vec![2.0, 0.0]],
            vec![UtilityParams::default()],
            vec![vec![0.0]],
        )
        .unwrap();
        let mut x = Allocation::zeros(&inst);
        x.set(0, 0, 0, 1.0);
        assert_abs_diff_eq!(request_satisfaction(&x, &inst, 0), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn utilization_values() {
        let inst = inst();
        let mut x = Allocation::zeros(&inst);
        x.set(0, 0, 0, 1.0);
        x.set(0, 1, 0, 3.0);
        x.set(0, 0, 1, 0.5);
        assert_abs_diff_eq!(utilization(&x, &inst, 0, 0).percent, 100.0, epsilon = 1e-12);
        assert_eq!(utilization(&x, &inst, 1, 0).percent, 0.0);
        let z = utilization(&x, &inst, 1, 1);
        assert!(z.zero_capacity);
        assert_eq!(z.percent, 100.0);
        let rep = compare_allocations(&inst, &x, &[0.0, 0.0], &x);
        assert_abs_diff_eq!(
            rep.esps[0].mean_utilization_nbs,
            (100.0 + 25.0) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn jain_values() {
        assert_abs_diff_eq!(jain_index(&[2.0, 2.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            jain_index(&[0.0, 5.0, 0.0, 0.0]).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            jain_index(&[1.0, 2.0, 3.0]).unwrap(),
            36.0 / 42.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            jain_index(&[1.0, 2.0, 3.0]).unwrap(),
            0.857143,
            epsilon = 1e-6
        );
        assert!(matches!(jain_index(&[0.0, 0.0]), Err(Error::AllZero)));
    }

    #[test]
    fn identical_allocations_have_zero_rs_and_utilization_deltas() {
        let inst = inst();
        let alone = crate::standalone::solve_all(&inst);
        let rep = compare_allocations(&inst, &alone.x_alone, &alone.d0, &alone.x_alone);
        for e in &rep.esps {
            assert_eq!(e.rs_alone, e.rs_nbs);
            assert_eq!(e.utilization_alone, e.utilization_nbs);
            // the disagreement utility counts u(x) while the cooperative
            // utility counts u(x) - u(0) on native pairs
            let u0: f64 = inst
                .native_apps(e.provider)
                .iter()
                .flat_map(|&j| (0..2).map(move |k| (j, k)))
                .map(|(j, k)| inst.utility(j, k).eval(0.0))
                .sum();
            assert_abs_diff_eq!(e.utility_gain, -u0, epsilon = 1e-12);
        }
        assert_eq!(rep.rs_alone, rep.rs_nbs);
    }

    #[test]
    fn csv_export_round_trips() {
        let inst = inst();
        let alone = crate::standalone::solve_all(&inst);
        let rep = compare_allocations(&inst, &alone.x_alone, &alone.d0, &alone.x_alone);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rep).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        for (row, e) in rows.iter().zip(&rep.esps) {
            let v: f64 = row[4].parse().unwrap();
            assert_eq!(v, e.rs_alone);
            let u: f64 = row[2].parse().unwrap();
            assert_eq!(u, e.utility_nbs);
        }
        let json = serde_json::to_string(&rep).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    proptest! {
        #[test]
        fn jain_bounds(v in proptest::collection::vec(0.0f64..100.0, 1..12)) {
            prop_assume!(v.iter().any(|&a| a > 0.0));
            let j = jain_index(&v).unwrap();
            let n = v.len() as f64;
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
        }
    }
}
