use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::generate::{capacities_from_demand, draw_comm_weights};
use crate::error::{Error, Result};
use crate::model::{Instance, UtilityParams};

pub const COLUMNS: [&str; 5] = ["provider", "app", "cpu_cores", "cpu", "memory"];

/// One task of a workload trace with normalized resource columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub provider: String,
    pub app: String,
    pub cpu_cores: f64,
    pub cpu: f64,
    pub memory: f64,
    /// 1-based line in the source file.
    pub line: u64,
}

impl TraceRow {
    fn resources(&self) -> [f64; 3] {
        [self.cpu_cores, self.cpu, self.memory]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub instance: Instance,
    /// Provider tags in order of first appearance; tag `i` is provider `i`.
    pub tags: Vec<String>,
    /// Sampled rows per provider; row `i` of provider `n` is its `i`-th
    /// native application.
    pub rows: Vec<Vec<TraceRow>>,
    pub warnings: Vec<String>,
}

pub fn ingest_trace(path: &Path, config: &ExperimentConfig) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_trace_reader(file, config)
}

/// Builds a `K = 3` instance from a delimited trace with a header naming
/// `provider`, `app`, `cpu_cores`, `cpu` and `memory`.
///
/// Resource values are expected in `[0, 1]`; values outside are clamped and
/// reported in [`Ingested::warnings`]. A value `v` becomes the request
/// `lo + v * (hi - lo)` of `config.request_range`. Each provider keeps a
/// seeded sample of `config.samples_per_provider` rows.
pub fn ingest_trace_reader<R: Read>(reader: R, config: &ExperimentConfig) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut warnings = Vec::new();
    let mut by_tag: BTreeMap<String, Vec<TraceRow>> = BTreeMap::new();
    let mut tags = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
        let mut values = [0.0; 3];
        for (r, v) in values.iter_mut().enumerate() {
            let raw = field(r + 2);
            let parsed: f64 = raw.parse().map_err(|_| Error::Parse {
                line: line as usize,
                msg: format!("column `{}`: `{raw}` is not a number", COLUMNS[r + 2]),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Parse {
                    line: line as usize,
                    msg: format!("column `{}` is not finite", COLUMNS[r + 2]),
                });
            }
            if !(0.0..=1.0).contains(&parsed) {
                let msg = format!(
                    "line {line}: {} value {parsed} clamped to [0, 1]",
                    COLUMNS[r + 2]
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            *v = parsed.clamp(0.0, 1.0);
        }
        let tag = field(0);
        if tag.is_empty() {
            return Err(Error::Parse {
                line: line as usize,
                msg: "empty provider tag".into(),
            });
        }
        if !by_tag.contains_key(&tag) {
            tags.push(tag.clone());
        }
        by_tag.entry(tag.clone()).or_default().push(TraceRow {
            provider: tag,
            app: field(1),
            cpu_cores: values[0],
            cpu: values[1],
            memory: values[2],
            line,
        });
    }
    if tags.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "trace has no data rows".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let want = config.samples_per_provider;
    let mut rows = Vec::with_capacity(tags.len());
    for tag in &tags {
        let all = by_tag.remove(tag).unwrap_or_default();
        let picked = if all.len() > want {
            let mut ids = rand::seq::index::sample(&mut rng, all.len(), want).into_vec();
            ids.sort_unstable();
            ids.into_iter().map(|i| all[i].clone()).collect()
        } else {
            if all.len() < want {
                let msg = format!("provider `{tag}` has {} rows, fewer than {want}", all.len());
                warn!("{msg}");
                warnings.push(msg);
            }
            all
        };
        rows.push(picked);
    }

    let [lo, hi] = config.request_range;
    let mut requests = Vec::new();
    let mut native = Vec::with_capacity(tags.len());
    for provider_rows in &rows {
        let start = requests.len();
        for r in provider_rows {
            requests.push(
                r.resources()
                    .iter()
                    .map(|v| lo + v * (hi - lo))
                    .collect::<Vec<_>>(),
            );
        }
        native.push((start..requests.len()).collect::<Vec<_>>());
    }
    let np = tags.len();
    let sizing = ExperimentConfig {
        deficit_providers: config
            .deficit_providers
            .iter()
            .copied()
            .filter(|&n| n < np)
            .collect(),
        ..config.clone()
    };
    let capacity = capacities_from_demand(&native, &requests, 3, &sizing);
    let comm = draw_comm_weights(&mut rng, np, requests.len(), config.comm_weight_range);
    let m = requests.len();
    let instance = Instance::new(
        3,
        native,
        capacity,
        requests,
        vec![
            UtilityParams {
                offset: config.offset,
                scale: 1.0
            };
            m
        ],
        comm,
    )?;
    Ok(Ingested {
        instance,
        tags,
        rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_text(per_tag: usize) -> String {
        let mut s = String::from("provider,app,cpu_cores,cpu,memory\n");
        for (t, tag) in ["fastStorage", "rnd", "other"].iter().enumerate() {
            for i in 0..per_tag {
                let v = ((t * 31 + i * 7) % 100) as f64 / 100.0;
                s.push_str(&format!("{tag},{tag}-{i},{v},{},{}\n", 1.0 - v, 0.5 * v));
            }
        }
        s
    }

    #[test]
    fn well_formed_trace() {
        let cfg = ExperimentConfig::preset(3).unwrap();
        let got = ingest_trace_reader(trace_text(20).as_bytes(), &cfg).unwrap();
        assert_eq!(got.instance.num_providers(), 3);
        assert_eq!(got.instance.num_resources(), 3);
        for n in 0..3 {
            assert_eq!(got.instance.native_apps(n).len(), 20);
        }
        assert_eq!(got.tags[0], "fastStorage");
        assert!(got.warnings.is_empty());
        // provider 0 is the deficit provider
        let demand: f64 = got
            .instance
            .native_apps(0)
            .iter()
            .map(|&j| got.instance.request(j, 0))
            .sum();
        assert!((got.instance.capacity(0, 0) - 0.6 * demand).abs() < 1e-9);
    }

    #[test]
    fn samples_per_provider() {
        let cfg = ExperimentConfig::preset(3).unwrap();
        let got = ingest_trace_reader(trace_text(50).as_bytes(), &cfg).unwrap();
        assert!(got.rows.iter().all(|r| r.len() == 20));
        let again = ingest_trace_reader(trace_text(50).as_bytes(), &cfg).unwrap();
        assert_eq!(got.rows, again.rows);
    }

    #[test]
    fn missing_column() {
        let text = "provider,app,cpu_cores,cpu\na,x,0.1,0.2\n";
        let err = ingest_trace_reader(text.as_bytes(), &ExperimentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "memory"));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "provider,app,cpu_cores,cpu,memory\na,x,0.1,0.2,0.3\na,y,0.1,oops,0.3\n";
        let err = ingest_trace_reader(text.as_bytes(), &ExperimentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn out_of_range_values_are_clamped_with_warning() {
        let text = "provider,app,cpu_cores,cpu,memory\na,x,1.5,0.2,-0.1\nb,y,0.1,0.2,0.3\n";
        let cfg = ExperimentConfig {
            samples_per_provider: 1,
            ..ExperimentConfig::default()
        };
        let got = ingest_trace_reader(text.as_bytes(), &cfg).unwrap();
        assert_eq!(got.warnings.len(), 2);
        assert_eq!(got.rows[0][0].cpu_cores, 1.0);
        assert_eq!(got.rows[0][0].memory, 0.0);
        assert_eq!(got.instance.request(0, 0), 5.0);
        assert_eq!(got.instance.request(0, 2), 1.0);
    }
}
