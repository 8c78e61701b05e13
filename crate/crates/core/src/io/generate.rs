use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::model::{Instance, UtilityParams};

/// Capacities from native demand: deficit providers get
/// `deficit_factor * demand`, the others `surplus_factor * demand`.
pub fn capacities_from_demand(
    native_apps: &[Vec<usize>],
    requests: &[Vec<f64>],
    num_resources: usize,
    config: &ExperimentConfig,
) -> Vec<Vec<f64>> {
    native_apps
        .iter()
        .enumerate()
        .map(|(n, apps)| {
            let factor = if config.deficit_providers.contains(&n) {
                config.deficit_factor
            } else {
                config.surplus_factor
            };
            (0..num_resources)
                .map(|k| factor * apps.iter().map(|&j| requests[j][k]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Seeded comm weights `w[n][j]`, drawn for every pair (native entries are
/// discarded by [`Instance::new`]).
pub fn draw_comm_weights(
    rng: &mut ChaCha8Rng,
    num_providers: usize,
    num_apps: usize,
    range: [f64; 2],
) -> Vec<Vec<f64>> {
    (0..num_providers)
        .map(|_| {
            (0..num_apps)
                .map(|_| rng.gen_range(range[0]..=range[1]))
                .collect()
        })
        .collect()
}

/// Random instance: applications `n * M_n .. (n + 1) * M_n` are native to
/// provider `n`; requests are uniform in `request_range`.
///
/// Each preset draws from its own stream of the seeded generator, so presets
/// with equal dimensions still get different instances.
pub fn generate_instance(config: &ExperimentConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.preset.map_or(0, u64::from));
    let (np, mn, nk) = (
        config.num_providers,
        config.apps_per_provider,
        config.num_resources,
    );
    let m = np * mn;
    let [lo, hi] = config.request_range;
    let requests: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..nk).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect();
    let native: Vec<Vec<usize>> = (0..np).map(|n| (n * mn..(n + 1) * mn).collect()).collect();
    let comm = draw_comm_weights(&mut rng, np, m, config.comm_weight_range);
    let capacity = capacities_from_demand(&native, &requests, nk, config);
    Instance::new(
        nk,
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
    )
}
