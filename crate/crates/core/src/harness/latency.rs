use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::report::LatencyRow;
use super::run::latency_stats;
use crate::belief::{CovKind, SsmHyper};
use crate::error::{Error, Result};
use crate::learners::UpdaterKind;
use crate::network::MlpSpec;

/// An updater the capability policy would not run at some size.
#[derive(Debug, Clone, PartialEq)]
pub struct Refusal {
    pub updater: String,
    pub p: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
    pub refused: Vec<Refusal>,
}

/// Representation tag used in `latency.csv`.
pub fn repr_label(kind: &UpdaterKind) -> String {
    match kind.cov_kind() {
        Some(CovKind::Full) => "full".into(),
        Some(CovKind::Diag) => "diag".into(),
        Some(CovKind::Dlr(r)) => format!("dlr{r}"),
        None => "point".into(),
    }
}

/// Times `updates` single-sample steps (predict + update for beliefs) after
/// `warmup` discarded ones, on the calling thread, with a monotonic clock.
#[allow(clippy::too_many_arguments)]
pub fn time_updater(
    updater: UpdaterKind,
    net: &MlpSpec,
    hyper: &SsmHyper,
    warmup: usize,
    updates: usize,
    seed: u64,
    cap_bytes: u64,
) -> Result<LatencyRow> {
    if !updater.is_streaming() {
        return Err(Error::Contract(format!(
            "{} does not consume streaming samples",
            updater.label()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = net.init_params(1.0, &mut rng);
    let mut params = updater.init_params(init, hyper, cap_bytes)?;
    let pool: Vec<(Vec<f64>, Vec<f64>)> = (0..64)
        .map(|_| {
            let x = (0..net.input_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let b = (0..net.output_dim())
                .map(|_| f64::from(u8::from(rng.random::<bool>())))
                .collect();
            (x, b)
        })
        .collect();
    let mut times = Vec::with_capacity(updates);
    for i in 0..warmup + updates {
        let (x, b) = &pool[i % pool.len()];
        let start = Instant::now();
        updater.step(&mut params, net, x, b, hyper, &mut rng)?;
        let us = start.elapsed().as_secs_f64() * 1e6;
        if i >= warmup {
            times.push(us);
        }
    }
    let (mean_us, p95_us) = latency_stats(&mut times);
    Ok(LatencyRow {
        updater: updater.label(),
        repr: repr_label(&updater),
        p: net.num_params(),
        mean_us,
        p95_us,
    })
}

/// Latency of every streaming updater in the config on each network size of
/// `latency.hidden` (default: the configured receiver). Runs single-threaded.
pub fn measure_latency(cfg: &ExperimentConfig) -> Result<LatencyTable> {
    let grid = if cfg.latency.hidden.is_empty() {
        vec![cfg.receiver.hidden.clone()]
    } else {
        cfg.latency.hidden.clone()
    };
    let mut table = LatencyTable::default();
    for hidden in &grid {
        let net = cfg.module_spec_with(hidden)?;
        for u in cfg
            .updaters
            .iter()
            .filter(|u| u.is_streaming() && **u != UpdaterKind::Frozen)
        {
            match time_updater(
                *u,
                &net,
                &cfg.ssm,
                cfg.latency.warmup,
                cfg.latency.updates,
                cfg.seed,
                cfg.cap_bytes(),
            ) {
                Ok(row) => table.rows.push(row),
                Err(Error::Capability(reason)) => table.refused.push(Refusal {
                    updater: u.label(),
                    p: net.num_params(),
                    reason,
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(table)
}
