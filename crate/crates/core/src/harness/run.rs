use std::collections::BTreeMap;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Architecture, ChannelChoice, ExperimentConfig, NoisePoint};
use crate::baselines::{map_decode, mmse_detect, NlmsState};
use crate::channel::{modulate, BitBlock, ChannelProcess, Constellation, Role, Slot, C64};
use crate::error::{Error, Result};
use crate::learners::{Sample, UpdaterKind};
use crate::receiver::{hard_decide, DeepSic, Incoming, Monolithic, PipelineState};

/// Environment variable overriding the worker count of [`run_experiment`].
pub const WORKERS_ENV: &str = "MODRX_WORKERS";

/// Metrics of one tracking block for one updater, trial and SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub updater: String,
    pub trial: usize,
    pub snr_db: f64,
    pub block: usize,
    pub ber: f64,
    pub ser: f64,
    pub bit_errors: usize,
    pub data_bits: usize,
    pub symbol_errors: usize,
    pub symbols: usize,
    /// Pilots received up to the end of this block, sync included.
    pub pilots_seen: usize,
    /// Wall time per pilot update in this block (zero for references).
    pub update_us_mean: f64,
    pub update_us_p95: f64,
}

/// The symbols of one trial at one noise level, shared by every updater.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub slots: Vec<Slot>,
    pub labels: Vec<Vec<u8>>,
    pub symbols: Vec<Vec<C64>>,
    pub received: Vec<Vec<f64>>,
    pub channel: ChannelProcess,
    pub point: NoisePoint,
}

impl Transmission {
    pub fn bits_f64(&self, t: usize) -> Vec<f64> {
        self.labels[t].iter().map(|&b| f64::from(b)).collect()
    }
}

const PURPOSE_CHANNEL: u64 = 0;
const PURPOSE_BITS: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_INIT: u64 = 3;

/// Independent stream per `(trial, purpose)` under the experiment seed.
pub fn stream_rng(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 8) | purpose);
    rng
}

/// Seed of the receiver weights for a trial; identical for every updater.
pub fn init_seed(seed: u64, trial: usize) -> u64 {
    stream_rng(seed, trial, PURPOSE_INIT).next_u64()
}

/// Channel, bits and noise for one trial. The noise draws are shared across
/// noise levels (only their scale changes).
pub fn generate_transmission(
    cfg: &ExperimentConfig,
    trial: usize,
    point: NoisePoint,
) -> Result<Transmission> {
    let c = cfg.constellation()?;
    let k = cfg.scenario.users;
    let channel_seed = stream_rng(cfg.seed, trial, PURPOSE_CHANNEL).next_u64();
    let channel = ChannelProcess::new(
        cfg.channel_kind(point.noise_var),
        k,
        cfg.scenario.antennas,
        channel_seed,
        cfg.schedule.n_snapshots(),
    )?;
    let mut bits_rng = stream_rng(cfg.seed, trial, PURPOSE_BITS);
    let mut noise_rng = stream_rng(cfg.seed, trial, PURPOSE_NOISE);
    let slots: Vec<Slot> = cfg.schedule.iter().collect();
    let mut labels = Vec::with_capacity(slots.len());
    let mut symbols = Vec::with_capacity(slots.len());
    let mut received = Vec::with_capacity(slots.len());
    for slot in &slots {
        let block = BitBlock::random(k, c.bits_per_symbol(), &mut bits_rng);
        let s = modulate(&block, &c)?;
        received.push(channel.transmit(slot.snapshot, &s, Some(&mut noise_rng))?);
        labels.push(block.bits);
        symbols.push(s);
    }
    Ok(Transmission {
        slots,
        labels,
        symbols,
        received,
        channel,
        point,
    })
}

/// A learned receiver of either architecture.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ReceiverInstance {
    DeepSic(DeepSic),
    Monolithic(Monolithic),
}

impl ReceiverInstance {
    pub fn build(cfg: &ExperimentConfig, updater: UpdaterKind, seed: u64) -> Result<Self> {
        let rc = &cfg.receiver;
        Ok(match rc.architecture {
            Architecture::Deepsic => ReceiverInstance::DeepSic(
                DeepSic::new(
                    cfg.topology(),
                    updater,
                    cfg.ssm,
                    rc.init_scale,
                    seed,
                    cfg.cap_bytes(),
                )?
                .with_parallel(rc.parallel)
                .with_decay_on_data(rc.decay_on_data),
            ),
            Architecture::Monolithic => ReceiverInstance::Monolithic(Monolithic::new(
                cfg.scenario.users,
                cfg.scenario.antennas,
                cfg.bits_per_symbol(),
                &rc.hidden,
                updater,
                cfg.ssm,
                rc.init_scale,
                seed,
                cfg.cap_bytes(),
            )?),
        })
    }

    pub fn soft(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            ReceiverInstance::DeepSic(rx) => rx.forward(r),
            ReceiverInstance::Monolithic(rx) => rx.forward(r),
        }
    }

    fn train_sgd(&mut self, pilots: &[Sample]) -> Result<()> {
        match self {
            ReceiverInstance::DeepSic(rx) => rx.train_sgd(pilots),
            ReceiverInstance::Monolithic(rx) => rx.train_sgd(pilots),
        }
    }
}

#[derive(Debug, Default, Clone)]
struct BlockTally {
    bit_errors: usize,
    bits: usize,
    symbol_errors: usize,
    symbols: usize,
    latency_us: Vec<f64>,
}

struct Scorer<'a> {
    tx: &'a Transmission,
    users: usize,
    bits_per_symbol: usize,
    blocks: Vec<BlockTally>,
}

impl<'a> Scorer<'a> {
    fn new(tx: &'a Transmission, cfg: &ExperimentConfig) -> Self {
        Self {
            tx,
            users: cfg.scenario.users,
            bits_per_symbol: cfg.bits_per_symbol(),
            blocks: vec![BlockTally::default(); cfg.schedule.n_blocks],
        }
    }

    fn score_bits(&mut self, t: usize, decided: &[u8]) {
        let slot = self.tx.slots[t];
        if slot.role != Role::Data {
            return;
        }
        let Some(b) = slot.block else { return };
        let truth = &self.tx.labels[t];
        let tally = &mut self.blocks[b];
        let bps = self.bits_per_symbol;
        for k in 0..self.users {
            let wrong = (0..bps)
                .filter(|&i| decided[k * bps + i] != truth[k * bps + i])
                .count();
            tally.bit_errors += wrong;
            tally.symbol_errors += usize::from(wrong > 0);
        }
        tally.bits += self.users * bps;
        tally.symbols += self.users;
    }

    fn score_soft(&mut self, t: usize, soft: &[f64]) {
        self.score_bits(t, &hard_decide(soft));
    }

    fn score_indices(&mut self, t: usize, idx: &[usize], c: &Constellation) {
        let bits: Vec<u8> = idx.iter().flat_map(|&i| c.label(i).to_vec()).collect();
        self.score_bits(t, &bits);
    }

    fn latency(&mut self, t: usize, us: f64) {
        if let Some(b) = self.tx.slots[t].block {
            self.blocks[b].latency_us.push(us);
        }
    }

    fn finish(self, label: &str, trial: usize, cfg: &ExperimentConfig) -> Vec<RunRecord> {
        let sched = &cfg.schedule;
        let snr_db = self.tx.point.snr_db;
        self.blocks
            .into_iter()
            .enumerate()
            .map(|(block, mut tally)| {
                let (mean, p95) = latency_stats(&mut tally.latency_us);
                RunRecord {
                    updater: label.to_string(),
                    trial,
                    snr_db,
                    block,
                    ber: ratio(tally.bit_errors, tally.bits),
                    ser: ratio(tally.symbol_errors, tally.symbols),
                    bit_errors: tally.bit_errors,
                    data_bits: tally.bits,
                    symbol_errors: tally.symbol_errors,
                    symbols: tally.symbols,
                    pilots_seen: sched.t_sync + (block + 1) * sched.pilots_per_block,
                    update_us_mean: mean,
                    update_us_p95: p95,
                }
            })
            .collect()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean and 95th percentile (nearest rank); sorts `v` in place.
pub fn latency_stats(v: &mut [f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    (mean, v[rank - 1])
}

/// Output of one learned receiver on one transmission.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub records: Vec<RunRecord>,
    pub receiver: ReceiverInstance,
}

/// Runs one updater over a transmission. Streaming updaters learn from each
/// pilot as it arrives (DeepSIC through the pipeline); SGD trains once per
/// snapshot on the buffered pilots of that snapshot.
pub fn run_learned(
    cfg: &ExperimentConfig,
    updater: UpdaterKind,
    tx: &Transmission,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut rx = ReceiverInstance::build(cfg, updater, init_seed(cfg.seed, trial))?;
    let mut scorer = Scorer::new(tx, cfg);
    if updater.is_streaming() {
        match &mut rx {
            ReceiverInstance::DeepSic(ds) => {
                let mut pipe = PipelineState::new();
                for slot in &tx.slots {
                    let t = slot.t;
                    let pilot = slot.role.is_pilot();
                    let inc = Incoming {
                        t,
                        r: tx.received[t].clone(),
                        role: slot.role,
                        bits: pilot.then(|| tx.bits_f64(t)),
                    };
                    let start = Instant::now();
                    let out = ds.pipelined_step(&mut pipe, Some(inc))?;
                    if pilot && updater != UpdaterKind::Frozen {
                        scorer.latency(t, start.elapsed().as_secs_f64() * 1e6);
                    }
                    if let Some(e) = out {
                        scorer.score_soft(e.t, &e.soft);
                    }
                }
                for e in ds.flush(&mut pipe)? {
                    scorer.score_soft(e.t, &e.soft);
                }
            }
            ReceiverInstance::Monolithic(m) => {
                for slot in &tx.slots {
                    let t = slot.t;
                    let r = &tx.received[t];
                    if slot.role.is_pilot() {
                        let start = Instant::now();
                        m.update(r, &tx.bits_f64(t))?;
                        if updater != UpdaterKind::Frozen {
                            scorer.latency(t, start.elapsed().as_secs_f64() * 1e6);
                        }
                    } else {
                        if cfg.receiver.decay_on_data {
                            m.decay()?;
                        }
                        scorer.score_soft(t, &m.forward(r)?);
                    }
                }
            }
        }
    } else {
        let mut buffer: Vec<Sample> = Vec::new();
        let mut buffer_slot: Option<Slot> = None;
        for slot in &tx.slots {
            let t = slot.t;
            if let Some(last) = buffer_slot {
                if slot.role == Role::Data || slot.snapshot != last.snapshot {
                    let start = Instant::now();
                    rx.train_sgd(&buffer)?;
                    let per = start.elapsed().as_secs_f64() * 1e6 / buffer.len() as f64;
                    scorer.latency(last.t, per);
                    buffer.clear();
                    buffer_slot = None;
                }
            }
            if slot.role.is_pilot() {
                buffer.push((tx.received[t].clone(), tx.bits_f64(t)));
                buffer_slot = Some(*slot);
            } else {
                scorer.score_soft(t, &rx.soft(&tx.received[t])?);
            }
        }
    }
    Ok(TrialOutcome {
        records: scorer.finish(&updater.label(), trial, cfg),
        receiver: rx,
    })
}

/// MAP decoding with the true rotation angle.
pub fn run_map(cfg: &ExperimentConfig, tx: &Transmission, trial: usize) -> Result<Vec<RunRecord>> {
    let c = cfg.constellation()?;
    let mut scorer = Scorer::new(tx, cfg);
    for slot in tx.slots.iter().filter(|s| s.role == Role::Data) {
        let phi = tx
            .channel
            .angle_at(slot.snapshot)
            .ok_or_else(|| Error::Config("MAP reference needs the rotation channel".into()))?;
        let r = &tx.received[slot.t];
        let i = map_decode([r[0], r[1]], phi, &c, tx.point.noise_var);
        scorer.score_indices(slot.t, &[i], &c);
    }
    Ok(scorer.finish("map", trial, cfg))
}

/// NLMS tracking on every pilot, minimum-distance decoding on data.
pub fn run_nlms(
    cfg: &ExperimentConfig,
    tx: &Transmission,
    trial: usize,
    state: NlmsState,
) -> Result<Vec<RunRecord>> {
    let c = cfg.constellation()?;
    if cfg.scenario.channel != ChannelChoice::Rotation {
        return Err(Error::Config(
            "NLMS reference needs the rotation channel".into(),
        ));
    }
    let mut st = state;
    let mut scorer = Scorer::new(tx, cfg);
    for slot in &tx.slots {
        let r = &tx.received[slot.t];
        let r = [r[0], r[1]];
        if slot.role.is_pilot() {
            let s = tx.symbols[slot.t][0];
            st.step([s.re, s.im], r);
        } else {
            let i = st.decode(r, &c);
            scorer.score_indices(slot.t, &[i], &c);
        }
    }
    Ok(scorer.finish("nlms", trial, cfg))
}

/// Linear MMSE with the true channel matrix of each snapshot.
pub fn run_mmse(cfg: &ExperimentConfig, tx: &Transmission, trial: usize) -> Result<Vec<RunRecord>> {
    let c = cfg.constellation()?;
    let mut scorer = Scorer::new(tx, cfg);
    let mut h_cache: BTreeMap<usize, _> = BTreeMap::new();
    for slot in tx.slots.iter().filter(|s| s.role == Role::Data) {
        let h = h_cache
            .entry(slot.snapshot)
            .or_insert_with(|| tx.channel.matrix_at(slot.snapshot));
        let idx = mmse_detect(&tx.received[slot.t], h, tx.point.noise_var, &c)?;
        scorer.score_indices(slot.t, &idx, &c);
    }
    Ok(scorer.finish("mmse", trial, cfg))
}

/// Labels of the reference decoders that apply to this scenario.
pub fn reference_labels(cfg: &ExperimentConfig) -> Vec<&'static str> {
    if !cfg.references {
        return Vec::new();
    }
    match cfg.scenario.channel {
        ChannelChoice::Rotation => vec!["map", "nlms"],
        ChannelChoice::LinearMimo => vec!["mmse"],
        ChannelChoice::TanhMimo => Vec::new(),
    }
}

fn run_task(cfg: &ExperimentConfig, trial: usize, point: NoisePoint) -> Result<Vec<RunRecord>> {
    let tx = generate_transmission(cfg, trial, point)?;
    let mut out = Vec::new();
    for u in &cfg.updaters {
        out.extend(run_learned(cfg, *u, &tx, trial)?.records);
    }
    for r in reference_labels(cfg) {
        out.extend(match r {
            "map" => run_map(cfg, &tx, trial)?,
            "nlms" => run_nlms(cfg, &tx, trial, NlmsState::default())?,
            _ => run_mmse(cfg, &tx, trial)?,
        });
    }
    Ok(out)
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn worker_override() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Every `(trial, SNR)` task, run on a worker pool. Records are ordered by
/// updater (config order, then references), SNR, trial and block, so the
/// output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let points = cfg.noise_points();
    let tasks: Vec<(usize, usize)> = (0..cfg.trials)
        .flat_map(|trial| (0..points.len()).map(move |p| (trial, p)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_override() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<RunRecord>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(trial, p)| run_task(cfg, trial, points[p]))
            .collect()
    });
    let mut order: Vec<String> = cfg.updaters.iter().map(|u| u.label()).collect();
    order.extend(reference_labels(cfg).iter().map(|s| s.to_string()));
    let snr_rank = |snr: f64| {
        points
            .iter()
            .position(|p| p.snr_db.to_bits() == snr.to_bits())
            .unwrap_or(usize::MAX)
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by_key(|r| {
        (
            order
                .iter()
                .position(|l| *l == r.updater)
                .unwrap_or(usize::MAX),
            snr_rank(r.snr_db),
            r.trial,
            r.block,
        )
    });
    Ok(records)
}
