//! Experiment orchestration: config files, trial runs with common random
//! numbers across updaters, latency timing and CSV output.

mod config;
mod latency;
mod report;
mod run;
pub mod selftest;

pub use config::{
    preset_names, Architecture, ChannelChoice, ExperimentConfig, LatencyConfig, NoisePoint,
    ReceiverConfig, ScenarioConfig, SCHEMA_VERSION,
};
pub use latency::{measure_latency, repr_label, time_updater, LatencyTable, Refusal};
pub use report::{
    emit_csv, read_report, summarize, BerVsSnrRow, BerVsTimeRow, LatencyRow, Report,
    SerRotationRow, BER_VS_SNR, BER_VS_TIME, LATENCY, SER_ROTATION,
};
pub use run::{
    generate_transmission, init_seed, latency_stats, reference_labels, run_experiment, run_learned,
    run_map, run_mmse, run_nlms, stream_rng, worker_override, ReceiverInstance, RunRecord,
    Transmission, TrialOutcome, WORKERS_ENV,
};
