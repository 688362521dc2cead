//! `modrx`: run experiments, sweeps, latency timing and the self-test suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modrx_core::harness::{
    emit_csv, measure_latency, preset_names, run_experiment, selftest, summarize, ChannelChoice,
    ExperimentConfig, Report, RunRecord,
};
use modrx_core::{Error, UpdaterKind};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "modrx",
    version,
    about = "Online Bayesian adaptation of modular receivers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled scenario instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Directory for the CSV output.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV files.
    Run(Common),
    /// Run over an SNR and/or learning-rate grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// SNR points in dB (replaces the config grid).
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        /// Learning rates applied to every gradient-based updater.
        #[arg(long, value_delimiter = ',')]
        lr: Vec<f64>,
    },
    /// Time single-sample updates of every streaming updater.
    Latency(Common),
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List bundled presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "give --config <file> or --preset <name>".into(),
            ))
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_lr(kind: UpdaterKind, lr: f64) -> Option<UpdaterKind> {
    match kind {
        UpdaterKind::Bbb { iters, .. } => Some(UpdaterKind::Bbb { iters, lr }),
        UpdaterKind::Gd { iters, .. } => Some(UpdaterKind::Gd { iters, lr }),
        UpdaterKind::Sgd { epochs, batch, .. } => Some(UpdaterKind::Sgd { epochs, batch, lr }),
        _ => None,
    }
}

fn print_summary(report: &Report) {
    for row in &report.ber_vs_snr {
        println!(
            "{:<24} snr {:>6.2} dB  ber {:.5} (std {:.5})",
            row.updater, row.snr_db, row.ber_mean, row.ber_std
        );
    }
}

fn write(cfg: &ExperimentConfig, records: &[RunRecord], common: &Common) -> Result<(), Error> {
    let report = summarize(records, cfg.scenario.channel == ChannelChoice::Rotation);
    let paths = emit_csv(&report, &common.out_dir)?;
    print_summary(&report);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let records = run_experiment(&cfg)?;
            write(&cfg, &records, &common)?;
        }
        Command::Sweep { common, snr, lr } => {
            let mut cfg = load(&common)?;
            if !snr.is_empty() {
                cfg.scenario.snr_db = snr;
                cfg.scenario.noise_var = None;
            }
            let mut records = Vec::new();
            if lr.is_empty() {
                records = run_experiment(&cfg)?;
            } else {
                let base: Vec<UpdaterKind> = cfg.updaters.clone();
                if base.iter().all(|u| with_lr(*u, 0.0).is_none()) {
                    return Err(Error::Config(
                        "--lr given but no updater has a learning rate".into(),
                    ));
                }
                // updaters without a learning rate run once, with the references
                let fixed: Vec<UpdaterKind> = base
                    .iter()
                    .copied()
                    .filter(|u| with_lr(*u, 0.0).is_none())
                    .collect();
                if !fixed.is_empty() || cfg.references {
                    let mut c = cfg.clone();
                    c.updaters = fixed;
                    if c.updaters.is_empty() {
                        c.updaters.push(UpdaterKind::Frozen);
                    }
                    records.extend(run_experiment(&c)?);
                }
                for &rate in &lr {
                    let mut c = cfg.clone();
                    c.updaters = base.iter().filter_map(|u| with_lr(*u, rate)).collect();
                    c.references = false;
                    for mut r in run_experiment(&c)? {
                        r.updater = format!("{}@lr={rate}", r.updater);
                        records.push(r);
                    }
                }
            }
            write(&cfg, &records, &common)?;
        }
        Command::Latency(common) => {
            let cfg = load(&common)?;
            let table = measure_latency(&cfg)?;
            for row in &table.rows {
                println!(
                    "{:<16} {:<6} P={:<7} mean {:>10.2} us  p95 {:>10.2} us",
                    row.updater, row.repr, row.p, row.mean_us, row.p95_us
                );
            }
            for r in &table.refused {
                println!("{:<16} P={:<7} refused: {}", r.updater, r.p, r.reason);
            }
            let report = Report {
                latency: table.rows,
                ..Report::default()
            };
            let paths = emit_csv(&report, &common.out_dir)?;
            println!("wrote {}", paths[2].display());
        }
        Command::Selftest { seed } => {
            let checks = selftest::run_selftest(seed);
            let mut ok = true;
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            return Ok(ok);
        }
        Command::Presets { name } => match name {
            Some(n) => print!("{}", ExperimentConfig::preset(&n)?.to_toml_string()?),
            None => {
                for n in preset_names() {
                    println!("{n}");
                }
            }
        },
    }
    Ok(true)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Validation(_) => "validation",
        Error::Dimension { .. } => "dimension",
        Error::Numerical { .. } => "numerical",
        Error::Capability(_) => "capability",
        Error::Contract(_) => "contract",
        Error::Parse(_) => "parse",
        Error::Io { .. } => "io",
        Error::Csv { .. } => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let messages = match &e {
                Error::Validation(v) => v.clone(),
                other => vec![other.to_string()],
            };
            let summary = json!({
                "status": "error",
                "kind": error_kind(&e),
                "messages": messages,
            });
            eprintln!("{summary}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Validation(_) | Error::Parse(_) => 2,
                _ => 1,
            })
        }
    }
}
