use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::SsmHyper;
use crate::channel::{noise_var_for_snr, ChannelKind, Constellation, TransmissionSchedule};
use crate::error::{Error, Result};
use crate::learners::UpdaterKind;
use crate::network::MlpSpec;
use crate::receiver::Topology;

/// Config format version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

const PRESETS: &[(&str, &str)] = &[
    ("rotation", include_str!("../../presets/rotation.toml")),
    (
        "mimo-linear",
        include_str!("../../presets/mimo-linear.toml"),
    ),
    (
        "mimo-nonlinear",
        include_str!("../../presets/mimo-nonlinear.toml"),
    ),
    (
        "mimo-sparse-pilots",
        include_str!("../../presets/mimo-sparse-pilots.toml"),
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelChoice {
    Rotation,
    LinearMimo,
    TanhMimo,
}

fn default_constellation() -> String {
    "qpsk".into()
}
fn default_alpha() -> f64 {
    2.5e-4
}
fn default_rho() -> f64 {
    0.995
}
fn default_one() -> f64 {
    1.0
}
fn default_layers() -> usize {
    3
}
fn default_cap_mib() -> u64 {
    1024
}
fn default_warmup() -> usize {
    100
}
fn default_updates() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub channel: ChannelChoice,
    pub users: usize,
    pub antennas: usize,
    #[serde(default = "default_constellation")]
    pub constellation: String,
    /// SNR grid in dB; alternatively a single fixed `noise_var`.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_one")]
    pub tanh_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    #[default]
    Deepsic,
    Monolithic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    #[serde(default)]
    pub architecture: Architecture,
    /// DeepSIC iterations `Q` (ignored by the monolithic receiver).
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_one")]
    pub init_scale: f64,
    /// Run the per-layer module updates on a thread pool.
    #[serde(default)]
    pub parallel: bool,
    /// Also apply the predict step on data symbols.
    #[serde(default)]
    pub decay_on_data: bool,
    /// Largest dense covariance a module may hold, in MiB.
    #[serde(default = "default_cap_mib")]
    pub full_cov_cap_mib: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_updates")]
    pub updates: usize,
    /// Hidden-width lists to time; empty means the receiver's own.
    #[serde(default)]
    pub hidden: Vec<Vec<usize>>,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            warmup: default_warmup(),
            updates: default_updates(),
            hidden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub trials: usize,
    pub scenario: ScenarioConfig,
    pub schedule: TransmissionSchedule,
    pub receiver: ReceiverConfig,
    #[serde(default)]
    pub ssm: SsmHyper,
    /// Add the model-based references (MAP/NLMS or MMSE) to the results.
    #[serde(default = "default_true")]
    pub references: bool,
    #[serde(default)]
    pub latency: LatencyConfig,
    pub updaters: Vec<UpdaterKind>,
}

fn default_true() -> bool {
    true
}

/// One operating point: its SNR label and noise variance per real dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePoint {
    pub snr_db: f64,
    pub noise_var: f64,
}

impl ExperimentConfig {
    /// Parses and validates a config. Every problem is reported at once.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Bundled scenario by name.
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {name:?}; available: {}",
                    preset_names().join(", ")
                ))
            })?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::by_name(&self.scenario.constellation)
    }

    pub fn noise_points(&self) -> Vec<NoisePoint> {
        let users = self.scenario.users;
        if self.scenario.snr_db.is_empty() {
            let nv = self.scenario.noise_var.unwrap_or(0.0);
            let snr_db = 10.0 * ((users as f64 / 2.0) / nv).log10();
            vec![NoisePoint {
                snr_db,
                noise_var: nv,
            }]
        } else {
            self.scenario
                .snr_db
                .iter()
                .map(|&snr_db| NoisePoint {
                    snr_db,
                    noise_var: noise_var_for_snr(snr_db, users),
                })
                .collect()
        }
    }

    pub fn channel_kind(&self, noise_var: f64) -> ChannelKind {
        let s = &self.scenario;
        match s.channel {
            ChannelChoice::Rotation => ChannelKind::Rotation {
                alpha: s.alpha,
                noise_var,
            },
            ChannelChoice::LinearMimo => ChannelKind::LinearMimo {
                rho: s.rho,
                noise_var,
            },
            ChannelChoice::TanhMimo => ChannelKind::TanhMimo {
                rho: s.rho,
                noise_var,
                scale: s.tanh_scale,
            },
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.constellation()
            .map(|c| c.bits_per_symbol())
            .unwrap_or(0)
    }

    pub fn topology(&self) -> Topology {
        Topology {
            users: self.scenario.users,
            antennas: self.scenario.antennas,
            bits_per_symbol: self.bits_per_symbol(),
            layers: self.receiver.layers,
            hidden: self.receiver.hidden.clone(),
        }
    }

    /// Network trained by each updater (a DeepSIC module or the whole receiver).
    pub fn module_spec_with(&self, hidden: &[usize]) -> Result<MlpSpec> {
        let b = self.bits_per_symbol();
        let k = self.scenario.users;
        let n = self.scenario.antennas;
        match self.receiver.architecture {
            Architecture::Deepsic => MlpSpec::with_hidden(2 * n + k * b, hidden, b),
            Architecture::Monolithic => MlpSpec::with_hidden(2 * n, hidden, k * b),
        }
    }

    pub fn module_spec(&self) -> Result<MlpSpec> {
        self.module_spec_with(&self.receiver.hidden)
    }

    pub fn cap_bytes(&self) -> u64 {
        self.receiver.full_cov_cap_mib.saturating_mul(1 << 20)
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.schema != SCHEMA_VERSION {
            issues.push(format!(
                "schema: expected {SCHEMA_VERSION}, got {}",
                self.schema
            ));
        }
        if self.trials == 0 {
            issues.push("trials: must be at least 1".into());
        }
        let s = &self.scenario;
        if s.users == 0 || s.antennas == 0 {
            issues.push("scenario: users and antennas must be positive".into());
        }
        if let Err(e) = Constellation::by_name(&s.constellation) {
            issues.push(format!("scenario.constellation: {e}"));
        }
        if s.channel == ChannelChoice::Rotation && (s.users != 1 || s.antennas != 1) {
            issues.push("scenario: the rotation channel needs users = 1 and antennas = 1".into());
        }
        match (s.snr_db.is_empty(), s.noise_var) {
            (true, None) => issues.push("scenario: give either snr_db or noise_var".into()),
            (false, Some(_)) => {
                issues.push("scenario: snr_db and noise_var are mutually exclusive".into())
            }
            (true, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                issues.push(format!("scenario.noise_var: must be positive, got {v}"))
            }
            _ => {}
        }
        if s.snr_db.iter().any(|v| !v.is_finite()) {
            issues.push("scenario.snr_db: values must be finite".into());
        }
        if !(0.0..=1.0).contains(&s.rho) {
            issues.push(format!("scenario.rho: must lie in [0, 1], got {}", s.rho));
        }
        if !(s.tanh_scale > 0.0 && s.tanh_scale.is_finite()) {
            issues.push(format!(
                "scenario.tanh_scale: must be positive, got {}",
                s.tanh_scale
            ));
        }
        if !s.alpha.is_finite() {
            issues.push("scenario.alpha: must be finite".into());
        }
        if let Err(e) = self.schedule.validate() {
            issues.push(format!("schedule: {e}"));
        }
        let r = &self.receiver;
        if r.layers == 0 {
            issues.push("receiver.layers: must be at least 1".into());
        }
        if r.hidden.contains(&0) {
            issues.push("receiver.hidden: widths must be positive".into());
        }
        if !(r.init_scale >= 0.0 && r.init_scale.is_finite()) {
            issues.push("receiver.init_scale: must be non-negative".into());
        }
        if let Err(Error::Validation(v)) = self.ssm.validate() {
            issues.extend(v.into_iter().map(|m| format!("ssm: {m}")));
        }
        if self.updaters.is_empty() {
            issues.push("updaters: at least one is required".into());
        }
        let mut seen = BTreeSet::new();
        let spec = self.module_spec().ok();
        for u in &self.updaters {
            let label = u.label();
            if !seen.insert(label.clone()) {
                issues.push(format!("updaters: duplicate entry {label}"));
            }
            match u.validate() {
                Err(Error::Validation(v)) => issues.extend(v),
                Err(e) => issues.push(e.to_string()),
                Ok(()) => {}
            }
            if let Some(net) = &spec {
                if let Err(e) = u.check_capability(net.num_params(), self.cap_bytes()) {
                    issues.push(e.to_string());
                }
            }
        }
        if self.latency.updates == 0 {
            issues.push("latency.updates: must be positive".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
