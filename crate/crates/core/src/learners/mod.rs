//! Online update rules behind a common updater contract.
//!
//! Bayesian rules (`CmEkf`, `VdEkf`, `LoFi`, `BongEf`, `Bbb`) carry a
//! [`GaussianBelief`] and run the predict step before every update; the
//! frequentist baselines (`Gd`, `Sgd`) carry a point estimate.

mod bong;
mod gradient;
mod kalman;

pub use bong::{antithetic_samples, bong_ef_update, bong_ef_update_with_samples};
pub use gradient::{bbb_online_update, gd_online_update, sgd_batch_update, Sample};
pub use kalman::{bong_linearized_update, cmekf_update, lofi_update, vdekf_update, KalmanWork};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{CovKind, GaussianBelief, SsmHyper};
use crate::error::{Error, Result};
use crate::network::{FlatParams, MlpSpec};

fn default_samples() -> usize {
    10
}

fn default_lr() -> f64 {
    1e-2
}

fn default_full() -> CovKind {
    CovKind::Full
}

/// Update rule and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UpdaterKind {
    /// No adaptation; weights stay at their initialisation.
    Frozen,
    CmEkf,
    VdEkf,
    LoFi {
        rank: usize,
    },
    BongEf {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_full")]
        rank: CovKind,
    },
    Bbb {
        iters: usize,
        #[serde(default = "default_lr")]
        lr: f64,
    },
    Gd {
        iters: usize,
        #[serde(default = "default_lr")]
        lr: f64,
    },
    Sgd {
        epochs: usize,
        batch: usize,
        #[serde(default = "default_lr")]
        lr: f64,
    },
}

/// Parameters a module carries for its updater.
#[derive(Debug, Clone, PartialEq)]
pub enum ModuleParams {
    Belief(GaussianBelief),
    Point(DVector<f64>),
}

impl ModuleParams {
    /// Weights used at inference: the posterior mean for beliefs.
    pub fn weights(&self) -> &DVector<f64> {
        match self {
            ModuleParams::Belief(b) => &b.mean,
            ModuleParams::Point(t) => t,
        }
    }

    pub fn belief(&self) -> Option<&GaussianBelief> {
        match self {
            ModuleParams::Belief(b) => Some(b),
            ModuleParams::Point(_) => None,
        }
    }
}

/// Default ceiling on dense covariance storage (bytes).
pub const DEFAULT_FULL_COV_CAP_BYTES: u64 = 1 << 30;

impl UpdaterKind {
    /// Short label used in reports, e.g. `lo-fi-10` or `sgd-8-4`.
    pub fn label(&self) -> String {
        match *self {
            UpdaterKind::Frozen => "frozen".into(),
            UpdaterKind::CmEkf => "cm-ekf".into(),
            UpdaterKind::VdEkf => "vd-ekf".into(),
            UpdaterKind::LoFi { rank } => format!("lo-fi-{rank}"),
            UpdaterKind::BongEf { rank, .. } => match rank {
                CovKind::Full => "bong-ef-full".into(),
                CovKind::Diag => "bong-ef-diag".into(),
                CovKind::Dlr(r) => format!("bong-ef-dlr{r}"),
            },
            UpdaterKind::Bbb { iters, .. } => format!("bbb-diag-{iters}"),
            UpdaterKind::Gd { iters, .. } => format!("gd-{iters}"),
            UpdaterKind::Sgd { epochs, batch, .. } => format!("sgd-{epochs}-{batch}"),
        }
    }

    /// Everything but SGD consumes one sample at a time.
    pub fn is_streaming(&self) -> bool {
        !matches!(self, UpdaterKind::Sgd { .. })
    }

    pub fn is_bayesian(&self) -> bool {
        self.cov_kind().is_some()
    }

    /// Covariance representation of the belief, if any.
    pub fn cov_kind(&self) -> Option<CovKind> {
        match *self {
            UpdaterKind::CmEkf => Some(CovKind::Full),
            UpdaterKind::VdEkf | UpdaterKind::Bbb { .. } => Some(CovKind::Diag),
            UpdaterKind::LoFi { rank } => Some(CovKind::Dlr(rank)),
            UpdaterKind::BongEf { rank, .. } => Some(rank),
            UpdaterKind::Frozen | UpdaterKind::Gd { .. } | UpdaterKind::Sgd { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let label = self.label();
        match *self {
            UpdaterKind::LoFi { rank: 0 } => issues.push(format!(
                "{label}: Lo-Fi rank must be positive (use vd-ekf for 0)"
            )),
            UpdaterKind::BongEf { samples, rank } => {
                if samples == 0 {
                    issues.push(format!("{label}: samples must be positive"));
                }
                if rank == CovKind::Dlr(0) {
                    issues.push(format!("{label}: DLR rank must be positive"));
                }
            }
            UpdaterKind::Bbb { iters, lr } | UpdaterKind::Gd { iters, lr } => {
                if iters == 0 {
                    issues.push(format!("{label}: iters must be positive"));
                }
                if !(lr >= 0.0 && lr.is_finite()) {
                    issues.push(format!("{label}: lr must be a non-negative number"));
                }
            }
            UpdaterKind::Sgd { epochs, batch, lr } => {
                if epochs == 0 || batch == 0 {
                    issues.push(format!("{label}: epochs and batch must be positive"));
                }
                if !(lr >= 0.0 && lr.is_finite()) {
                    issues.push(format!("{label}: lr must be a non-negative number"));
                }
            }
            _ => {}
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Refuses dense covariances whose storage would exceed `cap_bytes`.
    pub fn check_capability(&self, num_params: usize, cap_bytes: u64) -> Result<()> {
        if self.cov_kind() == Some(CovKind::Full) {
            let bytes = (num_params as u64)
                .saturating_mul(num_params as u64)
                .saturating_mul(8);
            if bytes > cap_bytes {
                return Err(Error::Capability(format!(
                    "{} needs a dense {num_params}x{num_params} covariance ({:.1} GiB) \
                     above the {:.1} GiB cap",
                    self.label(),
                    bytes as f64 / (1u64 << 30) as f64,
                    cap_bytes as f64 / (1u64 << 30) as f64
                )));
            }
        }
        if let Some(CovKind::Dlr(r)) = self.cov_kind() {
            if r >= num_params {
                return Err(Error::Capability(format!(
                    "{}: rank {r} is not below the parameter count {num_params}",
                    self.label()
                )));
            }
        }
        Ok(())
    }

    /// Initial module parameters around `init` with prior variance from `hyper`.
    pub fn init_params(
        &self,
        init: FlatParams,
        hyper: &SsmHyper,
        cap_bytes: u64,
    ) -> Result<ModuleParams> {
        self.check_capability(init.0.len(), cap_bytes)?;
        Ok(match self.cov_kind() {
            Some(kind) => {
                ModuleParams::Belief(GaussianBelief::prior(init.0, hyper.prior_var, kind))
            }
            None => ModuleParams::Point(init.0),
        })
    }

    /// Single-sample update: predict then update for beliefs, `iters` GD
    /// steps for point estimates. SGD is batch-only and refuses.
    pub fn step<R: Rng + ?Sized>(
        &self,
        params: &mut ModuleParams,
        net: &MlpSpec,
        x: &[f64],
        bits: &[f64],
        hyper: &SsmHyper,
        rng: &mut R,
    ) -> Result<()> {
        match (self, params) {
            (UpdaterKind::Frozen, _) => Ok(()),
            (UpdaterKind::Gd { iters, lr }, ModuleParams::Point(theta)) => {
                gd_online_update(theta, net, x, bits, *iters, *lr)
            }
            (UpdaterKind::Sgd { .. }, _) => Err(Error::Contract(
                "SGD trains on snapshot buffers, not single samples".into(),
            )),
            (kind, ModuleParams::Belief(belief)) if kind.is_bayesian() => {
                belief.predict(hyper)?;
                self.update(belief, net, x, bits, hyper, rng)
            }
            (kind, _) => Err(Error::Contract(format!(
                "{} got parameters of the wrong kind",
                kind.label()
            ))),
        }
    }

    /// Update step alone on a predicted belief.
    pub fn update<R: Rng + ?Sized>(
        &self,
        belief: &mut GaussianBelief,
        net: &MlpSpec,
        x: &[f64],
        bits: &[f64],
        hyper: &SsmHyper,
        rng: &mut R,
    ) -> Result<()> {
        let floor = hyper.obs_floor;
        match *self {
            UpdaterKind::CmEkf => {
                let work = KalmanWork::linearize(net, &belief.mean, x, floor)?;
                cmekf_update(belief, &work, bits)
            }
            UpdaterKind::VdEkf => {
                let work = KalmanWork::linearize(net, &belief.mean, x, floor)?;
                vdekf_update(belief, &work, bits)
            }
            UpdaterKind::LoFi { .. } => {
                let work = KalmanWork::linearize(net, &belief.mean, x, floor)?;
                lofi_update(belief, &work, bits)
            }
            UpdaterKind::BongEf { samples, .. } => {
                bong_ef_update(belief, net, x, bits, samples, rng)
            }
            UpdaterKind::Bbb { iters, lr } => {
                bbb_online_update(belief, net, x, bits, iters, lr, floor)
            }
            _ => Err(Error::Contract(format!(
                "{} has no belief update",
                self.label()
            ))),
        }
    }
}
