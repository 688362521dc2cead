//! Single-step online Bayesian adaptation of modular deep receivers.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] synthesises bits, symbols and time-varying channel outputs.
//! * [`network`] holds the compact feed-forward modules and their exact Jacobians.
//! * [`belief`] holds Gaussian posteriors over module weights and the shared predict step.
//! * [`learners`] implements the single-step Kalman/natural-gradient rules and the
//!   iterative gradient baselines.
//! * [`receiver`] composes modules into DeepSIC (with the pipelined streaming schedule)
//!   and a monolithic network.
//! * [`baselines`] has the model-based references (MAP, NLMS, MMSE).
//! * [`harness`] drives experiments from a config file and writes CSV.

pub mod baselines;
pub mod belief;
pub mod channel;
mod error;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod network;
pub mod receiver;

pub use belief::{Covariance, GaussianBelief, SsmHyper};
pub use channel::{ChannelKind, ChannelProcess, Constellation, Role, TransmissionSchedule};
pub use error::{Error, Result};
pub use learners::{ModuleParams, UpdaterKind};
pub use network::{FlatParams, MlpSpec};
pub use receiver::{DeepSic, Monolithic, PipelineState};
