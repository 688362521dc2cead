//! Receivers built from [`MlpSpec`](crate::network::MlpSpec) modules.
//!
//! [`DeepSic`] is the `K x Q` lattice of per-user modules exchanging soft bit
//! estimates, with [`PipelineState`] staggering samples across its layers.
//! [`Monolithic`] maps the received vector to all bits with one network and
//! doubles as the single-user rotation-channel receiver.

mod deepsic;
mod monolithic;
mod pipeline;

pub use deepsic::{DeepSic, Topology};
pub use monolithic::Monolithic;
pub use pipeline::{pipelined_step, Emitted, Incoming, PipelineState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::belief::SsmHyper;
use crate::error::{check_dim, Result};
use crate::learners::{sgd_batch_update, ModuleParams, Sample, UpdaterKind};
use crate::network::MlpSpec;

/// `[r; l_prev]`, the input of every module in a layer.
pub fn assemble_input(r: &[f64], l_prev: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(r.len() + l_prev.len());
    x.extend_from_slice(r);
    x.extend_from_slice(l_prev);
    x
}

/// Same as [`assemble_input`] with explicit dimension checks.
pub fn assemble_input_checked(
    r: &[f64],
    l_prev: &[f64],
    antennas: usize,
    users: usize,
    bits_per_symbol: usize,
) -> Result<Vec<f64>> {
    check_dim("received vector", 2 * antennas, r.len())?;
    check_dim("soft estimates", users * bits_per_symbol, l_prev.len())?;
    Ok(assemble_input(r, l_prev))
}

/// Strict threshold at one half: `l > 0.5 -> 1`.
pub fn hard_decide(l: &[f64]) -> Vec<u8> {
    l.iter().map(|&v| u8::from(v > 0.5)).collect()
}

/// One trainable network with its own random stream.
#[derive(Debug, Clone)]
pub struct Module {
    pub params: ModuleParams,
    rng: ChaCha8Rng,
}

impl Module {
    pub(crate) fn new(params: ModuleParams, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { params, rng }
    }

    pub(crate) fn step(
        &mut self,
        updater: &UpdaterKind,
        net: &MlpSpec,
        x: &[f64],
        bits: &[f64],
        hyper: &SsmHyper,
    ) -> Result<()> {
        updater.step(&mut self.params, net, x, bits, hyper, &mut self.rng)
    }

    pub(crate) fn decay(&mut self, hyper: &SsmHyper) -> Result<()> {
        match &mut self.params {
            ModuleParams::Belief(b) => b.predict(hyper),
            ModuleParams::Point(_) => Ok(()),
        }
    }

    pub(crate) fn sgd(
        &mut self,
        updater: &UpdaterKind,
        net: &MlpSpec,
        buffer: &[Sample],
    ) -> Result<()> {
        match (updater, &mut self.params) {
            (UpdaterKind::Sgd { epochs, batch, lr }, ModuleParams::Point(theta)) => {
                sgd_batch_update(theta, net, buffer, *epochs, *batch, *lr, &mut self.rng)
            }
            _ => Err(crate::Error::Contract(format!(
                "buffered training requires SGD, got {}",
                updater.label()
            ))),
        }
    }

    pub fn forward(&self, net: &MlpSpec, x: &[f64]) -> Vec<f64> {
        net.forward_unchecked(self.params.weights().as_slice(), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assemble_order() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let l = [0.1, 0.2, 0.3, 0.4];
        let x = assemble_input_checked(&r, &l, 2, 2, 2).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0, 0.1, 0.2, 0.3, 0.4]);
        assert!(assemble_input_checked(&r, &l[..3], 2, 2, 2).is_err());
    }

    #[test]
    fn assemble_permutes_blocks() {
        let r = [1.0, -1.0];
        let a = assemble_input(&r, &[0.1, 0.2, 0.3, 0.4]);
        let b = assemble_input(&r, &[0.3, 0.4, 0.1, 0.2]);
        assert_eq!(a[..2], b[..2]);
        assert_eq!(a[2..4], b[4..6]);
        assert_eq!(a[4..6], b[2..4]);
    }

    #[test]
    fn hard_decisions() {
        assert_eq!(hard_decide(&[0.7, 0.3]), vec![1, 0]);
        assert_eq!(hard_decide(&[0.5]), vec![0]);
        assert_eq!(hard_decide(&[1.0, 0.0]), vec![1, 0]);
    }
}
