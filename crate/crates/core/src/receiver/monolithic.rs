use super::Module;
use crate::belief::SsmHyper;
use crate::error::{check_dim, Result};
use crate::learners::{ModuleParams, Sample, UpdaterKind};
use crate::network::MlpSpec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One network mapping the stacked received vector (`2N`) to all `KB` bits.
///
/// With `K = N = 1` this is the single-user receiver of the rotation channel.
#[derive(Debug, Clone)]
pub struct Monolithic {
    users: usize,
    antennas: usize,
    bits_per_symbol: usize,
    net: MlpSpec,
    updater: UpdaterKind,
    hyper: SsmHyper,
    module: Module,
}

impl Monolithic {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        users: usize,
        antennas: usize,
        bits_per_symbol: usize,
        hidden: &[usize],
        updater: UpdaterKind,
        hyper: SsmHyper,
        init_scale: f64,
        seed: u64,
        cap_bytes: u64,
    ) -> Result<Self> {
        updater.validate()?;
        let net = MlpSpec::with_hidden(2 * antennas, hidden, users * bits_per_symbol)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(0);
        let init = net.init_params(init_scale, &mut init_rng);
        let params = updater.init_params(init, &hyper, cap_bytes)?;
        Ok(Self {
            users,
            antennas,
            bits_per_symbol,
            net,
            updater,
            hyper,
            module: Module::new(params, seed, 1),
        })
    }

    pub fn net(&self) -> &MlpSpec {
        &self.net
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn updater(&self) -> UpdaterKind {
        self.updater
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn params(&self) -> &ModuleParams {
        &self.module.params
    }

    pub fn params_mut(&mut self) -> &mut ModuleParams {
        &mut self.module.params
    }

    pub fn forward(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim("received vector", self.net.input_dim(), r.len())?;
        Ok(self.module.forward(&self.net, r))
    }

    /// Streaming update on one pilot.
    pub fn update(&mut self, r: &[f64], bits: &[f64]) -> Result<()> {
        check_dim("received vector", self.net.input_dim(), r.len())?;
        check_dim("pilot bits", self.net.output_dim(), bits.len())?;
        self.module
            .step(&self.updater, &self.net, r, bits, &self.hyper)
    }

    /// Predict step alone (beliefs only).
    pub fn decay(&mut self) -> Result<()> {
        self.module.decay(&self.hyper)
    }

    /// SGD on one snapshot's pilots.
    pub fn train_sgd(&mut self, pilots: &[Sample]) -> Result<()> {
        self.module.sgd(&self.updater, &self.net, pilots)
    }
}
