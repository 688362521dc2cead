use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assemble_input, Module};
use crate::belief::SsmHyper;
use crate::error::{check_dim, Error, Result};
use crate::learners::{ModuleParams, Sample, UpdaterKind};
use crate::network::MlpSpec;

/// Shape of a DeepSIC receiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub users: usize,
    pub antennas: usize,
    pub bits_per_symbol: usize,
    pub layers: usize,
    pub hidden: Vec<usize>,
}

impl Topology {
    pub fn module_spec(&self) -> Result<MlpSpec> {
        MlpSpec::with_hidden(
            2 * self.antennas + self.users * self.bits_per_symbol,
            &self.hidden,
            self.bits_per_symbol,
        )
    }

    pub fn soft_len(&self) -> usize {
        self.users * self.bits_per_symbol
    }
}

/// `K x Q` lattice of per-user modules; module `(k, q)` is stored at `q * K + k`.
#[derive(Debug, Clone)]
pub struct DeepSic {
    topo: Topology,
    net: MlpSpec,
    updater: UpdaterKind,
    hyper: SsmHyper,
    modules: Vec<Module>,
    parallel: bool,
    decay_on_data: bool,
}

impl DeepSic {
    /// Every module starts from its own draw of `net.init_params(init_scale)`;
    /// the draws depend only on `seed`, so receivers with different updaters
    /// share their initial weights.
    pub fn new(
        topo: Topology,
        updater: UpdaterKind,
        hyper: SsmHyper,
        init_scale: f64,
        seed: u64,
        cap_bytes: u64,
    ) -> Result<Self> {
        if topo.users == 0 || topo.layers == 0 || topo.bits_per_symbol == 0 {
            return Err(Error::Config("DeepSIC needs K, Q and B positive".into()));
        }
        updater.validate()?;
        let net = topo.module_spec()?;
        let mut modules = Vec::with_capacity(topo.users * topo.layers);
        for idx in 0..topo.users * topo.layers {
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            init_rng.set_stream(2 * idx as u64);
            let init = net.init_params(init_scale, &mut init_rng);
            let params = updater.init_params(init, &hyper, cap_bytes)?;
            modules.push(Module::new(params, seed, 2 * idx as u64 + 1));
        }
        Ok(Self {
            topo,
            net,
            updater,
            hyper,
            modules,
            parallel: false,
            decay_on_data: false,
        })
    }

    /// Run the `K` module updates of a layer on the rayon pool.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Apply the predict step to a layer's beliefs on data symbols too.
    pub fn with_decay_on_data(mut self, on: bool) -> Self {
        self.decay_on_data = on;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn net(&self) -> &MlpSpec {
        &self.net
    }

    pub fn updater(&self) -> UpdaterKind {
        self.updater
    }

    pub fn hyper(&self) -> &SsmHyper {
        &self.hyper
    }

    pub fn users(&self) -> usize {
        self.topo.users
    }

    pub fn layers(&self) -> usize {
        self.topo.layers
    }

    pub fn decays_on_data(&self) -> bool {
        self.decay_on_data
    }

    /// Parameters of user `k`'s module at iteration `q`.
    pub fn module(&self, k: usize, q: usize) -> &ModuleParams {
        &self.modules[q * self.topo.users + k].params
    }

    pub fn module_mut(&mut self, k: usize, q: usize) -> &mut ModuleParams {
        &mut self.modules[q * self.topo.users + k].params
    }

    /// Outputs of layer `q` on input `x`, concatenated in user order.
    pub fn layer_forward(&self, q: usize, x: &[f64]) -> Vec<f64> {
        let k = self.topo.users;
        self.modules[q * k..(q + 1) * k]
            .iter()
            .flat_map(|m| m.forward(&self.net, x))
            .collect()
    }

    /// All `Q` iterations from the uninformative start `l = 0.5`.
    pub fn forward(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim("received vector", 2 * self.topo.antennas, r.len())?;
        let mut soft = vec![0.5; self.topo.soft_len()];
        for q in 0..self.topo.layers {
            soft = self.layer_forward(q, &assemble_input(r, &soft));
        }
        Ok(soft)
    }

    /// Streaming update of every module in layer `q` against the pilot bits.
    pub fn train_layer(&mut self, q: usize, x: &[f64], bits: &[f64]) -> Result<()> {
        check_dim("module input", self.net.input_dim(), x.len())?;
        check_dim("pilot bits", self.topo.soft_len(), bits.len())?;
        let k = self.topo.users;
        let b = self.topo.bits_per_symbol;
        let (updater, net, hyper) = (&self.updater, &self.net, &self.hyper);
        let layer = &mut self.modules[q * k..(q + 1) * k];
        if self.parallel {
            layer
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(u, m)| m.step(updater, net, x, &bits[u * b..(u + 1) * b], hyper))
        } else {
            layer
                .iter_mut()
                .enumerate()
                .try_for_each(|(u, m)| m.step(updater, net, x, &bits[u * b..(u + 1) * b], hyper))
        }
    }

    /// Predict step alone on every belief of layer `q`.
    pub fn decay_layer(&mut self, q: usize) -> Result<()> {
        let k = self.topo.users;
        let hyper = self.hyper;
        self.modules[q * k..(q + 1) * k]
            .iter_mut()
            .try_for_each(|m| m.decay(&hyper))
    }

    /// SGD on one snapshot's pilots `(r, bits)`, layer by layer: each layer is
    /// trained on the soft estimates of the already trained previous layer.
    pub fn train_sgd(&mut self, pilots: &[Sample]) -> Result<()> {
        let k = self.topo.users;
        let b = self.topo.bits_per_symbol;
        for (r, bits) in pilots {
            check_dim("received vector", 2 * self.topo.antennas, r.len())?;
            check_dim("pilot bits", self.topo.soft_len(), bits.len())?;
        }
        let mut soft: Vec<Vec<f64>> = vec![vec![0.5; self.topo.soft_len()]; pilots.len()];
        for q in 0..self.topo.layers {
            let xs: Vec<Vec<f64>> = pilots
                .iter()
                .zip(&soft)
                .map(|((r, _), l)| assemble_input(r, l))
                .collect();
            for u in 0..k {
                let buffer: Vec<Sample> = xs
                    .iter()
                    .zip(pilots)
                    .map(|(x, (_, bits))| (x.clone(), bits[u * b..(u + 1) * b].to_vec()))
                    .collect();
                let m = &mut self.modules[q * k + u];
                m.sgd(&self.updater, &self.net, &buffer)?;
            }
            soft = xs.iter().map(|x| self.layer_forward(q, x)).collect();
        }
        Ok(())
    }
}
