use std::collections::{BTreeMap, VecDeque};

use super::{assemble_input, DeepSic};
use crate::channel::Role;
use crate::error::{check_dim, Error, Result};

/// A sample entering the pipeline. Pilots must carry their bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Incoming {
    pub t: usize,
    pub r: Vec<f64>,
    pub role: Role,
    pub bits: Option<Vec<f64>>,
}

/// Final-layer soft estimates of a sample leaving the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Emitted {
    pub t: usize,
    pub role: Role,
    pub soft: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Entry {
    t: usize,
    r: Vec<f64>,
    role: Role,
    bits: Option<Vec<f64>>,
    soft: Vec<f64>,
    next_layer: usize,
}

/// In-flight samples, oldest first. The entry at position `i` from the back
/// sits at layer `i`, so each tick advances every sample by one layer.
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    entries: VecDeque<Entry>,
    ticks: u64,
    touches: Option<BTreeMap<(usize, usize), u32>>,
}

impl PipelineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also count training touches per `(sample, layer)`.
    pub fn instrumented() -> Self {
        Self {
            touches: Some(BTreeMap::new()),
            ..Self::default()
        }
    }

    pub fn in_flight(&self) -> usize {
        self.entries.len()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// `(sample, layer) -> number of training passes`, if instrumented.
    pub fn touches(&self) -> Option<&BTreeMap<(usize, usize), u32>> {
        self.touches.as_ref()
    }
}

impl DeepSic {
    /// One tick: admit `sample` (if any), advance every in-flight sample by one
    /// layer and return the sample that finished its last layer.
    ///
    /// A pilot at layer `q` first updates the `K` modules of layer `q` with the
    /// configured updater, then runs inference through them; data symbols only
    /// run inference. Buffered updaters (SGD) are trained outside the pipeline,
    /// so pilots only run inference for them.
    pub fn pipelined_step(
        &mut self,
        pipe: &mut PipelineState,
        sample: Option<Incoming>,
    ) -> Result<Option<Emitted>> {
        let q_total = self.layers();
        let soft_len = self.topology().soft_len();
        if let Some(s) = sample {
            check_dim("received vector", 2 * self.topology().antennas, s.r.len())?;
            match (&s.bits, s.role.is_pilot()) {
                (None, true) => {
                    return Err(Error::Contract(format!(
                        "pilot at t={} has no label bits",
                        s.t
                    )))
                }
                (Some(b), _) => check_dim("pilot bits", soft_len, b.len())?,
                _ => {}
            }
            pipe.entries.push_back(Entry {
                t: s.t,
                r: s.r,
                role: s.role,
                bits: s.bits,
                soft: vec![0.5; soft_len],
                next_layer: 0,
            });
        }
        pipe.ticks += 1;
        let trains = self.updater().is_streaming();
        for entry in pipe.entries.iter_mut() {
            let q = entry.next_layer;
            let x = assemble_input(&entry.r, &entry.soft);
            match (&entry.bits, entry.role.is_pilot()) {
                (Some(bits), true) if trains => {
                    self.train_layer(q, &x, bits)?;
                    if let Some(map) = pipe.touches.as_mut() {
                        *map.entry((entry.t, q)).or_insert(0) += 1;
                    }
                }
                (_, false) if self.decays_on_data() => self.decay_layer(q)?,
                _ => {}
            }
            entry.soft = self.layer_forward(q, &x);
            entry.next_layer += 1;
        }
        match pipe.entries.front() {
            Some(e) if e.next_layer == q_total => {
                let e = pipe.entries.pop_front().expect("front exists");
                Ok(Some(Emitted {
                    t: e.t,
                    role: e.role,
                    soft: e.soft,
                }))
            }
            _ => Ok(None),
        }
    }

    /// Ticks without new input until the pipeline is empty.
    pub fn flush(&mut self, pipe: &mut PipelineState) -> Result<Vec<Emitted>> {
        let mut out = Vec::new();
        while !pipe.entries.is_empty() {
            if let Some(e) = self.pipelined_step(pipe, None)? {
                out.push(e);
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`DeepSic::pipelined_step`].
pub fn pipelined_step(
    rx: &mut DeepSic,
    pipe: &mut PipelineState,
    sample: Option<Incoming>,
) -> Result<Option<Emitted>> {
    rx.pipelined_step(pipe, sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::SsmHyper;
    use crate::learners::{UpdaterKind, DEFAULT_FULL_COV_CAP_BYTES};
    use crate::receiver::Topology;

    fn build(k: usize, q: usize, updater: UpdaterKind) -> DeepSic {
        let topo = Topology {
            users: k,
            antennas: 2,
            bits_per_symbol: 1,
            layers: q,
            hidden: vec![5],
        };
        DeepSic::new(
            topo,
            updater,
            SsmHyper::default(),
            1.0,
            3,
            DEFAULT_FULL_COV_CAP_BYTES,
        )
        .unwrap()
    }

    fn sample(t: usize, k: usize, role: Role) -> Incoming {
        Incoming {
            t,
            r: (0..4).map(|j| ((t * 4 + j) as f64 * 0.61).sin()).collect(),
            role,
            bits: role
                .is_pilot()
                .then(|| (0..k).map(|j| ((t + j) % 2) as f64).collect()),
        }
    }

    #[test]
    fn single_layer_has_no_delay() {
        let mut rx = build(2, 1, UpdaterKind::Frozen);
        let mut pipe = PipelineState::new();
        for t in 0..5 {
            let s = sample(t, 2, Role::Data);
            let want = rx.forward(&s.r).unwrap();
            let got = rx.pipelined_step(&mut pipe, Some(s)).unwrap().unwrap();
            assert_eq!(got.t, t);
            assert_eq!(got.soft, want);
        }
    }

    #[test]
    fn priming_emits_nothing() {
        let mut rx = build(2, 3, UpdaterKind::Frozen);
        let mut pipe = PipelineState::new();
        assert!(rx
            .pipelined_step(&mut pipe, Some(sample(0, 2, Role::Data)))
            .unwrap()
            .is_none());
        assert!(rx
            .pipelined_step(&mut pipe, Some(sample(1, 2, Role::Data)))
            .unwrap()
            .is_none());
        let out = rx
            .pipelined_step(&mut pipe, Some(sample(2, 2, Role::Data)))
            .unwrap();
        assert_eq!(out.unwrap().t, 0);
    }

    #[test]
    fn pilot_without_bits_is_rejected() {
        let mut rx = build(1, 2, UpdaterKind::CmEkf);
        let mut pipe = PipelineState::new();
        let mut s = sample(0, 1, Role::Pilot);
        s.bits = None;
        assert!(matches!(
            rx.pipelined_step(&mut pipe, Some(s)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn each_pilot_layer_pair_trained_once() {
        let mut rx = build(2, 3, UpdaterKind::VdEkf);
        let mut pipe = PipelineState::instrumented();
        let mut emitted = Vec::new();
        for t in 0..40 {
            let role = if t % 4 == 3 { Role::Data } else { Role::Pilot };
            emitted.extend(
                rx.pipelined_step(&mut pipe, Some(sample(t, 2, role)))
                    .unwrap(),
            );
        }
        emitted.extend(rx.flush(&mut pipe).unwrap());
        assert_eq!(emitted.len(), 40);
        assert!(emitted.iter().enumerate().all(|(i, e)| e.t == i));
        let touches = pipe.touches().unwrap();
        for t in 0..40 {
            for q in 0..3 {
                let want = u32::from(t % 4 != 3);
                assert_eq!(
                    touches.get(&(t, q)).copied().unwrap_or(0),
                    want,
                    "({t},{q})"
                );
            }
        }
    }
}
