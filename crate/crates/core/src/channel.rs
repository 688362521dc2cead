//! Bit/symbol synthesis, time-varying channels and the pilot/data schedule.
//!
//! Complex vectors are carried as stacked real parts followed by imaginary
//! parts, so an `N`-antenna observation is a real vector of length `2N`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type C64 = Complex<f64>;

/// Unit-energy constellation with a Gray labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    bits_per_symbol: usize,
    /// `labels[i]` is the bit pattern carried by `points[i]`.
    labels: Vec<Vec<u8>>,
}

impl Constellation {
    /// BPSK: bit 0 -> +1, bit 1 -> -1.
    pub fn bpsk() -> Self {
        Self {
            points: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            bits_per_symbol: 1,
            labels: vec![vec![0], vec![1]],
        }
    }

    /// Gray QPSK: the first bit picks the sign of the real part, the second
    /// the sign of the imaginary part (0 -> +, 1 -> -).
    pub fn qpsk() -> Self {
        let mut points = Vec::with_capacity(4);
        let mut labels = Vec::with_capacity(4);
        for b1 in 0..2u8 {
            for b2 in 0..2u8 {
                let re = if b1 == 0 {
                    FRAC_1_SQRT_2
                } else {
                    -FRAC_1_SQRT_2
                };
                let im = if b2 == 0 {
                    FRAC_1_SQRT_2
                } else {
                    -FRAC_1_SQRT_2
                };
                points.push(C64::new(re, im));
                labels.push(vec![b1, b2]);
            }
        }
        Self {
            points,
            bits_per_symbol: 2,
            labels,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" => Ok(Self::qpsk()),
            other => Err(Error::Config(format!("unknown constellation '{other}'"))),
        }
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, index: usize) -> &[u8] {
        &self.labels[index]
    }

    /// Point index carrying `bits`.
    pub fn index_of(&self, bits: &[u8]) -> Result<usize> {
        check_dim("constellation bits", self.bits_per_symbol, bits.len())?;
        self.labels
            .iter()
            .position(|l| l.as_slice() == bits)
            .ok_or_else(|| Error::Config(format!("bit pattern {bits:?} is not binary")))
    }

    /// Nearest point index; ties go to the lowest index.
    pub fn nearest(&self, s: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (s - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Per-time-step bits, `users x bits_per_symbol`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBlock {
    pub users: usize,
    pub bits_per_symbol: usize,
    pub bits: Vec<u8>,
}

impl BitBlock {
    pub fn random<R: Rng + ?Sized>(users: usize, bits_per_symbol: usize, rng: &mut R) -> Self {
        let bits = (0..users * bits_per_symbol)
            .map(|_| rng.random_range(0..2u8))
            .collect();
        Self {
            users,
            bits_per_symbol,
            bits,
        }
    }

    pub fn user(&self, k: usize) -> &[u8] {
        &self.bits[k * self.bits_per_symbol..(k + 1) * self.bits_per_symbol]
    }

    /// Bits as `{0,1}` reals, user-major, for use as training labels.
    pub fn as_labels(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }
}

/// Per-user Gray mapping.
pub fn modulate(bits: &BitBlock, c: &Constellation) -> Result<Vec<C64>> {
    if bits.bits_per_symbol != c.bits_per_symbol() {
        return Err(Error::Config(format!(
            "bit block carries {} bits per symbol but the constellation expects {}",
            bits.bits_per_symbol,
            c.bits_per_symbol()
        )));
    }
    check_dim(
        "bit block",
        bits.users * bits.bits_per_symbol,
        bits.bits.len(),
    )?;
    (0..bits.users)
        .map(|k| c.index_of(bits.user(k)).map(|i| c.points()[i]))
        .collect()
}

/// Stacks complex values as `[re..., im...]`.
pub fn stack_complex(v: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    out.extend(v.iter().map(|c| c.re));
    out.extend(v.iter().map(|c| c.im));
    out
}

pub fn unstack_complex(v: &[f64]) -> Vec<C64> {
    let n = v.len() / 2;
    (0..n).map(|i| C64::new(v[i], v[n + i])).collect()
}

/// 2x2 rotation matrix applied to `(x, y)`.
pub fn rotate(phi: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Single-user noisy rotation, angle `2*pi*alpha*t` at snapshot `t`.
    Rotation { alpha: f64, noise_var: f64 },
    /// `r = H_t s + u` with Gauss-Markov entries of correlation `rho` per snapshot.
    LinearMimo { rho: f64, noise_var: f64 },
    /// `r = tanh(scale * (H_t s + u))`, elementwise on the stacked real vector.
    TanhMimo {
        rho: f64,
        noise_var: f64,
        scale: f64,
    },
}

impl ChannelKind {
    pub fn noise_var(&self) -> f64 {
        match *self {
            ChannelKind::Rotation { noise_var, .. }
            | ChannelKind::LinearMimo { noise_var, .. }
            | ChannelKind::TanhMimo { noise_var, .. } => noise_var,
        }
    }
}

/// Noise variance per real dimension for a given SNR in dB.
///
/// With unit-energy symbols and unit-power channel taps the average received
/// power per real dimension is `users / 2`.
pub fn noise_var_for_snr(snr_db: f64, users: usize) -> f64 {
    (users as f64 / 2.0) / 10f64.powf(snr_db / 10.0)
}

/// A time-indexed channel. The matrix trajectory is fixed at construction
/// from `(seed, horizon)`, so `matrix_at(t)` is a pure lookup.
#[derive(Debug, Clone)]
pub struct ChannelProcess {
    kind: ChannelKind,
    users: usize,
    antennas: usize,
    seed: u64,
    trajectory: Vec<DMatrix<C64>>,
}

impl ChannelProcess {
    pub fn new(
        kind: ChannelKind,
        users: usize,
        antennas: usize,
        seed: u64,
        horizon: usize,
    ) -> Result<Self> {
        if users == 0 || antennas == 0 {
            return Err(Error::Config(
                "channel needs at least one user and antenna".into(),
            ));
        }
        if kind.noise_var() < 0.0 {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        let trajectory = match kind {
            ChannelKind::Rotation { .. } => {
                if users != 1 || antennas != 1 {
                    return Err(Error::Config(
                        "rotation channel requires one user and one (complex) antenna".into(),
                    ));
                }
                Vec::new()
            }
            ChannelKind::LinearMimo { rho, .. } | ChannelKind::TanhMimo { rho, .. } => {
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
                }
                gauss_markov_trajectory(users, antennas, rho, seed, horizon.max(1))
            }
        };
        Ok(Self {
            kind,
            users,
            antennas,
            seed,
            trajectory,
        })
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rotation angle at snapshot `t` (rotation channels only).
    pub fn angle_at(&self, t: usize) -> Option<f64> {
        match self.kind {
            ChannelKind::Rotation { alpha, .. } => Some(2.0 * PI * alpha * t as f64),
            _ => None,
        }
    }

    /// Channel matrix at snapshot `t`. Rotation channels are represented as the
    /// scalar `exp(j*phi_t)`; MIMO snapshots past the horizon hold the last value.
    pub fn matrix_at(&self, t: usize) -> DMatrix<C64> {
        match self.kind {
            ChannelKind::Rotation { .. } => {
                let phi = self.angle_at(t).unwrap_or(0.0);
                DMatrix::from_element(1, 1, C64::from_polar(1.0, phi))
            }
            _ => {
                let idx = t.min(self.trajectory.len() - 1);
                self.trajectory[idx].clone()
            }
        }
    }

    /// `r = R(phi_t) s + u`. `noise = None` gives the noiseless output.
    pub fn rotation_step<R: Rng + ?Sized>(
        &self,
        t: usize,
        s: &[C64],
        noise: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        let ChannelKind::Rotation { noise_var, .. } = self.kind else {
            return Err(Error::Config(
                "rotation_step on a non-rotation channel".into(),
            ));
        };
        check_dim("rotation symbol", 1, s.len())?;
        let phi = self.angle_at(t).unwrap_or(0.0);
        let mut r = rotate(phi, [s[0].re, s[0].im]);
        if let Some(rng) = noise {
            let sd = noise_var.sqrt();
            for v in r.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
        }
        Ok(r.to_vec())
    }

    /// `r = H_t s + u`, optionally passed through `tanh(scale * .)`.
    pub fn mimo_step<R: Rng + ?Sized>(
        &self,
        t: usize,
        s: &[C64],
        noise: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        let (noise_var, scale) = match self.kind {
            ChannelKind::LinearMimo { noise_var, .. } => (noise_var, None),
            ChannelKind::TanhMimo {
                noise_var, scale, ..
            } => (noise_var, Some(scale)),
            ChannelKind::Rotation { .. } => {
                return Err(Error::Config("mimo_step on a rotation channel".into()))
            }
        };
        check_dim("mimo symbols", self.users, s.len())?;
        let h = self.matrix_at(t);
        let y: Vec<C64> = (0..self.antennas)
            .map(|n| (0..self.users).map(|k| h[(n, k)] * s[k]).sum())
            .collect();
        let mut r = stack_complex(&y);
        if let Some(rng) = noise {
            let sd = noise_var.sqrt();
            for v in r.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
        }
        if let Some(c) = scale {
            for v in r.iter_mut() {
                *v = (c * *v).tanh();
            }
        }
        Ok(r)
    }

    /// Dispatches on the channel kind.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        t: usize,
        s: &[C64],
        noise: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        match self.kind {
            ChannelKind::Rotation { .. } => self.rotation_step(t, s, noise),
            _ => self.mimo_step(t, s, noise),
        }
    }

    /// Length of the received real vector.
    pub fn output_dim(&self) -> usize {
        2 * self.antennas
    }
}

fn gauss_markov_trajectory(
    users: usize,
    antennas: usize,
    rho: f64,
    seed: u64,
    horizon: usize,
) -> Vec<DMatrix<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = FRAC_1_SQRT_2;
    let draw = |rng: &mut ChaCha8Rng| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(half * re, half * im)
    };
    let mut out = Vec::with_capacity(horizon);
    let mut h = DMatrix::from_fn(antennas, users, |_, _| draw(&mut rng));
    out.push(h.clone());
    let innov = (1.0 - rho * rho).max(0.0).sqrt();
    for _ in 1..horizon {
        for v in h.iter_mut() {
            let z = draw(&mut rng);
            *v = *v * rho + z * innov;
        }
        out.push(h.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    SyncPilot,
    Pilot,
    Data,
}

impl Role {
    pub fn is_pilot(self) -> bool {
        !matches!(self, Role::Data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionSchedule {
    pub t_sync: usize,
    pub block_len: usize,
    pub pilots_per_block: usize,
    pub n_blocks: usize,
}

/// One transmitted symbol slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// Global symbol index.
    pub t: usize,
    /// Channel snapshot the symbol is sent in.
    pub snapshot: usize,
    /// Tracking block index (`None` during synchronisation).
    pub block: Option<usize>,
    pub role: Role,
}

impl TransmissionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be positive".into()));
        }
        if self.pilots_per_block == 0 || self.pilots_per_block > self.block_len {
            return Err(Error::Config(format!(
                "pilots_per_block must lie in 1..={}, got {}",
                self.block_len, self.pilots_per_block
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t_sync + self.n_blocks * self.block_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of data-bearing symbol slots.
    pub fn data_len(&self) -> usize {
        self.n_blocks * (self.block_len - self.pilots_per_block)
    }

    /// Number of snapshots the channel has to cover.
    pub fn n_snapshots(&self) -> usize {
        self.len().div_ceil(self.block_len)
    }

    pub fn iter(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.len()).map(move |t| {
            let snapshot = t / self.block_len;
            if t < self.t_sync {
                Slot {
                    t,
                    snapshot,
                    block: None,
                    role: Role::SyncPilot,
                }
            } else {
                let offset = t - self.t_sync;
                let within = offset % self.block_len;
                Slot {
                    t,
                    snapshot,
                    block: Some(offset / self.block_len),
                    role: if within < self.pilots_per_block {
                        Role::Pilot
                    } else {
                        Role::Data
                    },
                }
            }
        })
    }
}

/// Schedule roles in transmission order.
pub fn schedule_iter(sched: &TransmissionSchedule) -> impl Iterator<Item = (usize, Role)> + '_ {
    sched.iter().map(|s| (s.t, s.role))
}
