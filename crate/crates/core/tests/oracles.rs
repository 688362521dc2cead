//! Checks against independently computed references: quadrature posteriors,
//! analytic error recursions and binomial bands.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modrx_core::baselines::NlmsState;
use modrx_core::channel::{modulate, stack_complex, BitBlock, ChannelKind, ChannelProcess};
use modrx_core::harness::{
    emit_csv, generate_transmission, run_experiment, run_learned, summarize, ExperimentConfig,
    NoisePoint, ReceiverInstance, Transmission,
};
use modrx_core::learners::{cmekf_update, KalmanWork};
use modrx_core::network::sigmoid;
use modrx_core::receiver::hard_decide;
use modrx_core::{Covariance, GaussianBelief, MlpSpec, UpdaterKind};

fn small_mimo() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("mimo-linear").unwrap();
    cfg.schedule.t_sync = 64;
    cfg.schedule.n_blocks = 8;
    cfg.receiver.hidden = vec![8];
    cfg
}

#[test]
fn cmekf_tracks_quadrature_posterior_on_logistic_weight() {
    // one effective parameter: the bias is pinned by a negligible prior variance
    let net = MlpSpec::new(vec![1, 1]).unwrap();
    for (mu, s2, x, bit) in [
        (0.3, 1.0, 1.0, 1.0),
        (-0.5, 0.5, 1.0, 1.0),
        (1.0, 0.8, -1.5, 0.0),
    ] {
        let mut b = GaussianBelief {
            mean: DVector::from_vec(vec![mu, 0.0]),
            cov: Covariance::Full(DMatrix::from_diagonal(&DVector::from_vec(vec![s2, 1e-14]))),
        };
        let work = KalmanWork::linearize(&net, &b.mean, &[x], 1e-6).unwrap();
        cmekf_update(&mut b, &work, &[bit]).unwrap();

        // exact posterior mean of the weight by midpoint quadrature
        let sd = s2.sqrt();
        let (lo, hi, n) = (mu - 10.0 * sd, mu + 10.0 * sd, 200_000);
        let dw = (hi - lo) / n as f64;
        let (mut z, mut m1) = (0.0, 0.0);
        for i in 0..n {
            let w = lo + (i as f64 + 0.5) * dw;
            let prior = (-(w - mu) * (w - mu) / (2.0 * s2)).exp();
            let l = sigmoid(w * x);
            let lik = if bit > 0.5 { l } else { 1.0 - l };
            z += prior * lik;
            m1 += w * prior * lik;
        }
        let exact = m1 / z;
        let rel = (b.mean[0] - exact).abs() / exact.abs();
        assert!(
            rel < 0.1,
            "mu={mu}: cm-ekf {} vs exact {exact} (rel {rel})",
            b.mean[0]
        );
    }
}

#[test]
fn nlms_channel_error_is_non_increasing_in_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = modrx_core::Constellation::qpsk();
    let runs = 1000;
    let steps = 40;
    let mut avg = vec![0.0; steps + 1];
    for _ in 0..runs {
        let h = nalgebra::Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let eta = rng.random_range(0.05..1.95);
        let mut st = NlmsState::new(eta, 1e-6).unwrap();
        avg[0] += (h - st.h_hat).norm();
        for slot in avg.iter_mut().skip(1) {
            let p = c.points()[rng.random_range(0..c.len())];
            let s = nalgebra::Vector2::new(p.re, p.im);
            let r = h * s;
            st.step([s[0], s[1]], [r[0], r[1]]);
            *slot += (h - st.h_hat).norm();
        }
    }
    for t in 1..=steps {
        assert!(
            avg[t] <= avg[t - 1] + 1e-9,
            "step {t}: {} > {}",
            avg[t],
            avg[t - 1]
        );
    }
    assert!(avg[steps] < 0.5 * avg[0]);
}

#[test]
fn same_seed_gives_byte_identical_csv() {
    let mut cfg = small_mimo();
    cfg.trials = 2;
    cfg.scenario.snr_db = vec![8.0];
    cfg.updaters = vec![UpdaterKind::VdEkf, UpdaterKind::Gd { iters: 2, lr: 0.1 }];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let records = run_experiment(&cfg).unwrap();
        emit_csv(&summarize(&records, false), dir.path()).unwrap();
    }
    for f in ["ber_vs_snr.csv", "ber_vs_time.csv", "ser_rotation.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn frozen_receiver_is_at_chance() {
    let mut cfg = small_mimo();
    cfg.trials = 10;
    cfg.scenario.snr_db = vec![8.0];
    cfg.references = false;
    cfg.updaters = vec![UpdaterKind::Frozen];
    let records = run_experiment(&cfg).unwrap();
    let errors: usize = records.iter().map(|r| r.bit_errors).sum();
    let bits: usize = records.iter().map(|r| r.data_bits).sum();
    let ber = errors as f64 / bits as f64;
    let band = 3.0 * (0.25 / bits as f64).sqrt();
    assert!((ber - 0.5).abs() <= band, "ber {ber} outside 0.5 +- {band}");
}

#[test]
fn only_data_symbols_are_scored() {
    let mut cfg = small_mimo();
    cfg.trials = 1;
    cfg.scenario.snr_db = vec![8.0];
    cfg.updaters = vec![UpdaterKind::VdEkf];
    let records = run_experiment(&cfg).unwrap();
    let s = &cfg.schedule;
    let per_block = (s.block_len - s.pilots_per_block) * cfg.scenario.users * 2;
    for r in &records {
        assert_eq!(r.data_bits, per_block, "{} block {}", r.updater, r.block);
        assert_eq!(r.pilots_seen, s.t_sync + (r.block + 1) * s.pilots_per_block);
    }
}

#[test]
fn noiseless_identity_channel_is_learned_during_sync() {
    let mut cfg = ExperimentConfig::preset("mimo-linear").unwrap();
    cfg.scenario.users = 1;
    cfg.scenario.antennas = 1;
    cfg.scenario.snr_db = vec![];
    cfg.scenario.noise_var = Some(0.0);
    cfg.schedule.t_sync = 256;
    cfg.schedule.n_blocks = 4;
    let c = cfg.constellation().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let slots: Vec<_> = cfg.schedule.iter().collect();
    let mut labels = Vec::new();
    let mut symbols = Vec::new();
    let mut received = Vec::new();
    for _ in &slots {
        let block = BitBlock::random(1, c.bits_per_symbol(), &mut rng);
        let s = modulate(&block, &c).unwrap();
        received.push(stack_complex(&s));
        labels.push(block.bits);
        symbols.push(s);
    }
    let channel = ChannelProcess::new(
        ChannelKind::LinearMimo {
            rho: 1.0,
            noise_var: 0.0,
        },
        1,
        1,
        0,
        1,
    )
    .unwrap();
    let tx = Transmission {
        slots,
        labels,
        symbols,
        received,
        channel,
        point: NoisePoint {
            snr_db: f64::INFINITY,
            noise_var: 0.0,
        },
    };
    let out = run_learned(&cfg, UpdaterKind::CmEkf, &tx, 0).unwrap();
    let errors: usize = out.records.iter().map(|r| r.bit_errors).sum();
    assert_eq!(errors, 0);
}

#[test]
fn ber_improves_with_snr_for_a_fixed_receiver() {
    let mut cfg = small_mimo();
    cfg.scenario.snr_db = vec![6.0];
    let c = cfg.constellation().unwrap();
    let k = cfg.scenario.users;
    let mut errors = [0usize; 2];
    let mut bits = 0usize;
    for trial in 0..10 {
        let point = cfg.noise_points()[0];
        let tx = generate_transmission(&cfg, trial, point).unwrap();
        let rx: ReceiverInstance = run_learned(&cfg, UpdaterKind::CmEkf, &tx, trial)
            .unwrap()
            .receiver;
        let snapshot = cfg.schedule.n_snapshots() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial as u64);
        for _ in 0..500 {
            let block = BitBlock::random(k, c.bits_per_symbol(), &mut rng);
            let s = modulate(&block, &c).unwrap();
            let clean = tx
                .channel
                .transmit::<ChaCha8Rng>(snapshot, &s, None)
                .unwrap();
            let noise: Vec<f64> = (0..clean.len())
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            for (i, snr) in [6.0, 12.0].into_iter().enumerate() {
                let sd = modrx_core::channel::noise_var_for_snr(snr, k).sqrt();
                let r: Vec<f64> = clean.iter().zip(&noise).map(|(a, n)| a + sd * n).collect();
                let decided = hard_decide(&rx.soft(&r).unwrap());
                errors[i] += decided
                    .iter()
                    .zip(&block.bits)
                    .filter(|(a, b)| a != b)
                    .count();
            }
            bits += block.bits.len();
        }
    }
    let low = errors[0] as f64 / bits as f64;
    let high = errors[1] as f64 / bits as f64;
    assert!(high <= low, "BER at 12 dB {high} above BER at 6 dB {low}");
}
