//! Quick invariant checks runnable from the command line.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{CovKind, GaussianBelief, SsmHyper};
use crate::channel::Role;
use crate::learners::{
    bong_linearized_update, cmekf_update, lofi_update, vdekf_update, KalmanWork, UpdaterKind,
    DEFAULT_FULL_COV_CAP_BYTES,
};
use crate::linalg::min_eigenvalue;
use crate::network::MlpSpec;
use crate::receiver::{DeepSic, Incoming, PipelineState, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn jacobian_check(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let net = MlpSpec::with_hidden(3, &[4], 2).unwrap();
        let theta = random_vec(net.num_params(), 1.0, rng);
        let x = random_vec(3, 1.0, rng);
        let jac = net.jacobian(&theta, &x).unwrap();
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[p] += h;
            minus[p] -= h;
            let fp = net.forward(&plus, &x).unwrap();
            let fm = net.forward(&minus, &x).unwrap();
            for b in 0..2 {
                let fd = (fp[b] - fm[b]) / (2.0 * h);
                worst = worst.max((fd - jac[(b, p)]).abs());
            }
        }
    }
    check("jacobian vs finite differences", worst, 1e-6)
}

fn equivalence_check(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let hyper = SsmHyper::default();
    for _ in 0..10 {
        let net = MlpSpec::with_hidden(3, &[3], 2).unwrap();
        let mean = DVector::from_vec(random_vec(net.num_params(), 1.0, rng));
        let x = random_vec(3, 1.0, rng);
        let bits = [1.0, 0.0];
        let mut a = GaussianBelief::prior(mean, 0.5, CovKind::Full);
        a.predict(&hyper).unwrap();
        let mut b = a.clone();
        let work = KalmanWork::linearize(&net, &a.mean, &x, hyper.obs_floor).unwrap();
        cmekf_update(&mut a, &work, &bits).unwrap();
        bong_linearized_update(&mut b, &work, &bits).unwrap();
        worst = worst.max((&a.mean - &b.mean).abs().max());
        let sa = a.as_covariance().unwrap();
        let sb = b.as_covariance().unwrap();
        worst = worst.max((sa - sb).abs().max());
    }
    check(
        "cm-ekf equals linearized natural-gradient step",
        worst,
        1e-8,
    )
}

fn rank_zero_check(rng: &mut ChaCha8Rng) -> Check {
    let net = MlpSpec::with_hidden(3, &[3], 2).unwrap();
    let hyper = SsmHyper::default();
    let mean = DVector::from_vec(random_vec(net.num_params(), 1.0, rng));
    let mut vd = GaussianBelief::prior(mean.clone(), 1.0, CovKind::Diag);
    let mut lofi = GaussianBelief::prior(mean, 1.0, CovKind::Dlr(0));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = random_vec(3, 1.0, rng);
        let bits = [
            f64::from(rng.random::<bool>()),
            f64::from(rng.random::<bool>()),
        ];
        vd.predict(&hyper).unwrap();
        lofi.predict(&hyper).unwrap();
        let w1 = KalmanWork::linearize(&net, &vd.mean, &x, hyper.obs_floor).unwrap();
        let w2 = KalmanWork::linearize(&net, &lofi.mean, &x, hyper.obs_floor).unwrap();
        vdekf_update(&mut vd, &w1, &bits).unwrap();
        lofi_update(&mut lofi, &w2, &bits).unwrap();
        worst = worst.max((&vd.mean - &lofi.mean).abs().max());
        let d = vd.variances().unwrap() - lofi.variances().unwrap();
        worst = worst.max(d.abs().max());
    }
    check("lo-fi rank 0 equals vd-ekf", worst, 1e-10)
}

fn psd_check(rng: &mut ChaCha8Rng) -> Check {
    let net = MlpSpec::with_hidden(3, &[4], 2).unwrap();
    let hyper = SsmHyper::default();
    let mean = DVector::from_vec(random_vec(net.num_params(), 1.0, rng));
    let mut b = GaussianBelief::prior(mean, 1.0, CovKind::Full);
    let mut lowest = f64::INFINITY;
    for _ in 0..200 {
        let x = random_vec(3, 1.0, rng);
        let bits = [
            f64::from(rng.random::<bool>()),
            f64::from(rng.random::<bool>()),
        ];
        b.predict(&hyper).unwrap();
        let w = KalmanWork::linearize(&net, &b.mean, &x, hyper.obs_floor).unwrap();
        cmekf_update(&mut b, &w, &bits).unwrap();
        lowest = lowest.min(min_eigenvalue(&b.as_covariance().unwrap()));
    }
    check("cm-ekf covariance stays PSD", (-lowest).max(0.0), 1e-9)
}

fn pipeline_check(rng: &mut ChaCha8Rng) -> Check {
    let topo = Topology {
        users: 2,
        antennas: 2,
        bits_per_symbol: 2,
        layers: 3,
        hidden: vec![5],
    };
    let mut rx = DeepSic::new(
        topo,
        UpdaterKind::Frozen,
        SsmHyper::default(),
        1.0,
        rng.random(),
        DEFAULT_FULL_COV_CAP_BYTES,
    )
    .unwrap();
    let mut pipe = PipelineState::new();
    let inputs: Vec<Vec<f64>> = (0..100).map(|_| random_vec(4, 1.5, rng)).collect();
    let mut mismatches = 0usize;
    let mut emitted = Vec::new();
    for (t, r) in inputs.iter().enumerate() {
        let inc = Incoming {
            t,
            r: r.clone(),
            role: Role::Data,
            bits: None,
        };
        emitted.extend(rx.pipelined_step(&mut pipe, Some(inc)).unwrap());
    }
    emitted.extend(rx.flush(&mut pipe).unwrap());
    for (i, e) in emitted.iter().enumerate() {
        if e.t != i || e.soft != rx.forward(&inputs[i]).unwrap() {
            mismatches += 1;
        }
    }
    Check {
        name: "frozen pipeline equals sequential forward",
        passed: mismatches == 0 && emitted.len() == inputs.len(),
        detail: format!("{mismatches} mismatches over {} samples", inputs.len()),
    }
}

/// Runs every check with a fixed seed.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        jacobian_check(&mut rng),
        equivalence_check(&mut rng),
        rank_zero_check(&mut rng),
        psd_check(&mut rng),
        pipeline_check(&mut rng),
    ]
}
