use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modrx_core::belief::CovKind;
use modrx_core::learners::DEFAULT_FULL_COV_CAP_BYTES;
use modrx_core::{MlpSpec, SsmHyper, UpdaterKind};

fn updaters() -> Vec<UpdaterKind> {
    vec![
        UpdaterKind::VdEkf,
        UpdaterKind::LoFi { rank: 10 },
        UpdaterKind::CmEkf,
        UpdaterKind::BongEf {
            samples: 10,
            rank: CovKind::Diag,
        },
        UpdaterKind::Bbb {
            iters: 10,
            lr: 1e-2,
        },
        UpdaterKind::Gd {
            iters: 10,
            lr: 1e-1,
        },
    ]
}

/// One predict+update per iteration on a DeepSIC-sized module (P = 458).
fn single_step(c: &mut Criterion) {
    let net = MlpSpec::with_hidden(16, &[24], 2).unwrap();
    let hyper = SsmHyper::default();
    let mut group = c.benchmark_group("step_p458");
    for u in updaters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = net.init_params(1.0, &mut rng);
        let mut params = u
            .init_params(init, &hyper, DEFAULT_FULL_COV_CAP_BYTES)
            .unwrap();
        let pool: Vec<(Vec<f64>, Vec<f64>)> = (0..64)
            .map(|_| {
                let x = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = (0..2)
                    .map(|_| f64::from(u8::from(rng.random::<bool>())))
                    .collect();
                (x, b)
            })
            .collect();
        let mut i = 0;
        group.bench_function(BenchmarkId::from_parameter(u.label()), |b| {
            b.iter(|| {
                let (x, bits) = &pool[i % pool.len()];
                i += 1;
                u.step(&mut params, &net, x, bits, &hyper, &mut rng)
                    .unwrap();
            })
        });
    }
    group.finish();
}

/// Scaling of CM-EKF and Lo-Fi with the parameter count.
fn scaling(c: &mut Criterion) {
    let hyper = SsmHyper::default();
    let mut group = c.benchmark_group("scaling");
    for hidden in [9usize, 36, 146] {
        let net = MlpSpec::with_hidden(4, &[hidden], 2).unwrap();
        for u in [UpdaterKind::CmEkf, UpdaterKind::LoFi { rank: 10 }] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let init = net.init_params(1.0, &mut rng);
            let mut params = u
                .init_params(init, &hyper, DEFAULT_FULL_COV_CAP_BYTES)
                .unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            group.bench_with_input(BenchmarkId::new(u.label(), net.num_params()), &x, |b, x| {
                b.iter(|| {
                    u.step(&mut params, &net, x, &[1.0, 0.0], &hyper, &mut rng)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, single_step, scaling);
criterion_main!(benches);
