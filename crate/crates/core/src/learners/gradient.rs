//! Iterative baselines: online BBB on the per-sample ELBO, streaming GD and
//! mini-batch SGD on the cross-entropy.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use super::kalman::KalmanWork;
use crate::belief::{Covariance, GaussianBelief};
use crate::error::{check_dim, Error, Result};
use crate::network::MlpSpec;

/// Online BBB with a diagonal Gaussian, `iters` gradient steps on
///
/// `L(mu, v) = E_q[-log p(b | x, theta)] + KL(q || q_pred)`
///
/// started from the predictive belief. The expectation uses the Gaussian
/// surrogate of the likelihood linearised at the current mean, so
/// `E[NLL] = ½ eᵀ R⁻¹ e + ½ Σ_p v_p (Hᵀ R⁻¹ H)_pp`. Variances are stepped in
/// log space.
pub fn bbb_online_update(
    belief: &mut GaussianBelief,
    net: &MlpSpec,
    x: &[f64],
    bits: &[f64],
    iters: usize,
    lr: f64,
    floor: f64,
) -> Result<()> {
    check_dim("label bits", net.output_dim(), bits.len())?;
    bbb_steps(belief, bits, iters, lr, |mu| {
        KalmanWork::linearize(net, mu, x, floor)
    })
}

/// Loss and gradient pieces at one iterate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ElboValue {
    pub nll: f64,
    pub kl: f64,
}

pub(crate) fn bbb_steps<F>(
    belief: &mut GaussianBelief,
    bits: &[f64],
    iters: usize,
    lr: f64,
    mut surrogate: F,
) -> Result<()>
where
    F: FnMut(&DVector<f64>) -> Result<KalmanWork>,
{
    let Covariance::Diag(v_pred) = &belief.cov else {
        return Err(Error::Contract(
            "bbb_online_update requires a diagonal belief".into(),
        ));
    };
    if iters == 0 {
        return Ok(());
    }
    let v_pred = v_pred.clone();
    let mu_pred = belief.mean.clone();
    let mut mu = mu_pred.clone();
    let mut log_v = v_pred.map(f64::ln);
    let p = mu.len();
    for it in 0..iters {
        let work = surrogate(&mu)?;
        let e = work.innovation(bits)?;
        let v = log_v.map(f64::exp);
        let b = e.len();
        // per-coordinate curvature diag(Hᵀ R⁻¹ H)
        let curv = DVector::from_fn(p, |j, _| {
            (0..b)
                .map(|i| work.h[(i, j)] * work.h[(i, j)] / work.rt[i])
                .sum::<f64>()
        });
        let weighted = DVector::from_fn(b, |i, _| e[i] / work.rt[i]);
        let value = ElboValue {
            nll: 0.5 * e.dot(&weighted) + 0.5 * v.dot(&curv),
            kl: 0.5
                * (0..p)
                    .map(|j| {
                        let d = mu[j] - mu_pred[j];
                        v[j] / v_pred[j] + d * d / v_pred[j] - 1.0 - (v[j] / v_pred[j]).ln()
                    })
                    .sum::<f64>(),
        };
        if !(value.nll + value.kl).is_finite() {
            return Err(Error::Numerical {
                op: "bbb_online_update",
                detail: format!(
                    "non-finite online ELBO at iteration {it} (nll={}, kl={})",
                    value.nll, value.kl
                ),
            });
        }
        let grad_mu = -(work.h.transpose() * weighted) + (&mu - &mu_pred).component_div(&v_pred);
        let grad_log_v = DVector::from_fn(p, |j, _| {
            v[j] * (0.5 * curv[j] + 0.5 * (1.0 / v_pred[j] - 1.0 / v[j]))
        });
        mu.axpy(-lr, &grad_mu, 1.0);
        log_v.axpy(-lr, &grad_log_v, 1.0);
    }
    belief.mean = mu;
    belief.cov = Covariance::Diag(log_v.map(f64::exp));
    if !belief.is_finite() {
        return Err(Error::Numerical {
            op: "bbb_online_update",
            detail: "non-finite variational parameters".into(),
        });
    }
    Ok(())
}

/// `iters` plain gradient steps on the summed binary cross-entropy of one sample.
pub fn gd_online_update(
    theta: &mut DVector<f64>,
    net: &MlpSpec,
    x: &[f64],
    bits: &[f64],
    iters: usize,
    lr: f64,
) -> Result<()> {
    check_dim("parameter vector", net.num_params(), theta.len())?;
    check_dim("network input", net.input_dim(), x.len())?;
    check_dim("label bits", net.output_dim(), bits.len())?;
    for _ in 0..iters {
        // log-likelihood gradient is the negative cross-entropy gradient
        let (_, g) = net.log_lik_grad(theta.as_slice(), x, bits);
        theta.axpy(lr, &g, 1.0);
    }
    Ok(())
}

/// Labelled training sample `(x, bits)`.
pub type Sample = (Vec<f64>, Vec<f64>);

/// `epochs` passes over a shuffled buffer in mini-batches of `batch`, each
/// step following the batch-mean cross-entropy gradient.
pub fn sgd_batch_update<R: Rng + ?Sized>(
    theta: &mut DVector<f64>,
    net: &MlpSpec,
    buffer: &[Sample],
    epochs: usize,
    batch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    if buffer.is_empty() {
        return Ok(());
    }
    if batch == 0 {
        return Err(Error::Config("SGD batch size must be positive".into()));
    }
    check_dim("parameter vector", net.num_params(), theta.len())?;
    for (x, b) in buffer {
        check_dim("network input", net.input_dim(), x.len())?;
        check_dim("label bits", net.output_dim(), b.len())?;
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let mut grad = DVector::zeros(theta.len());
            for &i in chunk {
                let (x, b) = &buffer[i];
                grad += net.log_lik_grad(theta.as_slice(), x, b).1;
            }
            theta.axpy(lr / chunk.len() as f64, &grad, 1.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::CovKind;
    use crate::network::sigmoid;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_and_theta(seed: u64) -> (MlpSpec, DVector<f64>) {
        let net = MlpSpec::with_hidden(3, &[5], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = net.init_params(1.0, &mut rng).0;
        (net, theta)
    }

    #[test]
    fn bbb_zero_iterations_or_rate_is_identity() {
        let (net, theta) = net_and_theta(1);
        let b0 = GaussianBelief::prior(theta, 0.5, CovKind::Diag);
        let mut b = b0.clone();
        bbb_online_update(&mut b, &net, &[0.1, 0.2, 0.3], &[1.0, 0.0], 0, 0.1, 1e-6).unwrap();
        assert_eq!(b, b0);
        let mut b = b0.clone();
        bbb_online_update(&mut b, &net, &[0.1, 0.2, 0.3], &[1.0, 0.0], 5, 0.0, 1e-6).unwrap();
        assert!((b.mean.clone() - b0.mean.clone()).abs().max() == 0.0);
        assert!(
            (b.variances().unwrap() - b0.variances().unwrap())
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn bbb_requires_diag() {
        let (net, theta) = net_and_theta(1);
        let mut b = GaussianBelief::prior(theta, 0.5, CovKind::Full);
        assert!(matches!(
            bbb_online_update(&mut b, &net, &[0.1, 0.2, 0.3], &[1.0, 0.0], 1, 0.1, 1e-6),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bbb_scalar_quadratic_recursion() {
        // 1-D linear-Gaussian surrogate: pred(mu) = c + h (mu - mu0), fixed r.
        let (h, c, r, y) = (0.8, 0.3, 0.2, 1.0);
        let (mu0, v0) = (0.5, 0.4);
        let (iters, lr) = (7, 0.05);
        let mut belief = GaussianBelief {
            mean: DVector::from_vec(vec![mu0]),
            cov: Covariance::Diag(DVector::from_vec(vec![v0])),
        };
        bbb_steps(&mut belief, &[y], iters, lr, |mu| {
            Ok(KalmanWork {
                pred: DVector::from_vec(vec![c + h * (mu[0] - mu0)]),
                h: DMatrix::from_element(1, 1, h),
                rt: DVector::from_vec(vec![r]),
            })
        })
        .unwrap();
        // hand iteration
        let (mut mu, mut lv) = (mu0, v0.ln());
        for _ in 0..iters {
            let v = lv.exp();
            let e = y - (c + h * (mu - mu0));
            let g_mu = -h * e / r + (mu - mu0) / v0;
            let g_lv = v * (0.5 * h * h / r + 0.5 * (1.0 / v0 - 1.0 / v));
            mu -= lr * g_mu;
            lv -= lr * g_lv;
        }
        assert!((belief.mean[0] - mu).abs() < 1e-14);
        assert!((belief.variances().unwrap()[0] - lv.exp()).abs() < 1e-14);
    }

    #[test]
    fn bbb_non_finite_aborts() {
        let mut belief = GaussianBelief::prior(DVector::from_vec(vec![0.0]), 1.0, CovKind::Diag);
        let res = bbb_steps(&mut belief, &[1.0], 3, 0.1, |_| {
            Ok(KalmanWork {
                pred: DVector::from_vec(vec![f64::NAN]),
                h: DMatrix::from_element(1, 1, 1.0),
                rt: DVector::from_vec(vec![0.25]),
            })
        });
        assert!(matches!(res, Err(Error::Numerical { .. })));
    }

    #[test]
    fn gd_perfect_prediction_is_stationary() {
        let net = MlpSpec::new(vec![1, 1]).unwrap();
        let mut theta = DVector::from_vec(vec![0.0, 40.0]);
        let before = theta.clone();
        gd_online_update(&mut theta, &net, &[1.0], &[1.0], 10, 0.1).unwrap();
        assert!((theta - before).abs().max() < 1e-8);
    }

    #[test]
    fn gd_logistic_single_step() {
        let net = MlpSpec::new(vec![2, 1]).unwrap();
        let mut theta = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        let x = [1.5, 0.5];
        let lr = 0.3;
        let l = sigmoid(0.2 * 1.5 - 0.4 * 0.5 + 0.1);
        let expect = [0.2, -0.4, 0.1]
            .iter()
            .zip([x[0], x[1], 1.0])
            .map(|(t, d)| t - lr * (l - 0.0) * d)
            .collect::<Vec<_>>();
        gd_online_update(&mut theta, &net, &x, &[0.0], 1, lr).unwrap();
        for (a, b) in theta.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gd_zero_rate_is_identity() {
        let (net, theta0) = net_and_theta(2);
        let mut theta = theta0.clone();
        gd_online_update(&mut theta, &net, &[1.0, 2.0, 3.0], &[0.0, 1.0], 10, 0.0).unwrap();
        assert_eq!(theta, theta0);
    }

    #[test]
    fn sgd_single_sample_equals_gd() {
        let (net, theta0) = net_and_theta(3);
        let x = vec![0.3, -0.7, 1.1];
        let bits = vec![1.0, 1.0];
        let mut a = theta0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sgd_batch_update(
            &mut a,
            &net,
            &[(x.clone(), bits.clone())],
            6,
            1,
            0.05,
            &mut rng,
        )
        .unwrap();
        let mut b = theta0;
        gd_online_update(&mut b, &net, &x, &bits, 6, 0.05).unwrap();
        assert!((a - b).abs().max() < 1e-15);
    }

    #[test]
    fn sgd_zero_rate_and_empty_buffer() {
        let (net, theta0) = net_and_theta(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = theta0.clone();
        sgd_batch_update(&mut t, &net, &[], 3, 2, 0.1, &mut rng).unwrap();
        assert_eq!(t, theta0);
        let buf = vec![(vec![1.0, 0.0, 0.0], vec![0.0, 1.0]); 5];
        sgd_batch_update(&mut t, &net, &buf, 3, 2, 0.0, &mut rng).unwrap();
        assert_eq!(t, theta0);
    }

    #[test]
    fn sgd_is_reproducible_with_fixed_seed() {
        let (net, theta0) = net_and_theta(5);
        let mut data_rng = ChaCha8Rng::seed_from_u64(77);
        let buf: Vec<Sample> = (0..9)
            .map(|_| {
                (
                    (0..3).map(|_| data_rng.random_range(-1.0..1.0)).collect(),
                    vec![f64::from(data_rng.random_range(0..2u8)), 0.0],
                )
            })
            .collect();
        let run = || {
            let mut t = theta0.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            sgd_batch_update(&mut t, &net, &buf, 2, 4, 0.1, &mut rng).unwrap();
            t
        };
        assert_eq!(run(), run());
    }
}
