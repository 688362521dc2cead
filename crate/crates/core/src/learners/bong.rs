//! BONG with the empirical-Fisher approximation: the Hessian expectation in
//! the precision step is replaced by the mean outer product of sampled
//! log-likelihood gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::kalman::{dlr_absorb, dlr_apply_cov};
use crate::belief::{Covariance, GaussianBelief};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, sorted_symmetric_eigen, symmetrize};
use crate::network::MlpSpec;

/// Draws `m` parameter samples from the belief in antithetic pairs
/// (`mu ± Σ^{1/2} z`); an odd `m` gets one unpaired `+` sample.
pub fn antithetic_samples<R: Rng + ?Sized>(
    belief: &GaussianBelief,
    m: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let p = belief.dim();
    let sqrt_apply = sqrt_cov_operator(belief)?;
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dz = sqrt_apply(&z);
        out.push(&belief.mean + &dz);
        if out.len() < m {
            out.push(&belief.mean - dz);
        }
    }
    Ok(out)
}

type SqrtOp = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;

/// Returns `z -> S z` with `S Sᵀ = Σ`.
fn sqrt_cov_operator(belief: &GaussianBelief) -> Result<SqrtOp> {
    match &belief.cov {
        Covariance::Full(s) => {
            let l = cholesky_with_jitter(s, "bong_ef sampling")?.l();
            Ok(Box::new(move |z| &l * z))
        }
        Covariance::Diag(v) => {
            let sd = v.map(f64::sqrt);
            Ok(Box::new(move |z| z.component_mul(&sd)))
        }
        Covariance::Dlr { diag, factor } => {
            // Σ = D^{-1/2} (I + A Aᵀ)⁻¹ D^{-1/2} with A = D^{-1/2} W; the symmetric
            // square root of (I + A Aᵀ)⁻¹ is I + U diag((1+s²)^{-1/2} - 1) Uᵀ.
            let dis = diag.map(|d| 1.0 / d.sqrt());
            let mut a = factor.clone();
            for (i, mut row) in a.row_iter_mut().enumerate() {
                row *= dis[i];
            }
            let (vals, vecs) = sorted_symmetric_eigen(a.transpose() * &a);
            let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-14).collect();
            let mut u = DMatrix::zeros(a.nrows(), keep.len());
            let mut coef = DVector::zeros(keep.len());
            for (j, &i) in keep.iter().enumerate() {
                let s = vals[i].sqrt();
                u.set_column(j, &(&a * vecs.column(i) / s));
                coef[j] = 1.0 / (1.0 + vals[i]).sqrt() - 1.0;
            }
            Ok(Box::new(move |z| {
                let proj = u.transpose() * z;
                let y = z + &u * proj.component_mul(&coef);
                y.component_mul(&dis)
            }))
        }
    }
}

/// BONG-EF step from explicit parameter samples.
///
/// Precision gains `(1/M) Σ_m g_m g_mᵀ`; the mean moves by `Σ_new ḡ`, where
/// `g_m` is the log-likelihood gradient at sample `m`.
pub fn bong_ef_update_with_samples(
    belief: &mut GaussianBelief,
    net: &MlpSpec,
    x: &[f64],
    bits: &[f64],
    samples: &[DVector<f64>],
) -> Result<()> {
    let p = belief.dim();
    check_dim("parameter vector", net.num_params(), p)?;
    check_dim("network input", net.input_dim(), x.len())?;
    check_dim("label bits", net.output_dim(), bits.len())?;
    let m = samples.len();
    if m == 0 {
        return Err(Error::Contract(
            "bong_ef_update needs at least one sample".into(),
        ));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut grads = DMatrix::zeros(p, m);
    let mut gbar = DVector::zeros(p);
    for (j, theta) in samples.iter().enumerate() {
        check_dim("parameter sample", p, theta.len())?;
        let (_, g) = net.log_lik_grad(theta.as_slice(), x, bits);
        gbar += &g;
        grads.set_column(j, &(g * scale));
    }
    gbar /= m as f64;
    if !gbar.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical {
            op: "bong_ef_update",
            detail: "non-finite sampled gradient".into(),
        });
    }
    match &mut belief.cov {
        Covariance::Full(sigma) => {
            // (Σ⁻¹ + G Gᵀ)⁻¹ = Σ - Σ G (I + Gᵀ Σ G)⁻¹ Gᵀ Σ
            let sg = &*sigma * &grads;
            let mut inner = grads.transpose() * &sg;
            for i in 0..m {
                inner[(i, i)] += 1.0;
            }
            let chol = cholesky_with_jitter(&inner, "bong_ef_update")?;
            let l = chol.l();
            let f = l
                .solve_lower_triangular(&sg.transpose())
                .ok_or_else(|| Error::Numerical {
                    op: "bong_ef_update",
                    detail: "singular inner factor".into(),
                })?;
            sigma.gemm_tr(-1.0, &f, &f, 1.0);
            symmetrize(sigma);
            belief.mean += &*sigma * gbar;
        }
        Covariance::Diag(v) => {
            for i in 0..p {
                let info = grads.row(i).norm_squared();
                v[i] = 1.0 / (1.0 / v[i] + info);
            }
            belief.mean += v.component_mul(&gbar);
        }
        Covariance::Dlr { diag, factor } => {
            dlr_absorb(diag, factor, &grads);
            let step = dlr_apply_cov(
                diag,
                factor,
                &DMatrix::from_column_slice(p, 1, gbar.as_slice()),
                "bong_ef_update",
            )?;
            belief.mean += step.column(0);
        }
    }
    Ok(())
}

/// BONG-EF with `m` antithetic samples from the predictive belief.
pub fn bong_ef_update<R: Rng + ?Sized>(
    belief: &mut GaussianBelief,
    net: &MlpSpec,
    x: &[f64],
    bits: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<()> {
    if m == 0 {
        return Err(Error::Contract(
            "bong_ef_update needs at least one sample".into(),
        ));
    }
    let samples = antithetic_samples(belief, m, rng)?;
    bong_ef_update_with_samples(belief, net, x, bits, &samples)
}
