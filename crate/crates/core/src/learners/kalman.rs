//! Linearised-Gaussian update rules: CM-EKF (full covariance), VD-EKF
//! (diagonal) and Lo-Fi (diagonal-plus-low-rank precision), plus the
//! precision-form natural-gradient step used to cross-check CM-EKF.

use nalgebra::{DMatrix, DVector};

use crate::belief::{floor_obs_cov, Covariance, GaussianBelief};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, sorted_symmetric_eigen, symmetrize};
use crate::network::MlpSpec;

/// First-order expansion of a module around the predicted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanWork {
    /// `h_mu(x)`, the soft estimates at the predicted mean.
    pub pred: DVector<f64>,
    /// Jacobian, `B x P`.
    pub h: DMatrix<f64>,
    /// Floored Bernoulli variances (diagonal of `R_t`).
    pub rt: DVector<f64>,
}

impl KalmanWork {
    pub fn linearize(net: &MlpSpec, mean: &DVector<f64>, x: &[f64], floor: f64) -> Result<Self> {
        check_dim("parameter vector", net.num_params(), mean.len())?;
        check_dim("network input", net.input_dim(), x.len())?;
        let (pred, h) = net.output_and_jacobian(mean.as_slice(), x);
        let rt: Vec<f64> = pred.iter().map(|&l| l * (1.0 - l)).collect();
        let rt = floor_obs_cov(&rt, floor);
        Ok(Self {
            pred: DVector::from_vec(pred),
            h,
            rt: DVector::from_vec(rt),
        })
    }

    pub fn innovation(&self, bits: &[f64]) -> Result<DVector<f64>> {
        check_dim("label bits", self.pred.len(), bits.len())?;
        Ok(DVector::from_iterator(
            bits.len(),
            bits.iter().zip(self.pred.iter()).map(|(b, l)| b - l),
        ))
    }

    fn innovation_cov(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = &self.h * u;
        for i in 0..s.nrows() {
            s[(i, i)] += self.rt[i];
        }
        s
    }

    /// `Hᵀ R^{-1/2}`, `P x B`.
    fn whitened_h_t(&self) -> DMatrix<f64> {
        let mut ht = self.h.transpose();
        for (j, mut col) in ht.column_iter_mut().enumerate() {
            col /= self.rt[j].sqrt();
        }
        ht
    }
}

fn wrong_repr(op: &str, want: &str) -> Error {
    Error::Contract(format!("{op} requires a {want} belief"))
}

/// Applies `mean += U S⁻¹ e` given `U = Σ Hᵀ` and returns `L⁻¹` for the
/// Cholesky factor `S = L Lᵀ`, so callers can form `G = L⁻¹ Uᵀ` with
/// `Gᵀ G = U S⁻¹ Uᵀ`.
fn gain_step(
    mean: &mut DVector<f64>,
    work: &KalmanWork,
    u: &DMatrix<f64>,
    e: &DVector<f64>,
    op: &'static str,
) -> Result<DMatrix<f64>> {
    let s = work.innovation_cov(u);
    let b = s.nrows();
    let chol = cholesky_with_jitter(&s, op)?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(b, b))
        .ok_or_else(|| Error::Numerical {
            op,
            detail: "singular innovation factor".into(),
        })?;
    // S⁻¹ e = L⁻ᵀ L⁻¹ e
    let w = linv.tr_mul(&(&linv * e));
    mean.gemv(1.0, u, &w, 1.0);
    Ok(linv)
}

/// CM-EKF: `K = Σ Hᵀ (H Σ Hᵀ + R)⁻¹`, `mu += K (b - h_mu(x))`, `Σ -= K H Σ`.
pub fn cmekf_update(belief: &mut GaussianBelief, work: &KalmanWork, bits: &[f64]) -> Result<()> {
    let e = work.innovation(bits)?;
    let Covariance::Full(sigma) = &mut belief.cov else {
        return Err(wrong_repr("cmekf_update", "full-covariance"));
    };
    check_dim("jacobian columns", sigma.nrows(), work.h.ncols())?;
    let u = &*sigma * work.h.transpose();
    let linv = gain_step(&mut belief.mean, work, &u, &e, "cmekf_update")?;
    // Σ - U S⁻¹ Uᵀ = Σ - Gᵀ G with G = L⁻¹ Uᵀ
    let g = linv * u.transpose();
    sigma.gemm_tr(-1.0, &g, &g, 1.0);
    symmetrize(sigma);
    Ok(())
}

/// VD-EKF: Kalman mean step with a diagonal prior, precision of the
/// posterior projected onto the diagonal: `1/v' = 1/v + diag(Hᵀ R⁻¹ H)`.
pub fn vdekf_update(belief: &mut GaussianBelief, work: &KalmanWork, bits: &[f64]) -> Result<()> {
    let e = work.innovation(bits)?;
    let Covariance::Diag(v) = &mut belief.cov else {
        return Err(wrong_repr("vdekf_update", "diagonal"));
    };
    check_dim("jacobian columns", v.len(), work.h.ncols())?;
    let h = &work.h;
    let u = DMatrix::from_fn(v.len(), h.nrows(), |p, i| h[(i, p)] * v[p]);
    gain_step(&mut belief.mean, work, &u, &e, "vdekf_update")?;
    for (vp, col) in v.iter_mut().zip(h.column_iter()) {
        let info: f64 = col.iter().zip(work.rt.iter()).map(|(x, r)| x * x / r).sum();
        *vp = 1.0 / (1.0 / *vp + info);
    }
    Ok(())
}

/// `Σ Y` for `Σ = (D + W Wᵀ)⁻¹`, by Woodbury.
pub(crate) fn dlr_apply_cov(
    diag: &DVector<f64>,
    factor: &DMatrix<f64>,
    y: &DMatrix<f64>,
    op: &'static str,
) -> Result<DMatrix<f64>> {
    let mut dy = y.clone();
    for (p, mut row) in dy.row_iter_mut().enumerate() {
        row /= diag[p];
    }
    let r = factor.ncols();
    if r == 0 {
        return Ok(dy);
    }
    let mut dw = factor.clone();
    for (p, mut row) in dw.row_iter_mut().enumerate() {
        row /= diag[p];
    }
    let mut inner = factor.transpose() * &dw;
    for i in 0..r {
        inner[(i, i)] += 1.0;
    }
    let chol = cholesky_with_jitter(&inner, op)?;
    let coef = chol.solve(&(factor.transpose() * &dy));
    Ok(dy - dw * coef)
}

/// Adds the columns of `extra` to the precision `D + W Wᵀ` and truncates back
/// to `W.ncols()` columns. Discarded directions are folded into `D` so the
/// diagonal of the precision is preserved.
pub(crate) fn dlr_absorb(diag: &mut DVector<f64>, factor: &mut DMatrix<f64>, extra: &DMatrix<f64>) {
    let r = factor.ncols();
    let p = factor.nrows();
    if r == 0 {
        for (i, row) in extra.row_iter().enumerate() {
            diag[i] += row.norm_squared();
        }
        return;
    }
    let m = r + extra.ncols();
    let mut stacked = DMatrix::zeros(p, m);
    stacked.columns_mut(0, r).copy_from(factor);
    stacked.columns_mut(r, extra.ncols()).copy_from(extra);
    let gram = stacked.transpose() * &stacked;
    let (_, vecs) = sorted_symmetric_eigen(gram);
    let proj = stacked * vecs;
    factor.copy_from(&proj.columns(0, r));
    let dropped = proj.columns(r, m - r);
    for (i, row) in dropped.row_iter().enumerate() {
        diag[i] += row.norm_squared();
    }
}

/// Lo-Fi: Kalman mean step under the DLR predictive covariance; precision
/// `D + W Wᵀ + Hᵀ R⁻¹ H` re-projected to rank `R`.
pub fn lofi_update(belief: &mut GaussianBelief, work: &KalmanWork, bits: &[f64]) -> Result<()> {
    let e = work.innovation(bits)?;
    let Covariance::Dlr { diag, factor } = &mut belief.cov else {
        return Err(wrong_repr("lofi_update", "diagonal-plus-low-rank"));
    };
    check_dim("jacobian columns", diag.len(), work.h.ncols())?;
    let u = dlr_apply_cov(diag, factor, &work.h.transpose(), "lofi_update")?;
    gain_step(&mut belief.mean, work, &u, &e, "lofi_update")?;
    dlr_absorb(diag, factor, &work.whitened_h_t());
    Ok(())
}

/// Natural-gradient step on the per-sample ELBO under the linearised
/// Gaussian likelihood, written in precision form:
/// `Σ'⁻¹ = Σ⁻¹ + Hᵀ R⁻¹ H`, `mu' = mu + Σ' Hᵀ R⁻¹ (b - h_mu(x))`.
///
/// Cubic in `P`; it exists to cross-check [`cmekf_update`].
pub fn bong_linearized_update(
    belief: &mut GaussianBelief,
    work: &KalmanWork,
    bits: &[f64],
) -> Result<()> {
    let e = work.innovation(bits)?;
    let Covariance::Full(sigma) = &mut belief.cov else {
        return Err(wrong_repr("bong_linearized_update", "full-covariance"));
    };
    let mut prec = cholesky_with_jitter(sigma, "bong_linearized_update")?.inverse();
    let ht = work.whitened_h_t();
    prec.gemm(1.0, &ht, &ht.transpose(), 1.0);
    let post = cholesky_with_jitter(&prec, "bong_linearized_update")?.inverse();
    let scaled = DVector::from_iterator(e.len(), (0..e.len()).map(|i| e[i] / work.rt[i]));
    let grad = work.h.transpose() * scaled;
    belief.mean += &post * grad;
    *sigma = post;
    symmetrize(sigma);
    Ok(())
}
