//! Model-based reference decoders: MAP on the rotation channel, NLMS channel
//! tracking with minimum-distance decoding, and MMSE detection with known CSI.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::channel::{rotate, Constellation, C64};
use crate::error::{check_dim, Error, Result};

/// Nearest point of the constellation rotated by `phi`; lowest index on ties.
///
/// With isotropic Gaussian noise and equiprobable symbols this is the MAP rule,
/// so `noise_var` does not affect the decision.
pub fn map_decode(r: [f64; 2], phi: f64, c: &Constellation, _noise_var: f64) -> usize {
    // rotating r back is an isometry, so distances are unchanged
    let back = rotate(-phi, r);
    c.nearest(C64::new(back[0], back[1]))
}

/// NLMS estimate of the real 2x2 composite channel `r = H s + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct NlmsState {
    pub h_hat: Matrix2<f64>,
    pub eta: f64,
    pub delta: f64,
}

impl Default for NlmsState {
    fn default() -> Self {
        Self {
            h_hat: Matrix2::zeros(),
            eta: 0.5,
            delta: 1e-6,
        }
    }
}

impl NlmsState {
    pub fn new(eta: f64, delta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 2.0 && delta > 0.0) {
            return Err(Error::Config(format!(
                "NLMS needs 0 < eta < 2 and delta > 0, got eta={eta}, delta={delta}"
            )));
        }
        Ok(Self {
            h_hat: Matrix2::zeros(),
            eta,
            delta,
        })
    }

    /// `H <- H + eta (r - H s) sᵀ / (delta + |s|²)`.
    pub fn step(&mut self, s: [f64; 2], r: [f64; 2]) {
        let s = Vector2::from(s);
        let e = Vector2::from(r) - self.h_hat * s;
        let scale = self.eta / (self.delta + s.norm_squared());
        self.h_hat += e * s.transpose() * scale;
    }

    /// Minimum-distance decision `argmin |r - H s|` over the constellation.
    pub fn decode(&self, r: [f64; 2], c: &Constellation) -> usize {
        let r = Vector2::from(r);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in c.points().iter().enumerate() {
            let d = (r - self.h_hat * Vector2::new(p.re, p.im)).norm_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Free-function form of [`NlmsState::step`].
pub fn nlms_step(state: &mut NlmsState, s_pilot: [f64; 2], r: [f64; 2]) {
    state.step(s_pilot, r);
}

/// Linear MMSE equaliser followed by per-user nearest-point decisions.
///
/// `r` is the stacked real received vector (length `2N`), `h` is `N x K`.
/// Returns one constellation index per user.
pub fn mmse_detect(
    r: &[f64],
    h: &DMatrix<C64>,
    noise_var: f64,
    c: &Constellation,
) -> Result<Vec<usize>> {
    Ok(mmse_equalize(r, h, noise_var)?
        .iter()
        .map(|&s| c.nearest(s))
        .collect())
}

/// `(Hᴴ H + σ² I)⁻¹ Hᴴ r` with `σ²` the per-complex-entry noise power.
pub fn mmse_equalize(r: &[f64], h: &DMatrix<C64>, noise_var: f64) -> Result<Vec<C64>> {
    let n = h.nrows();
    let k = h.ncols();
    check_dim("received vector", 2 * n, r.len())?;
    let y = DVector::from_fn(n, |i, _| C64::new(r[i], r[n + i]));
    let hh = h.adjoint();
    let mut normal = &hh * h;
    // per-real-dimension variance doubles for a complex entry
    let sigma2 = 2.0 * noise_var;
    for i in 0..k {
        normal[(i, i)] += C64::new(sigma2, 0.0);
    }
    let rhs = &hh * y;
    let lu = normal.lu();
    let s = lu.solve(&rhs).ok_or_else(|| Error::Numerical {
        op: "mmse_detect",
        detail: "singular normal matrix".into(),
    })?;
    if s.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical {
            op: "mmse_detect",
            detail: "singular normal matrix".into(),
        });
    }
    Ok(s.iter().copied().collect())
}
