//! Compact feed-forward networks over a flat parameter vector.
//!
//! Parameter layout: for each layer in order, the weight matrix
//! (`d_out x d_in`, row-major) followed by its bias vector. Beliefs index
//! weights with exactly this layout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Hidden layers use ReLU, the output layer an elementwise sigmoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

/// Flattened parameters of an [`MlpSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub DVector<f64>);

/// Weights and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone)]
struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    /// `d_in -> hidden... -> d_out`.
    pub fn with_hidden(d_in: usize, hidden: &[usize], d_out: usize) -> Result<Self> {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(d_in);
        w.extend_from_slice(hidden);
        w.push(d_out);
        Self::new(w)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `l`'s weights in the flat vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Gaussian initialisation with weight variance `scale / fan_in` and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> FlatParams {
        let mut theta = DVector::zeros(self.num_params());
        let mut off = 0;
        for w in self.widths.windows(2) {
            let sd = (scale / w[0] as f64).sqrt();
            for i in 0..w[0] * w[1] {
                let z: f64 = rng.sample(StandardNormal);
                theta[off + i] = sd * z;
            }
            off += w[0] * w[1] + w[1];
        }
        FlatParams(theta)
    }

    pub fn unflatten(&self, theta: &FlatParams) -> Result<Vec<LayerParams>> {
        check_dim("flat parameters", self.num_params(), theta.0.len())?;
        let mut off = 0;
        let mut out = Vec::with_capacity(self.num_layers());
        for w in self.widths.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let weights =
                DMatrix::from_row_slice(d_out, d_in, &theta.0.as_slice()[off..off + d_in * d_out]);
            off += d_in * d_out;
            let bias = DVector::from_column_slice(&theta.0.as_slice()[off..off + d_out]);
            off += d_out;
            out.push(LayerParams { weights, bias });
        }
        Ok(out)
    }

    pub fn flatten(&self, layers: &[LayerParams]) -> Result<FlatParams> {
        check_dim("layer count", self.num_layers(), layers.len())?;
        let mut theta = Vec::with_capacity(self.num_params());
        for (l, w) in self.widths.windows(2).enumerate() {
            let lp = &layers[l];
            if lp.weights.shape() != (w[1], w[0]) {
                return Err(Error::Dimension {
                    what: "layer weights",
                    expected: w[0] * w[1],
                    got: lp.weights.len(),
                });
            }
            check_dim("layer bias", w[1], lp.bias.len())?;
            for r in 0..w[1] {
                theta.extend(lp.weights.row(r).iter());
            }
            theta.extend(lp.bias.iter());
        }
        Ok(FlatParams(DVector::from_vec(theta)))
    }

    fn check_inputs(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.num_params(), theta.len())?;
        check_dim("network input", self.input_dim(), x.len())
    }

    fn trace(&self, theta: &[f64], x: &[f64]) -> Trace {
        let n = self.num_layers();
        let mut acts = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (d_in, d_out) = (w[0], w[1]);
            let input = &acts[l];
            let wts = &theta[off..off + d_in * d_out];
            let bias = &theta[off + d_in * d_out..off + d_in * d_out + d_out];
            let z: Vec<f64> = (0..d_out)
                .map(|r| {
                    let row = &wts[r * d_in..(r + 1) * d_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[r]
                })
                .collect();
            let a: Vec<f64> = if l + 1 == n {
                z.iter().map(|&v| sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            off += d_in * d_out + d_out;
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Soft estimates `h_theta(x)` in `(0, 1)^B`.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(theta, x)?;
        Ok(self.forward_unchecked(theta, x))
    }

    pub(crate) fn forward_unchecked(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        self.trace(theta, x).acts.pop().unwrap()
    }

    /// Output-layer logits (pre-sigmoid).
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(theta, x)?;
        Ok(self.trace(theta, x).pre.pop().unwrap())
    }

    /// Back-propagates `seeds` (rows = output directions on the logits) to
    /// parameter gradients. Row `i` of the result is `seeds_i^T dz/dtheta`.
    fn backprop(&self, theta: &[f64], tr: &Trace, seeds: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = seeds.nrows();
        let p = self.num_params();
        let mut out = DMatrix::zeros(rows, p);
        let n = self.num_layers();
        // deltas[i][j]: gradient of row i w.r.t. pre-activation j of the current layer
        let mut deltas: Vec<Vec<f64>> = (0..rows)
            .map(|i| seeds.row(i).iter().copied().collect())
            .collect();
        for l in (0..n).rev() {
            let (d_in, d_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let input = &tr.acts[l];
            for (i, delta) in deltas.iter().enumerate() {
                for r in 0..d_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let base = off + r * d_in;
                    for c in 0..d_in {
                        out[(i, base + c)] = d * input[c];
                    }
                    out[(i, off + d_in * d_out + r)] = d;
                }
            }
            if l == 0 {
                break;
            }
            let wts = &theta[off..off + d_in * d_out];
            let below = &tr.pre[l - 1];
            for delta in deltas.iter_mut() {
                let mut next = vec![0.0; d_in];
                for r in 0..d_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &wts[r * d_in..(r + 1) * d_in];
                    for c in 0..d_in {
                        next[c] += row[c] * d;
                    }
                }
                // ReLU derivative, 0 at the kink.
                for (v, z) in next.iter_mut().zip(below) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
                *delta = next;
            }
        }
        out
    }

    /// Jacobian `d h_theta(x) / d theta`, shape `B x P`.
    pub fn jacobian(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_inputs(theta, x)?;
        Ok(self.output_and_jacobian(theta, x).1)
    }

    /// Soft estimates together with their Jacobian, from one forward pass.
    pub fn output_and_jacobian(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let tr = self.trace(theta, x);
        let out = tr.acts.last().unwrap().clone();
        let b = out.len();
        let seeds = DMatrix::from_fn(
            b,
            b,
            |i, j| {
                if i == j {
                    out[i] * (1.0 - out[i])
                } else {
                    0.0
                }
            },
        );
        let jac = self.backprop(theta, &tr, &seeds);
        (out, jac)
    }

    /// Jacobian of the logits, shape `B x P`.
    pub fn logit_jacobian(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_inputs(theta, x)?;
        let tr = self.trace(theta, x);
        let b = self.output_dim();
        Ok(self.backprop(theta, &tr, &DMatrix::identity(b, b)))
    }

    /// Gradient of the Bernoulli log-likelihood `sum_i b_i ln l_i + (1-b_i) ln(1-l_i)`
    /// with respect to the parameters, together with the soft estimates.
    pub fn log_lik_grad(&self, theta: &[f64], x: &[f64], bits: &[f64]) -> (Vec<f64>, DVector<f64>) {
        let tr = self.trace(theta, x);
        let out = tr.acts.last().unwrap().clone();
        let seed = DMatrix::from_fn(1, out.len(), |_, j| bits[j] - out[j]);
        let g = self.backprop(theta, &tr, &seed);
        (
            out,
            DVector::from_iterator(g.ncols(), g.row(0).iter().copied()),
        )
    }
}

/// Mean and (diagonal) covariance of the Bernoulli bit vector with means `l`.
pub fn bernoulli_moments(l: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cov = l.iter().map(|&p| p * (1.0 - p)).collect();
    (l.to_vec(), cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_module_size() {
        // DeepSIC module for K=3, N=5, B=2 with 24 hidden units.
        let spec = MlpSpec::with_hidden(16, &[24], 2).unwrap();
        assert_eq!(spec.num_params(), 458);
        let single = MlpSpec::with_hidden(2, &[10], 2).unwrap();
        assert_eq!(single.num_params(), 52);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn zero_params_give_half() {
        let spec = MlpSpec::with_hidden(4, &[5, 3], 2).unwrap();
        let theta = vec![0.0; spec.num_params()];
        let l = spec.forward(&theta, &[1.0, -2.0, 0.3, 4.0]).unwrap();
        assert_eq!(l, vec![0.5, 0.5]);
    }

    #[test]
    fn saturates_towards_one() {
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let theta = [1.0, 0.0, 0.0];
        let l = spec.forward(&theta, &[40.0, 0.0]).unwrap()[0];
        assert!(l > 0.999_999 && l <= 1.0);
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let spec = MlpSpec::with_hidden(3, &[4], 1).unwrap();
        let theta = vec![0.0; spec.num_params()];
        assert!(matches!(
            spec.forward(&theta, &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(spec.forward(&theta[1..], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn logistic_jacobian_closed_form() {
        let spec = MlpSpec::new(vec![3, 1]).unwrap();
        let theta = [0.3, -0.2, 0.5, 0.1];
        let x = [1.0, 2.0, -1.5];
        let l = spec.forward(&theta, &x).unwrap()[0];
        let jac = spec.jacobian(&theta, &x).unwrap();
        let expect = [x[0], x[1], x[2], 1.0].map(|v| l * (1.0 - l) * v);
        for (a, b) in jac.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dead_relu_zeroes_hidden_weight_columns() {
        let spec = MlpSpec::with_hidden(2, &[3], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layers = spec.unflatten(&spec.init_params(1.0, &mut rng)).unwrap();
        layers[0].bias.fill(-10.0);
        let theta = spec.flatten(&layers).unwrap();
        let jac = spec.jacobian(theta.0.as_slice(), &[0.1, -0.2]).unwrap();
        // first layer: 2*3 weights + 3 biases
        assert!(jac.columns(0, 9).iter().all(|&v| v == 0.0));
        // output bias still matters
        assert!(jac[(0, spec.num_params() - 2)] != 0.0);
    }

    #[test]
    fn flatten_roundtrip() {
        let spec = MlpSpec::with_hidden(5, &[7, 4], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = spec.init_params(2.0, &mut rng);
        let back = spec.flatten(&spec.unflatten(&theta).unwrap()).unwrap();
        assert_eq!(theta, back);
    }

    #[test]
    fn log_lik_grad_matches_jacobian_identity() {
        let spec = MlpSpec::with_hidden(4, &[6], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = spec.init_params(1.0, &mut rng).0;
        let x = [0.3, -1.0, 0.7, 0.2];
        let bits = [1.0, 0.0];
        let (l, g) = spec.log_lik_grad(theta.as_slice(), &x, &bits);
        let jz = spec.logit_jacobian(theta.as_slice(), &x).unwrap();
        let resid = DVector::from_iterator(2, (0..2).map(|i| bits[i] - l[i]));
        let expect = jz.transpose() * resid;
        assert!((g - expect).abs().max() < 1e-14);
    }

    #[test]
    fn bernoulli_moment_examples() {
        assert_eq!(bernoulli_moments(&[0.5, 0.5]).1, vec![0.25, 0.25]);
        assert!((bernoulli_moments(&[0.2]).1[0] - 0.16).abs() < 1e-15);
        let c = bernoulli_moments(&[1.0 - 1e-12]).1[0];
        assert!(c > 0.0 && c < 1e-11);
    }
}
