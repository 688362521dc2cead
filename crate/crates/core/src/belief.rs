//! Gaussian beliefs over module weights and the state-evolution predict step.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, symmetrize};

/// Covariance payload of a [`GaussianBelief`].
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Dense symmetric covariance.
    Full(DMatrix<f64>),
    /// Diagonal covariance (variances).
    Diag(DVector<f64>),
    /// Diagonal-plus-low-rank *precision* `diag(d) + W Wᵀ`, `W` is `P x R`.
    Dlr {
        diag: DVector<f64>,
        factor: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

/// Constants of the first-order Gauss-Markov weight dynamics
/// `theta_t | theta_{t-1} ~ N(gamma * theta_{t-1}, process_var * I)` and of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmHyper {
    #[serde(default = "SsmHyper::default_gamma")]
    pub gamma: f64,
    #[serde(default = "SsmHyper::default_process_var")]
    pub process_var: f64,
    /// Prior covariance is `prior_var * I`.
    #[serde(default = "SsmHyper::default_prior_var")]
    pub prior_var: f64,
    /// Floor applied to the Bernoulli observation variances.
    #[serde(default = "SsmHyper::default_obs_floor")]
    pub obs_floor: f64,
}

impl SsmHyper {
    fn default_gamma() -> f64 {
        0.999
    }
    fn default_process_var() -> f64 {
        1e-4
    }
    fn default_prior_var() -> f64 {
        1.0
    }
    fn default_obs_floor() -> f64 {
        1e-6
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            issues.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.process_var < 0.0 {
            issues.push(format!(
                "process_var must be >= 0, got {}",
                self.process_var
            ));
        }
        if self.prior_var <= 0.0 {
            issues.push(format!("prior_var must be > 0, got {}", self.prior_var));
        }
        if self.obs_floor < 0.0 {
            issues.push(format!("obs_floor must be >= 0, got {}", self.obs_floor));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

impl Default for SsmHyper {
    fn default() -> Self {
        Self {
            gamma: Self::default_gamma(),
            process_var: Self::default_process_var(),
            prior_var: Self::default_prior_var(),
            obs_floor: Self::default_obs_floor(),
        }
    }
}

/// Which covariance representation a belief should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovKind {
    Full,
    Diag,
    Dlr(usize),
}

impl GaussianBelief {
    /// `N(mean, prior_var * I)` in the requested representation.
    pub fn prior(mean: DVector<f64>, prior_var: f64, kind: CovKind) -> Self {
        let p = mean.len();
        let cov = match kind {
            CovKind::Full => Covariance::Full(DMatrix::identity(p, p) * prior_var),
            CovKind::Diag => Covariance::Diag(DVector::from_element(p, prior_var)),
            CovKind::Dlr(r) => Covariance::Dlr {
                diag: DVector::from_element(p, 1.0 / prior_var),
                factor: DMatrix::zeros(p, r),
            },
        };
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn kind(&self) -> CovKind {
        match &self.cov {
            Covariance::Full(_) => CovKind::Full,
            Covariance::Diag(_) => CovKind::Diag,
            Covariance::Dlr { factor, .. } => CovKind::Dlr(factor.ncols()),
        }
    }

    /// Predictive prior under the Gauss-Markov dynamics, in place.
    ///
    /// For the DLR precision `D + W Wᵀ` the inflated covariance
    /// `gamma² Σ + q I` has precision `D' + W' W'ᵀ` with
    /// `D' = D / (gamma² + q D)`, `Λ = (gamma² I + q D)⁻¹`,
    /// `C = (I + q Wᵀ Λ W)⁻¹ = L Lᵀ` and `W' = gamma Λ W L`, so the rank is kept
    /// exactly and no re-projection is needed.
    pub fn predict(&mut self, h: &SsmHyper) -> Result<()> {
        let g = h.gamma;
        let q = h.process_var;
        self.mean *= g;
        match &mut self.cov {
            Covariance::Full(s) => {
                *s *= g * g;
                for i in 0..s.nrows() {
                    s[(i, i)] += q;
                }
            }
            Covariance::Diag(v) => {
                v.apply(|x| *x = g * g * *x + q);
            }
            Covariance::Dlr { diag, factor } => {
                let lambda = diag.map(|d| 1.0 / (g * g + q * d));
                let r = factor.ncols();
                if r > 0 {
                    let mut lw = factor.clone();
                    for (i, mut row) in lw.row_iter_mut().enumerate() {
                        row *= lambda[i];
                    }
                    if q > 0.0 {
                        let mut inner = factor.transpose() * &lw * q;
                        for i in 0..r {
                            inner[(i, i)] += 1.0;
                        }
                        let c = cholesky_with_jitter(&inner, "dlr predict")?.inverse();
                        let l = cholesky_with_jitter(&c, "dlr predict")?.l();
                        *factor = lw * l * g;
                    } else {
                        *factor = lw * g;
                    }
                }
                diag.component_mul_assign(&lambda);
            }
        }
        Ok(())
    }

    /// Dense covariance of any representation.
    pub fn as_covariance(&self) -> Result<DMatrix<f64>> {
        match &self.cov {
            Covariance::Full(s) => Ok(s.clone()),
            Covariance::Diag(v) => Ok(DMatrix::from_diagonal(v)),
            Covariance::Dlr { diag, factor } => {
                if diag.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
                    return Err(Error::Numerical {
                        op: "as_covariance",
                        detail: "DLR diagonal must be strictly positive".into(),
                    });
                }
                let dinv = diag.map(|d| 1.0 / d);
                let mut s = DMatrix::from_diagonal(&dinv);
                let r = factor.ncols();
                if r > 0 {
                    let mut dw = factor.clone();
                    for (i, mut row) in dw.row_iter_mut().enumerate() {
                        row *= dinv[i];
                    }
                    let mut inner = factor.transpose() * &dw;
                    for i in 0..r {
                        inner[(i, i)] += 1.0;
                    }
                    let chol = cholesky_with_jitter(&inner, "as_covariance")?;
                    let solved = chol.solve(&dw.transpose());
                    s -= &dw * solved;
                    symmetrize(&mut s);
                }
                Ok(s)
            }
        }
    }

    /// Marginal variances.
    pub fn variances(&self) -> Result<DVector<f64>> {
        match &self.cov {
            Covariance::Full(s) => Ok(s.diagonal()),
            Covariance::Diag(v) => Ok(v.clone()),
            Covariance::Dlr { .. } => Ok(self.as_covariance()?.diagonal()),
        }
    }

    pub fn is_finite(&self) -> bool {
        let cov_ok = match &self.cov {
            Covariance::Full(s) => s.iter().all(|v| v.is_finite()),
            Covariance::Diag(v) => v.iter().all(|v| v.is_finite()),
            Covariance::Dlr { diag, factor } => {
                diag.iter().chain(factor.iter()).all(|v| v.is_finite())
            }
        };
        cov_ok && self.mean.iter().all(|v| v.is_finite())
    }

    /// Writes the checkpoint text format (see `docs/checkpoint.md`).
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = self.dim();
        let (tag, rank) = match &self.cov {
            Covariance::Full(_) => ("full", 0),
            Covariance::Diag(_) => ("diag", 0),
            Covariance::Dlr { factor, .. } => ("dlr", factor.ncols()),
        };
        writeln!(w, "{CHECKPOINT_TAG}")?;
        writeln!(w, "kind {tag}")?;
        writeln!(w, "dim {p}")?;
        writeln!(w, "rank {rank}")?;
        write_values(&mut w, "mean", self.mean.iter())?;
        match &self.cov {
            Covariance::Full(s) => {
                // row-major
                write_values(
                    &mut w,
                    "cov",
                    (0..p)
                        .flat_map(|i| (0..p).map(move |j| (i, j)))
                        .map(|ij| &s[ij]),
                )?;
            }
            Covariance::Diag(v) => write_values(&mut w, "var", v.iter())?,
            Covariance::Dlr { diag, factor } => {
                write_values(&mut w, "prec_diag", diag.iter())?;
                write_values(
                    &mut w,
                    "factor",
                    (0..p)
                        .flat_map(|i| (0..rank).map(move |j| (i, j)))
                        .map(|ij| &factor[ij]),
                )?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::Parse(format!("reading {what}: {e}"))),
                None => Err(Error::Parse(format!(
                    "unexpected end of file before {what}"
                ))),
            }
        };
        let tag = next("header")?;
        if tag.trim() != CHECKPOINT_TAG {
            return Err(Error::Parse(format!(
                "unsupported checkpoint header '{tag}'"
            )));
        }
        let kind = field(&next("kind")?, "kind")?;
        let p: usize = parse_num(&field(&next("dim")?, "dim")?)?;
        let rank: usize = parse_num(&field(&next("rank")?, "rank")?)?;
        let mean = DVector::from_vec(read_values(&next("mean")?, "mean", p)?);
        let cov = match kind.as_str() {
            "full" => {
                let v = read_values(&next("cov")?, "cov", p * p)?;
                Covariance::Full(DMatrix::from_row_slice(p, p, &v))
            }
            "diag" => Covariance::Diag(DVector::from_vec(read_values(&next("var")?, "var", p)?)),
            "dlr" => {
                let diag = DVector::from_vec(read_values(&next("prec_diag")?, "prec_diag", p)?);
                let f = read_values(&next("factor")?, "factor", p * rank)?;
                Covariance::Dlr {
                    diag,
                    factor: DMatrix::from_row_slice(p, rank, &f),
                }
            }
            other => return Err(Error::Parse(format!("unknown covariance kind '{other}'"))),
        };
        Ok(Self { mean, cov })
    }
}

pub const CHECKPOINT_TAG: &str = "modrx-belief v1";

fn write_values<'a, W: Write>(
    w: &mut W,
    name: &str,
    values: impl Iterator<Item = &'a f64>,
) -> std::io::Result<()> {
    let mut line = String::from(name);
    for v in values {
        // `{:?}` prints the shortest representation that round-trips exactly.
        let _ = write!(line, " {v:?}");
    }
    writeln!(w, "{line}")
}

fn field(line: &str, name: &str) -> Result<String> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next()) {
        (Some(k), Some(v)) if k == name => Ok(v.to_string()),
        _ => Err(Error::Parse(format!(
            "expected '{name} <value>', got '{line}'"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("invalid number '{s}'")))
}

fn read_values(line: &str, name: &str, n: usize) -> Result<Vec<f64>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(name) {
        return Err(Error::Parse(format!("expected '{name}' record")));
    }
    let values: Vec<f64> = parts.map(parse_num).collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::Parse(format!(
            "'{name}' holds {} values, expected {n}",
            values.len()
        )));
    }
    Ok(values)
}

/// Elementwise `max(r_ii, floor)` on a diagonal observation covariance.
pub fn floor_obs_cov(rt: &[f64], floor: f64) -> Vec<f64> {
    rt.iter().map(|&r| r.max(floor)).collect()
}
