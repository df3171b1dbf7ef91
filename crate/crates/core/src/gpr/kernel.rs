//! Stationary covariance functions.
//!
//! Every kernel is `k(x, x') = signal_variance * g(rho)` where `rho` is the
//! Euclidean distance after dividing each input dimension by its length
//! scale:
//!
//! | family       | `g(rho)`                                      |
//! |--------------|-----------------------------------------------|
//! | RBF          | `exp(-rho^2 / 2)`                             |
//! | Matern 1/2   | `exp(-rho)`                                   |
//! | Matern 3/2   | `(1 + sqrt3 rho) exp(-sqrt3 rho)`             |
//! | Matern 5/2   | `(1 + sqrt5 rho + 5 rho^2 / 3) exp(-sqrt5 rho)` |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "0.5")]
    Half,
    #[serde(rename = "1.5")]
    ThreeHalves,
    #[serde(rename = "2.5")]
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(MaternNu::Half),
            v if v == 1.5 => Ok(MaternNu::ThreeHalves),
            v if v == 2.5 => Ok(MaternNu::FiveHalves),
            other => Err(Error::InvalidParameter(format!(
                "Matern nu must be 0.5, 1.5 or 2.5, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Matern { nu: MaternNu },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthScale {
    Isotropic(f64),
    PerDimension(Vec<f64>),
}

impl LengthScale {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LengthScale::Isotropic(l) => vec![*l],
            LengthScale::PerDimension(v) => v.clone(),
        }
    }
}

/// Kernel family plus hyperparameters. `scaled` marks the `Constant * K`
/// variants whose signal variance is fitted; plain kernels keep it fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scaled: bool,
    pub length_scale: LengthScale,
    pub signal_variance: f64,
    pub noise: f64,
}

impl KernelSpec {
    pub fn rbf(length_scale: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            scaled: false,
            length_scale: LengthScale::Isotropic(length_scale),
            signal_variance: 1.0,
            noise: 0.0,
        }
    }

    pub fn matern(nu: MaternNu, length_scale: f64) -> Self {
        Self {
            family: KernelFamily::Matern { nu },
            ..Self::rbf(length_scale)
        }
    }

    /// The `Constant * K` variant.
    pub fn scaled(mut self) -> Self {
        self.scaled = true;
        self
    }

    pub fn with_signal_variance(mut self, v: f64) -> Self {
        self.signal_variance = v;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// One length scale per input dimension, all starting at the current
    /// (isotropic) value.
    pub fn per_dimension(mut self, dims: usize) -> Self {
        let start = self.length_scale.values()[0];
        self.length_scale = LengthScale::PerDimension(vec![start; dims]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ls = self.length_scale.values();
        if ls.is_empty() || ls.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "length scales must be positive and finite, got {ls:?}"
            )));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be nonnegative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// Reciprocal length scale for each of `dims` input dimensions.
    pub(crate) fn inverse_length_scales(&self, dims: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match &self.length_scale {
            LengthScale::Isotropic(l) => Ok(vec![1.0 / l; dims]),
            LengthScale::PerDimension(v) if v.len() == dims => Ok(v.iter().map(|l| 1.0 / l).collect()),
            LengthScale::PerDimension(v) => Err(Error::Dimension {
                context: "per-dimension length scales",
                expected: dims,
                actual: v.len(),
            }),
        }
    }

    /// Unit-amplitude profile `g(rho)`.
    #[inline]
    pub(crate) fn profile(&self, rho: f64) -> f64 {
        match self.family {
            KernelFamily::Rbf => (-0.5 * rho * rho).exp(),
            KernelFamily::Matern { nu: MaternNu::Half } => (-rho).exp(),
            KernelFamily::Matern { nu: MaternNu::ThreeHalves } => {
                let t = SQRT3 * rho;
                (1.0 + t) * (-t).exp()
            }
            KernelFamily::Matern { nu: MaternNu::FiveHalves } => {
                let t = SQRT5 * rho;
                (1.0 + t + t * t / 3.0) * (-t).exp()
            }
        }
    }

    /// `h(rho)` such that `d k / d log(l_j) = signal_variance * h(rho) * s_j`,
    /// with `s_j = (dx_j / l_j)^2`.
    #[inline]
    pub(crate) fn length_grad_factor(&self, rho: f64) -> f64 {
        match self.family {
            KernelFamily::Rbf => (-0.5 * rho * rho).exp(),
            KernelFamily::Matern { nu: MaternNu::Half } => {
                if rho > 0.0 {
                    (-rho).exp() / rho
                } else {
                    0.0
                }
            }
            KernelFamily::Matern { nu: MaternNu::ThreeHalves } => 3.0 * (-SQRT3 * rho).exp(),
            KernelFamily::Matern { nu: MaternNu::FiveHalves } => {
                let t = SQRT5 * rho;
                (5.0 / 3.0) * (1.0 + t) * (-t).exp()
            }
        }
    }

    /// Covariance between the rows of `a` and the rows of `b`
    /// (`a.nrows() x b.nrows()`), without the noise term.
    pub fn eval(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::Dimension {
                context: "kernel inputs",
                expected: a.ncols(),
                actual: b.ncols(),
            });
        }
        let inv = self.inverse_length_scales(a.ncols())?;
        let sa = scaled_rows(a, &inv);
        let sb = scaled_rows(b, &inv);
        let d = a.ncols();
        let mut out = DMatrix::zeros(a.nrows(), b.nrows());
        for j in 0..b.nrows() {
            let xb = &sb[j * d..(j + 1) * d];
            for i in 0..a.nrows() {
                let rho = sq_dist(&sa[i * d..(i + 1) * d], xb).sqrt();
                out[(i, j)] = self.signal_variance * self.profile(rho);
            }
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

/// Row-major copy of `x` with column `j` multiplied by `inv[j]`.
pub(crate) fn scaled_rows(x: &DMatrix<f64>, inv: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.nrows() {
        for (j, s) in inv.iter().enumerate() {
            out.push(x[(i, j)] * s);
        }
    }
    out
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scaled {
            f.write_str("const*")?;
        }
        match self.family {
            KernelFamily::Rbf => f.write_str("rbf"),
            KernelFamily::Matern { nu } => write!(f, "matern-{}", nu.value()),
        }
    }
}

/// Parses `rbf`, `matern-1.5`, `const*rbf`, `const*matern-2.5`, ... with
/// default hyperparameters (`l = 1`, `signal_variance = 1`, `noise = 0`).
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (scaled, body) = match s.strip_prefix("const*") {
            Some(rest) => (true, rest),
            None => (false, s.as_str()),
        };
        let spec = if body == "rbf" {
            KernelSpec::rbf(1.0)
        } else if let Some(nu) = body.strip_prefix("matern-") {
            let nu: f64 = nu
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad Matern nu in `{s}`")))?;
            KernelSpec::matern(MaternNu::from_value(nu)?, 1.0)
        } else {
            return Err(Error::InvalidParameter(format!("unknown kernel `{s}`")));
        };
        Ok(if scaled { spec.scaled() } else { spec })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn rbf_values() {
        let k = KernelSpec::rbf(1.0);
        assert_eq!(k.eval(&pt(&[0.0]), &pt(&[0.0])).unwrap()[(0, 0)], 1.0);
        assert_abs_diff_eq!(k.eval(&pt(&[0.0]), &pt(&[1.0])).unwrap()[(0, 0)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(&pt(&[0.0]), &pt(&[1.0])).unwrap()[(0, 0)], 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn matern_half_is_exponential() {
        let k = KernelSpec::matern(MaternNu::Half, 1.0);
        let v = k.eval(&pt(&[0.0]), &pt(&[1.0])).unwrap()[(0, 0)];
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn matern_closed_forms() {
        let r: f64 = 0.7;
        let k32 = KernelSpec::matern(MaternNu::ThreeHalves, 1.0).with_signal_variance(2.0);
        let want = 2.0 * (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp();
        assert_abs_diff_eq!(k32.eval(&pt(&[0.0]), &pt(&[r])).unwrap()[(0, 0)], want, epsilon = 1e-14);
        let k52 = KernelSpec::matern(MaternNu::FiveHalves, 2.0);
        let s = r / 2.0;
        let want = (1.0 + 5f64.sqrt() * s + 5.0 * s * s / 3.0) * (-(5f64.sqrt()) * s).exp();
        assert_abs_diff_eq!(k52.eval(&pt(&[0.0]), &pt(&[r])).unwrap()[(0, 0)], want, epsilon = 1e-14);
    }

    #[test]
    fn per_dimension_scales() {
        let mut k = KernelSpec::rbf(1.0);
        k.length_scale = LengthScale::PerDimension(vec![1.0, 2.0]);
        let v = k.eval(&pt(&[0.0, 0.0]), &pt(&[1.0, 2.0])).unwrap()[(0, 0)];
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
        assert!(k.eval(&pt(&[0.0]), &pt(&[1.0])).is_err());
    }

    #[test]
    fn gram_is_symmetric() {
        let x = DMatrix::from_fn(6, 2, |i, j| ((i + 1) * (j + 2)) as f64 * 0.17);
        for spec in ["rbf", "matern-0.5", "matern-1.5", "const*matern-2.5"] {
            let k: KernelSpec = spec.parse().unwrap();
            let g = k.eval(&x, &x).unwrap();
            assert_eq!(g, g.transpose(), "{spec}");
            assert!(g.symmetric_eigenvalues().min() > -1e-12, "{spec}");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(KernelSpec::rbf(0.0).eval(&pt(&[0.0]), &pt(&[0.0])).is_err());
        assert!(KernelSpec::rbf(1.0).eval(&pt(&[0.0]), &pt(&[0.0, 1.0])).is_err());
        assert!("matern-1.0".parse::<KernelSpec>().is_err());
        assert!("linear".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn labels_round_trip() {
        for s in ["rbf", "const*rbf", "matern-0.5", "const*matern-2.5"] {
            let k: KernelSpec = s.parse().unwrap();
            assert_eq!(k.label(), s);
        }
    }
}
