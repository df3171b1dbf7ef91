//! Exact Gaussian process regression with a zero prior mean.
//!
//! Fitting factors `K + noise*I = L L^T`, solves `alpha = L^T \ (L \ Y)`
//! for all output columns at once and records the log marginal likelihood
//!
//! ```text
//! log p(Y | X) = sum_c [ -1/2 y_c^T alpha_c - sum_i log L_ii - N/2 log(2 pi) ]
//! ```
//!
//! Prediction returns `mean = K_*^T alpha` and the latent variance
//! `diag(K_**) - sum(v^2)` with `v = L \ K_*`, shared by every output.

mod kernel;
pub mod linalg;
mod optimize;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernel::{KernelFamily, KernelSpec, LengthScale, MaternNu};
pub use optimize::{
    lml_gradient, optimize_hyperparameters, HyperBounds, OptimizeOptions, Optimized, RestartOutcome,
};

use kernel::{scaled_rows, sq_dist};
use linalg::{cholesky_with_jitter, solve_lower_in_place, solve_upper_transposed_in_place};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct GprModel {
    kernel: KernelSpec,
    x_train: DMatrix<f64>,
    chol: DMatrix<f64>,
    alpha: DMatrix<f64>,
    lml: f64,
    jitter_used: f64,
    // Row-major training inputs divided by the length scales.
    scaled_train: Vec<f64>,
    inv_ls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DMatrix<f64>,
    /// Latent variance per query row, clamped at zero.
    pub variance: Vec<f64>,
}

fn check_finite(context: &str, m: &DMatrix<f64>) -> Result<()> {
    if let Some((idx, v)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: format!("{context} entry ({}, {})", idx % m.nrows(), idx / m.nrows()),
            value: *v,
        });
    }
    Ok(())
}

/// `K(X, X) + noise * I` for the training inputs.
pub(crate) fn training_covariance(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut k = spec.eval(x, x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += spec.noise;
    }
    Ok(k)
}

pub(crate) fn log_marginal_likelihood(chol: &DMatrix<f64>, y: &DMatrix<f64>, alpha: &DMatrix<f64>) -> f64 {
    let n = chol.nrows() as f64;
    let q = y.ncols() as f64;
    let data_fit: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let log_det_half: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * data_fit - q * log_det_half - q * 0.5 * n * LN_2PI
}

pub fn gpr_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: &KernelSpec) -> Result<GprModel> {
    if x.nrows() == 0 {
        return Err(Error::Shape("GPR needs at least one training point".into()));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension {
            context: "GPR targets",
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    check_finite("training inputs", x)?;
    check_finite("training targets", y)?;
    let k = training_covariance(spec, x)?;
    let (chol, jitter_used) = cholesky_with_jitter(&k)?;
    let mut alpha = y.clone();
    solve_lower_in_place(&chol, &mut alpha);
    solve_upper_transposed_in_place(&chol, &mut alpha);
    let lml = log_marginal_likelihood(&chol, y, &alpha);
    GprModel::from_parts(spec.clone(), x.clone(), chol, alpha, lml, jitter_used)
}

impl GprModel {
    /// Reassembles a fitted model from stored state, checking shapes.
    pub fn from_parts(
        kernel: KernelSpec,
        x_train: DMatrix<f64>,
        chol: DMatrix<f64>,
        alpha: DMatrix<f64>,
        lml: f64,
        jitter_used: f64,
    ) -> Result<Self> {
        let n = x_train.nrows();
        if chol.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "Cholesky factor is {:?}, expected ({n}, {n})",
                chol.shape()
            )));
        }
        if alpha.nrows() != n || alpha.ncols() == 0 {
            return Err(Error::Shape(format!(
                "alpha is {:?}, expected ({n}, q >= 1)",
                alpha.shape()
            )));
        }
        let inv_ls = kernel.inverse_length_scales(x_train.ncols())?;
        let scaled_train = scaled_rows(&x_train, &inv_ls);
        Ok(Self {
            kernel,
            x_train,
            chol,
            alpha,
            lml,
            jitter_used,
            scaled_train,
            inv_ls,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn lml(&self) -> f64 {
        self.lml
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    /// `K(X_train, X_*)`, one column per query row.
    fn cross_covariance(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.input_dim();
        if xs.ncols() != d {
            return Err(Error::Dimension {
                context: "GPR query inputs",
                expected: d,
                actual: xs.ncols(),
            });
        }
        let n = self.n_train();
        let mut ks = DMatrix::zeros(n, xs.nrows());
        let mut q = vec![0.0; d];
        for (j, mut col) in ks.column_iter_mut().enumerate() {
            for (k, slot) in q.iter_mut().enumerate() {
                *slot = xs[(j, k)] * self.inv_ls[k];
            }
            for (i, out) in col.iter_mut().enumerate() {
                let rho = sq_dist(&self.scaled_train[i * d..(i + 1) * d], &q).sqrt();
                *out = self.kernel.signal_variance * self.kernel.profile(rho);
            }
        }
        Ok(ks)
    }

    pub fn predict_mean(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ks = self.cross_covariance(xs)?;
        Ok(ks.tr_mul(&self.alpha))
    }

    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<Prediction> {
        let mut ks = self.cross_covariance(xs)?;
        let mean = ks.tr_mul(&self.alpha);
        solve_lower_in_place(&self.chol, &mut ks);
        let prior = self.kernel.signal_variance;
        let variance = ks
            .column_iter()
            .map(|v| (prior - v.norm_squared()).max(0.0))
            .collect();
        Ok(Prediction { mean, variance })
    }
}

/// Parameters the user fixed or the optimizer chose, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprSummary {
    pub kernel: String,
    pub length_scale: Vec<f64>,
    pub signal_variance: f64,
    pub noise: f64,
    pub lml: f64,
    pub jitter_used: f64,
}

impl GprModel {
    pub fn summary(&self) -> GprSummary {
        GprSummary {
            kernel: self.kernel.label(),
            length_scale: self.kernel.length_scale.values(),
            signal_variance: self.kernel.signal_variance,
            noise: self.kernel.noise,
            lml: self.lml,
            jitter_used: self.jitter_used,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_point_interpolates() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let y = DMatrix::from_element(1, 1, 5.0);
        let m = gpr_fit(&x, &y, &KernelSpec::rbf(1.0)).unwrap();
        assert_abs_diff_eq!(m.alpha()[(0, 0)], 5.0, epsilon = 1e-15);
        let p = m.predict(&x).unwrap();
        assert_abs_diff_eq!(p.mean[(0, 0)], 5.0, epsilon = 1e-15);
        assert!(p.variance[0] <= 1e-12);
    }

    #[test]
    fn two_point_mean_matches_hand_oracle() {
        // K = [[1.1, e], [e, 1.1]] with e = exp(-1/2); k* = [exp(-1/8); exp(-1/8)].
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let m = gpr_fit(&x, &y, &KernelSpec::rbf(1.0).with_noise(0.1)).unwrap();
        let e = (-0.5f64).exp();
        let ks = (-0.125f64).exp();
        let det = 1.1 * 1.1 - e * e;
        // (K^-1 y) = [ -e, 1.1 ] / det
        let want = ks * (1.1 - e) / det;
        let got = m.predict(&DMatrix::from_element(1, 1, 0.5)).unwrap().mean[(0, 0)];
        assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        assert_abs_diff_eq!(got, 0.517, epsilon = 1e-3);
        let lml = -0.5 * (1.1 / det) - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(m.lml(), lml, epsilon = 1e-13);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let spec = KernelSpec::rbf(0.3).with_signal_variance(2.5).with_noise(1e-6);
        let m = gpr_fit(&x, &y, &spec).unwrap();
        let p = m.predict(&DMatrix::from_element(1, 1, 50.0)).unwrap();
        assert!(p.mean[(0, 0)].abs() < 1e-12);
        assert_abs_diff_eq!(p.variance[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn fit_errors() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, f64::NAN]);
        let y = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(gpr_fit(&x, &y, &KernelSpec::rbf(1.0)).is_err());
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(gpr_fit(&x, &y, &KernelSpec::rbf(1.0)).is_err());
        let m = gpr_fit(&x, &DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), &KernelSpec::rbf(1.0)).unwrap();
        assert!(m.predict(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn duplicate_inputs_use_jitter() {
        let x = DMatrix::from_column_slice(3, 1, &[0.2, 0.2, 0.9]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        let m = gpr_fit(&x, &y, &KernelSpec::rbf(1.0)).unwrap();
        assert!(m.jitter_used() > 0.0);
    }
}
