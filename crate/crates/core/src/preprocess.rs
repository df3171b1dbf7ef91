//! Train/test/validation splitting and per-column standardization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{flatten, FidelityDataset, FlatMatrix};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            test_frac: 0.15,
            val_frac: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.test_frac, self.val_frac];
        if fracs.iter().any(|f| !(f.is_finite() && *f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "split fractions must lie in (0, 1), got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// `(train, test, val)` bin sizes for `n` samples: test and validation
    /// get `round(frac * n)`, training takes the remainder.
    pub fn bin_sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let test = (self.test_frac * n as f64).round() as usize;
        let val = (self.val_frac * n as f64).round() as usize;
        let train = n.checked_sub(test + val).unwrap_or(0);
        if n < 3 || train == 0 || test == 0 || val == 0 {
            return Err(Error::InvalidParameter(format!(
                "{n} samples cannot fill three nonempty bins with fractions \
                 {}/{}/{}",
                self.train_frac, self.test_frac, self.val_frac
            )));
        }
        Ok((train, test, val))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bin {
    Train,
    Test,
    Val,
}

/// Sorted, disjoint row indices for each bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, bin: Bin) -> &[usize] {
        match bin {
            Bin::Train => &self.train,
            Bin::Test => &self.test,
            Bin::Val => &self.val,
        }
    }
}

/// Shuffles `0..n` with the seeded generator, then takes the first block as
/// training rows, the next as test rows and the rest as validation rows.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    let (train, test, _) = spec.bin_sizes(n)?;
    let perm = SeededRng::new(spec.seed).permutation(n);
    let mut bins = [
        perm[..train].to_vec(),
        perm[train..train + test].to_vec(),
        perm[train + test..].to_vec(),
    ];
    for b in &mut bins {
        b.sort_unstable();
    }
    let [train, test, val] = bins;
    Ok(SplitIndices { train, test, val })
}

pub fn split_data_cv(data: &FidelityDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    split_indices(data.len(), spec)
}

/// Per-column standardization with population (divide-by-n) deviation.
///
/// Columns whose values are all identical keep `std = 0`; they transform to
/// zero and invert back to the stored mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if n == 0 || data.ncols() == 0 {
            return Err(Error::Shape("cannot fit a scaler on an empty matrix".into()));
        }
        let mut means = Vec::with_capacity(data.ncols());
        let mut stds = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                means.push(first);
                stds.push(0.0);
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            means.push(mean);
            stds.push(var.sqrt());
        }
        Ok(Self { means, stds })
    }

    /// Scaler that leaves data unchanged.
    pub fn identity(cols: usize) -> Self {
        Self {
            means: vec![0.0; cols],
            stds: vec![1.0; cols],
        }
    }

    pub fn fitted_on(&self) -> usize {
        self.means.len()
    }

    fn check(&self, data: &DMatrix<f64>) -> Result<()> {
        if data.ncols() != self.fitted_on() {
            return Err(Error::Dimension {
                context: "scaler columns",
                expected: self.fitted_on(),
                actual: data.ncols(),
            });
        }
        Ok(())
    }

    pub fn transform(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mean, std) = (self.means[j], self.stds[j]);
            if std == 0.0 {
                col.fill(0.0);
            } else {
                col.apply(|v| *v = (*v - mean) / std);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mean, std) = (self.means[j], self.stds[j]);
            if std == 0.0 {
                col.fill(mean);
            } else {
                col.apply(|v| *v = *v * std + mean);
            }
        }
        Ok(out)
    }

    /// Multiplier taking a scaled-space deviation back to original units;
    /// constant columns use 0.
    pub fn std_factor(&self, col: usize) -> f64 {
        self.stds[col]
    }

    /// Columns that were constant in the fit data.
    pub fn constant_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.stds.iter().enumerate().filter(|(_, s)| **s == 0.0).map(|(j, _)| j)
    }
}

/// Checks `inverse(transform(raw)) == raw` column by column, relative to
/// each column's magnitude.
pub fn verify_inverse_transform(scaler: &StandardScaler, raw: &DMatrix<f64>, tol: f64) -> Result<()> {
    let back = scaler.inverse_transform(&scaler.transform(raw)?)?;
    for j in 0..raw.ncols() {
        let scale = raw
            .column(j)
            .iter()
            .fold(scaler.means[j].abs(), |acc, v| acc.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..raw.nrows() {
            // Constant columns invert to the stored mean, which may differ
            // from unseen rows; only fitted-varying columns must round-trip.
            if scaler.stds[j] == 0.0 {
                continue;
            }
            let err = (back[(i, j)] - raw[(i, j)]).abs() / scale;
            if err > tol {
                return Err(Error::Verification(format!(
                    "inverse transform mismatch at ({i}, {j}): relative error {err:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Split and standardized data for one fidelity level.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub x_train: FlatMatrix,
    pub x_test: FlatMatrix,
    pub x_val: FlatMatrix,
    pub y_train: FlatMatrix,
    pub y_test: FlatMatrix,
    pub y_val: FlatMatrix,
    pub x_scaler: StandardScaler,
    pub y_scaler: StandardScaler,
    pub split: SplitIndices,
    pub seed: u64,
    raw_x: FlatMatrix,
    raw_y: FlatMatrix,
}

impl PreparedData {
    pub fn x(&self, bin: Bin) -> &FlatMatrix {
        match bin {
            Bin::Train => &self.x_train,
            Bin::Test => &self.x_test,
            Bin::Val => &self.x_val,
        }
    }

    pub fn y(&self, bin: Bin) -> &FlatMatrix {
        match bin {
            Bin::Train => &self.y_train,
            Bin::Test => &self.y_test,
            Bin::Val => &self.y_val,
        }
    }

    /// Unscaled inputs of a bin.
    pub fn raw_x(&self, bin: Bin) -> FlatMatrix {
        self.raw_x.select_rows(self.split.get(bin))
    }

    /// Unscaled outputs of a bin.
    pub fn raw_y(&self, bin: Bin) -> FlatMatrix {
        self.raw_y.select_rows(self.split.get(bin))
    }

    pub fn raw_inputs(&self) -> &FlatMatrix {
        &self.raw_x
    }

    pub fn raw_outputs(&self) -> &FlatMatrix {
        &self.raw_y
    }

    pub fn input_dim(&self) -> usize {
        self.raw_x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.raw_y.cols()
    }
}

/// Relative tolerance for the post-pipeline inverse-transform check.
pub const INVERSE_TOLERANCE: f64 = 1e-12;

/// Flattens, splits, fits scalers on the training rows only, and scales every
/// bin. Finishes by verifying the inverse transform on all bins.
pub fn preprocess_data_pipeline(data: &FidelityDataset, spec: &SplitSpec) -> Result<PreparedData> {
    prepare_flat(flatten(&data.inputs), flatten(&data.outputs), spec)
}

/// [`preprocess_data_pipeline`] for inputs that are already flat (e.g. the
/// augmented multi-fidelity inputs).
pub fn prepare_flat(raw_x: FlatMatrix, raw_y: FlatMatrix, spec: &SplitSpec) -> Result<PreparedData> {
    if raw_x.rows() != raw_y.rows() {
        return Err(Error::Shape(format!(
            "input and output sample counts must match ({} vs {})",
            raw_x.rows(),
            raw_y.rows()
        )));
    }
    let split = split_indices(raw_x.rows(), spec)?;
    let x_scaler = StandardScaler::fit(raw_x.select_rows(&split.train).matrix())?;
    let y_scaler = StandardScaler::fit(raw_y.select_rows(&split.train).matrix())?;

    let scale = |raw: &FlatMatrix, scaler: &StandardScaler, rows: &[usize]| -> Result<FlatMatrix> {
        let bin = raw.select_rows(rows);
        verify_inverse_transform(scaler, bin.matrix(), INVERSE_TOLERANCE)?;
        bin.with_data(scaler.transform(bin.matrix())?)
    };

    Ok(PreparedData {
        x_train: scale(&raw_x, &x_scaler, &split.train)?,
        x_test: scale(&raw_x, &x_scaler, &split.test)?,
        x_val: scale(&raw_x, &x_scaler, &split.val)?,
        y_train: scale(&raw_y, &y_scaler, &split.train)?,
        y_test: scale(&raw_y, &y_scaler, &split.test)?,
        y_val: scale(&raw_y, &y_scaler, &split.val)?,
        x_scaler,
        y_scaler,
        seed: spec.seed,
        split,
        raw_x,
        raw_y,
    })
}
