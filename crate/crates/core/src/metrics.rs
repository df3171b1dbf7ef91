//! Accuracy metrics, one-to-one exports, uncertainty reports and inference
//! throughput.
//!
//! Per-QoI normalization is min-max over the true values of that scalar's
//! column block, so fields with very different units share one scale. The
//! global R² pools every normalized entry; per-QoI R² is computed on raw
//! values (it is unchanged by a shared affine map anyway).

use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_float, read_text, write_text, FlatMatrix};
use crate::error::{Error, Result};
use crate::surrogate::{RawPredictor, ScaledModel};

fn check_same_shape(context: &'static str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{context}: true values are {:?} but predictions are {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn r2_slices(t: &[f64], p: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Undefined("R² needs at least two values"));
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let ss_tot: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² is undefined for a constant target"));
    }
    let ss_res: f64 = t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn rmse_slices(t: &[f64], p: &[f64]) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    (t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64).sqrt()
}

/// `1 - SS_res / SS_tot` over every entry.
pub fn r_squared(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<f64> {
    check_same_shape("r_squared", y_true, y_pred)?;
    r2_slices(y_true.as_slice(), y_pred.as_slice())
}

/// Root mean squared error over every entry.
pub fn rmse(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<f64> {
    check_same_shape("rmse", y_true, y_pred)?;
    Ok(rmse_slices(y_true.as_slice(), y_pred.as_slice()))
}

/// `(min, range)` of each scalar block of `y_true`; a flat block gets range 1.
fn block_normalizers(y_true: &FlatMatrix) -> Vec<(f64, f64)> {
    (0..y_true.m())
        .map(|s| {
            let block = y_true.matrix().columns_range(y_true.scalar_block(s));
            let lo = block.min();
            let hi = block.max();
            let range = hi - lo;
            (lo, if range > 0.0 { range } else { 1.0 })
        })
        .collect()
}

fn normalize(flat: &FlatMatrix, data: &DMatrix<f64>, norms: &[(f64, f64)]) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
        let (lo, range) = norms[flat.column_source(j).0];
        (data[(i, j)] - lo) / range
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiMetrics {
    pub name: String,
    /// `None` when the block is constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub normalized_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub hyperparameters: serde_json::Value,
    pub n_points: usize,
    /// Pooled over per-QoI normalized values.
    pub global_r2: Option<f64>,
    pub global_rmse: f64,
    pub global_normalized_rmse: f64,
    pub per_qoi: Vec<QoiMetrics>,
}

/// Metrics for predictions already in original units.
pub fn evaluate_predictions(
    y_true: &FlatMatrix,
    y_pred: &DMatrix<f64>,
    model: impl Into<String>,
    hyperparameters: serde_json::Value,
) -> Result<EvalReport> {
    check_same_shape("evaluate", y_true.matrix(), y_pred)?;
    let norms = block_normalizers(y_true);
    let nt = normalize(y_true, y_true.matrix(), &norms);
    let np = normalize(y_true, y_pred, &norms);
    let per_qoi = (0..y_true.m())
        .map(|s| {
            let cols = y_true.scalar_block(s);
            let t = y_true.matrix().columns_range(cols.clone()).into_owned();
            let p = y_pred.columns_range(cols.clone()).into_owned();
            let tn = nt.columns_range(cols.clone()).into_owned();
            let pn = np.columns_range(cols).into_owned();
            QoiMetrics {
                name: y_true.scalar_names()[s].clone(),
                r2: r2_slices(t.as_slice(), p.as_slice()).ok(),
                rmse: rmse_slices(t.as_slice(), p.as_slice()),
                normalized_rmse: rmse_slices(tn.as_slice(), pn.as_slice()),
            }
        })
        .collect();
    Ok(EvalReport {
        model: model.into(),
        hyperparameters,
        n_points: y_true.rows(),
        global_r2: r_squared(&nt, &np).ok(),
        global_rmse: rmse_slices(y_true.matrix().as_slice(), y_pred.as_slice()),
        global_normalized_rmse: rmse_slices(nt.as_slice(), np.as_slice()),
        per_qoi,
    })
}

/// Predicts `x_raw` and scores against `y_raw`, all in original units.
pub fn evaluate(model: &dyn RawPredictor, x_raw: &DMatrix<f64>, y_raw: &FlatMatrix) -> Result<EvalReport> {
    let pred = model.predict_raw(x_raw)?;
    evaluate_predictions(y_raw, &pred, model.describe(), model.hyperparameters())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model     {}", self.model)?;
        writeln!(f, "points    {}", self.n_points)?;
        writeln!(f, "R2        {}", opt(self.global_r2))?;
        writeln!(f, "RMSE      {:.6e}", self.global_rmse)?;
        writeln!(f, "NRMSE     {:.6e}", self.global_normalized_rmse)?;
        let w = self.per_qoi.iter().map(|q| q.name.len()).max().unwrap_or(3).max(3);
        writeln!(f)?;
        writeln!(f, "{:<w$}  {:>12}  {:>14}  {:>14}", "qoi", "R2", "RMSE", "NRMSE")?;
        for q in &self.per_qoi {
            writeln!(
                f,
                "{:<w$}  {:>12}  {:>14.6e}  {:>14.6e}",
                q.name,
                opt(q.r2),
                q.rmse,
                q.normalized_rmse
            )?;
        }
        Ok(())
    }
}

/// One row per (sample, QoI, coordinate), sample-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneToOneRow {
    pub qoi_name: String,
    #[serde(rename = "true")]
    pub true_value: f64,
    pub pred: f64,
    pub normalized_true: f64,
    pub normalized_pred: f64,
}

pub fn one_to_one_rows(y_true: &FlatMatrix, y_pred: &DMatrix<f64>) -> Result<Vec<OneToOneRow>> {
    check_same_shape("one-to-one export", y_true.matrix(), y_pred)?;
    let norms = block_normalizers(y_true);
    let mut rows = Vec::with_capacity(y_true.matrix().len());
    for i in 0..y_true.rows() {
        for j in 0..y_true.cols() {
            let s = y_true.column_source(j).0;
            let (lo, range) = norms[s];
            let (t, p) = (y_true.matrix()[(i, j)], y_pred[(i, j)]);
            rows.push(OneToOneRow {
                qoi_name: y_true.scalar_names()[s].clone(),
                true_value: t,
                pred: p,
                normalized_true: (t - lo) / range,
                normalized_pred: (p - lo) / range,
            });
        }
    }
    Ok(rows)
}

/// Writes `qoi_name,true,pred,normalized_true,normalized_pred`.
pub fn one_to_one_export(y_true: &FlatMatrix, y_pred: &DMatrix<f64>, path: &Path) -> Result<()> {
    let rows = one_to_one_rows(y_true, y_pred)?;
    let mut out = String::from("qoi_name,true,pred,normalized_true,normalized_pred\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.qoi_name,
            format_float(r.true_value),
            format_float(r.pred),
            format_float(r.normalized_true),
            format_float(r.normalized_pred)
        ));
    }
    write_text(path, out)
}

pub fn read_one_to_one(path: &Path) -> Result<Vec<OneToOneRow>> {
    let text = read_text(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqReport {
    /// Query sites in original units.
    pub sites: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    /// Standard deviation per site and output, original units.
    pub std: DMatrix<f64>,
}

/// GPR predictive mean and standard deviation at `x_raw`. The latent
/// standard deviation is shared by all outputs, so each output column is
/// that value times the output's scaler deviation.
pub fn uq_report(model: &ScaledModel, x_raw: &DMatrix<f64>) -> Result<UqReport> {
    let (mean, std) = model.predict_raw_with_std(x_raw)?;
    Ok(UqReport {
        sites: x_raw.clone(),
        mean,
        std,
    })
}

impl UqReport {
    /// Columns: inputs, then `mean_<name>`, then `std_<name>`.
    pub fn to_csv(&self, input_names: &[String], output_names: &[String]) -> String {
        let mut header: Vec<String> = input_names.to_vec();
        header.extend(output_names.iter().map(|n| format!("mean_{n}")));
        header.extend(output_names.iter().map(|n| format!("std_{n}")));
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.sites.nrows() {
            let row: Vec<String> = self
                .sites
                .row(i)
                .iter()
                .chain(self.mean.row(i).iter())
                .chain(self.std.row(i).iter())
                .map(|v| format_float(*v))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Pearson correlation between absolute error and predicted deviation
    /// over all entries. Reported as data only.
    pub fn error_std_correlation(&self, y_true: &DMatrix<f64>) -> Result<Option<f64>> {
        check_same_shape("uq correlation", y_true, &self.mean)?;
        let err: Vec<f64> = y_true.iter().zip(self.mean.iter()).map(|(t, p)| (t - p).abs()).collect();
        let sd: Vec<f64> = self.std.iter().copied().collect();
        Ok(pearson(&err, &sd))
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub predictions: usize,
    pub seconds: f64,
    pub per_second: f64,
}

/// Times `repeats` passes of one-row-at-a-time predictions over `x_raw`.
pub fn throughput_benchmark(model: &dyn RawPredictor, x_raw: &DMatrix<f64>, repeats: usize) -> Result<Throughput> {
    let repeats = repeats.max(1);
    let rows: Vec<DMatrix<f64>> = (0..x_raw.nrows()).map(|i| x_raw.rows(i, 1).into_owned()).collect();
    if rows.is_empty() {
        return Err(Error::Shape("throughput benchmark needs at least one site".into()));
    }
    let start = Instant::now();
    for _ in 0..repeats {
        for row in &rows {
            std::hint::black_box(model.predict_raw(std::hint::black_box(row))?);
        }
    }
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    let predictions = repeats * rows.len();
    Ok(Throughput {
        predictions,
        seconds,
        per_second: predictions as f64 / seconds,
    })
}
