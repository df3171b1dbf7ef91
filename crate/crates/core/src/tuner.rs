//! Grid sweeps over kernels or network sizes, and training-set-size studies.
//!
//! Every candidate is scored by validation RMSE in original units. The
//! winner is the lowest score; scores within [`TIE_TOLERANCE`] of it count as
//! tied and the candidate with fewer parameters wins, then the earlier one.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_float, FidelityDataset};
use crate::error::{Error, Result};
use crate::gpr::{KernelSpec, MaternNu, OptimizeOptions};
use crate::metrics::{r_squared, rmse};
use crate::mlp::{Activation, TrainConfig};
use crate::preprocess::{preprocess_data_pipeline, Bin, PreparedData, SplitSpec, StandardScaler};
use crate::rng::SeededRng;
use crate::surrogate::{Layout, ModelSpec, ScaledModel};

/// Absolute RMSE difference treated as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprGrid {
    pub kernels: Vec<KernelSpec>,
    pub optimize: OptimizeOptions,
}

impl Default for GprGrid {
    /// Amplitude-scaled RBF and Matern 1/2, 3/2, 5/2.
    fn default() -> Self {
        Self {
            kernels: vec![
                KernelSpec::rbf(1.0).scaled(),
                KernelSpec::matern(MaternNu::Half, 1.0).scaled(),
                KernelSpec::matern(MaternNu::ThreeHalves, 1.0).scaled(),
                KernelSpec::matern(MaternNu::FiveHalves, 1.0).scaled(),
            ],
            optimize: OptimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpGrid {
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for MlpGrid {
    fn default() -> Self {
        Self {
            layers: vec![1, 2, 3],
            widths: vec![16, 32, 64, 128],
            activation: Activation::Tanh,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SweepGrid {
    Gpr(GprGrid),
    Mlp(MlpGrid),
}

impl SweepGrid {
    /// Candidates in grid order. MLP grids vary width fastest.
    pub fn candidates(&self) -> Vec<ModelSpec> {
        match self {
            SweepGrid::Gpr(g) => g
                .kernels
                .iter()
                .map(|k| ModelSpec::Gpr {
                    kernel: k.clone(),
                    optimize: Some(g.optimize.clone()),
                })
                .collect(),
            SweepGrid::Mlp(g) => g
                .layers
                .iter()
                .flat_map(|&depth| {
                    g.widths.iter().map(move |&w| ModelSpec::Mlp {
                        hidden: vec![w; depth],
                        activation: g.activation,
                        train: g.train.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = match self {
            SweepGrid::Gpr(g) => {
                for k in &g.kernels {
                    k.validate()?;
                }
                g.optimize.bounds.validate()?;
                g.kernels.is_empty()
            }
            SweepGrid::Mlp(g) => {
                g.train.validate()?;
                if g.layers.contains(&0) || g.widths.contains(&0) {
                    return Err(Error::InvalidParameter("layer counts and widths must be at least 1".into()));
                }
                g.layers.is_empty() || g.widths.is_empty()
            }
        };
        if empty {
            return Err(Error::InvalidParameter("sweep grid is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub label: String,
    pub spec: ModelSpec,
    /// `None` if the candidate failed to fit.
    pub val_rmse: Option<f64>,
    /// Needs at least two validation entries.
    pub val_r2: Option<f64>,
    pub param_count: usize,
    pub fit_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub candidates: Vec<CandidateScore>,
    pub winner: usize,
}

impl SweepResult {
    pub fn winner(&self) -> &CandidateScore {
        &self.candidates[self.winner]
    }

    /// `index,label,val_rmse,val_r2,param_count,fit_seconds,selected,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label,val_rmse,val_r2,param_count,fit_seconds,selected,error\n");
        for c in &self.candidates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.index,
                c.label,
                c.val_rmse.map(format_float).unwrap_or_default(),
                c.val_r2.map(format_float).unwrap_or_default(),
                c.param_count,
                format_float(c.fit_seconds),
                c.index == self.winner,
                c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }
}

/// Index of the winning candidate given recorded scores, or `None` if no
/// candidate has a finite score.
pub fn select_winner(candidates: &[CandidateScore]) -> Option<usize> {
    let best = candidates
        .iter()
        .filter_map(|c| c.val_rmse.filter(|v| v.is_finite()))
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.val_rmse.is_some_and(|v| v.is_finite() && v - best <= TIE_TOLERANCE))
        .min_by_key(|(i, c)| (c.param_count, *i))
        .map(|(i, _)| i)
}

/// Outcome of a sweep: the scores and the winning model.
#[derive(Debug, Clone)]
pub struct Tuned {
    pub result: SweepResult,
    pub model: ScaledModel,
}

fn score(spec: &ModelSpec, data: &PreparedData) -> Result<(ScaledModel, f64, Option<f64>)> {
    let model = spec.fit(data)?;
    let raw_x = data.raw_x(Bin::Val);
    let raw_y = data.raw_y(Bin::Val);
    let pred = model.predict_raw(raw_x.matrix())?;
    let e = rmse(raw_y.matrix(), &pred)?;
    if !e.is_finite() {
        return Err(Error::NonFinite {
            location: "validation RMSE".into(),
            value: e,
        });
    }
    Ok((model, e, r_squared(raw_y.matrix(), &pred).ok()))
}

/// Fits every candidate (in parallel) on the training bin and scores it on
/// the validation bin. Results keep grid order.
pub fn tune(data: &PreparedData, grid: &SweepGrid) -> Result<Tuned> {
    grid.validate()?;
    let specs = grid.candidates();
    let outcomes: Vec<(CandidateScore, Option<ScaledModel>)> = specs
        .into_par_iter()
        .enumerate()
        .map(|(index, spec)| {
            let start = Instant::now();
            let fitted = score(&spec, data);
            let fit_seconds = start.elapsed().as_secs_f64();
            let label = spec.label();
            match fitted {
                Ok((model, e, r2)) => (
                    CandidateScore {
                        index,
                        label,
                        param_count: model.model.parameter_count(),
                        spec,
                        val_rmse: Some(e),
                        val_r2: r2,
                        fit_seconds,
                        error: None,
                    },
                    Some(model),
                ),
                Err(err) => {
                    log::warn!("candidate {index} ({label}) failed: {err}");
                    (
                        CandidateScore {
                            index,
                            label,
                            param_count: 0,
                            spec,
                            val_rmse: None,
                            val_r2: None,
                            fit_seconds,
                            error: Some(err.to_string()),
                        },
                        None,
                    )
                }
            }
        })
        .collect();
    let (candidates, mut models): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let Some(winner) = select_winner(&candidates) else {
        return Err(Error::AllCandidatesFailed {
            count: candidates.len(),
            last: candidates.last().and_then(|c| c.error.clone()).unwrap_or_default(),
        });
    };
    let model = models[winner].take().expect("winner has a model");
    Ok(Tuned {
        result: SweepResult { candidates, winner },
        model,
    })
}

pub fn tune_gpr(data: &PreparedData, grid: &GprGrid) -> Result<Tuned> {
    tune(data, &SweepGrid::Gpr(grid.clone()))
}

pub fn tune_mlp(data: &PreparedData, grid: &MlpGrid) -> Result<Tuned> {
    tune(data, &SweepGrid::Mlp(grid.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub size: usize,
    pub test_rmse: f64,
    /// Needs at least two non-constant test entries.
    pub test_r2: Option<f64>,
    /// Original dataset rows used for training, in draw order.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub label: String,
    pub test_rows: Vec<usize>,
    pub points: Vec<ConvergencePoint>,
}

impl ConvergenceCurve {
    /// `size,test_rmse,test_r2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,test_rmse,test_r2\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                p.size,
                format_float(p.test_rmse),
                p.test_r2.map(format_float).unwrap_or_default()
            ));
        }
        out
    }
}

/// Learning curve over nested training subsets. Subsets are prefixes of a
/// seeded permutation of the training bin; the test bin is fixed. Each
/// subset gets its own scalers, fitted on that subset only.
pub fn convergence_study(
    data: &FidelityDataset,
    split: &SplitSpec,
    spec: &ModelSpec,
    sizes: &[usize],
) -> Result<ConvergenceCurve> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("no subset sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidParameter(format!(
            "subset sizes must be positive and strictly increasing, got {sizes:?}"
        )));
    }
    let prepared = preprocess_data_pipeline(data, split)?;
    let train_rows = &prepared.split.train;
    let largest = *sizes.last().expect("nonempty");
    if largest > train_rows.len() {
        return Err(Error::InvalidParameter(format!(
            "subset size {largest} exceeds the {} training rows",
            train_rows.len()
        )));
    }
    let order: Vec<usize> = SeededRng::derive(split.seed, 2)
        .permutation(train_rows.len())
        .into_iter()
        .map(|k| train_rows[k])
        .collect();
    let raw_x = prepared.raw_inputs().matrix();
    let raw_y = prepared.raw_outputs().matrix();
    let test_x = prepared.raw_x(Bin::Test);
    let test_y = prepared.raw_y(Bin::Test);
    let val_x = prepared.raw_x(Bin::Val);
    let val_y = prepared.raw_y(Bin::Val);

    let points = sizes
        .par_iter()
        .map(|&size| -> Result<ConvergencePoint> {
            let rows = order[..size].to_vec();
            let sub_x = raw_x.select_rows(&rows);
            let sub_y = raw_y.select_rows(&rows);
            let xs = StandardScaler::fit(&sub_x)?;
            let ys = StandardScaler::fit(&sub_y)?;
            let model = spec.fit_scaled(
                &xs.transform(&sub_x)?,
                &ys.transform(&sub_y)?,
                &xs.transform(val_x.matrix())?,
                &ys.transform(val_y.matrix())?,
            )?;
            let model = ScaledModel::new(
                model,
                xs,
                ys,
                Layout::of(prepared.raw_inputs()),
                Layout::of(prepared.raw_outputs()),
            )?;
            let pred: DMatrix<f64> = model.predict_raw(test_x.matrix())?;
            Ok(ConvergencePoint {
                size,
                test_rmse: rmse(test_y.matrix(), &pred)?,
                test_r2: r_squared(test_y.matrix(), &pred).ok(),
                rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceCurve {
        label: spec.label(),
        test_rows: prepared.split.test.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::KernelFamily;

    fn score(index: usize, rmse: Option<f64>, params: usize) -> CandidateScore {
        CandidateScore {
            index,
            label: format!("c{index}"),
            spec: ModelSpec::Gpr {
                kernel: KernelSpec::rbf(1.0),
                optimize: None,
            },
            val_rmse: rmse,
            val_r2: None,
            param_count: params,
            fit_seconds: 0.0,
            error: None,
        }
    }

    #[test]
    fn argmin_wins() {
        let c = [score(0, Some(0.3), 1), score(1, Some(0.1), 9), score(2, Some(0.2), 1)];
        assert_eq!(select_winner(&c), Some(1));
    }

    #[test]
    fn ties_go_to_fewer_parameters_then_earlier_index() {
        let c = [score(0, Some(0.1), 50), score(1, Some(0.1 + 1e-13), 10), score(2, Some(0.1), 10)];
        assert_eq!(select_winner(&c), Some(1));
        let c = [score(0, Some(0.5), 3), score(1, Some(0.5), 3)];
        assert_eq!(select_winner(&c), Some(0));
        // Outside the tolerance the larger model keeps the win.
        let c = [score(0, Some(0.1), 50), score(1, Some(0.1 + 1e-9), 10)];
        assert_eq!(select_winner(&c), Some(0));
    }

    #[test]
    fn failures_are_skipped() {
        let c = [score(0, None, 0), score(1, Some(2.0), 5)];
        assert_eq!(select_winner(&c), Some(1));
        assert_eq!(select_winner(&[score(0, None, 0)]), None);
    }

    #[test]
    fn mlp_grid_order() {
        let grid = SweepGrid::Mlp(MlpGrid {
            layers: vec![1, 2],
            widths: vec![4, 8],
            ..Default::default()
        });
        let labels: Vec<String> = grid.candidates().iter().map(|c| c.label()).collect();
        assert_eq!(labels, ["mlp[4]-tanh", "mlp[8]-tanh", "mlp[4x4]-tanh", "mlp[8x8]-tanh"]);
        assert_eq!(SweepGrid::Mlp(MlpGrid::default()).candidates().len(), 12);
    }

    #[test]
    fn default_gpr_grid_has_four_families() {
        let g = GprGrid::default();
        assert_eq!(g.kernels.len(), 4);
        assert_eq!(g.kernels[0].family, KernelFamily::Rbf);
        assert!(g.kernels.iter().all(|k| k.scaled));
    }

    #[test]
    fn empty_grid_rejected() {
        let grid = SweepGrid::Gpr(GprGrid {
            kernels: vec![],
            ..Default::default()
        });
        assert!(grid.validate().is_err());
    }
}
