//! Multi-fidelity composition.
//!
//! A low-fidelity surrogate is trained first; its predictions at the
//! high-fidelity sites, in original units, are placed in front of the raw
//! high-fidelity inputs, and a second surrogate learns the high-fidelity
//! outputs from that augmented input:
//!
//! ```text
//! y_hf ~ F_mf([F_lf(x) | x])
//! ```
//!
//! The augmented matrix gets its own scaler, fitted on the high-fidelity
//! training rows. More than two levels fold the same step: each level treats
//! the composite built so far as its low-fidelity model.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{flatten, format_float, write_text, DataTensor, FidelityDataset, FlatMatrix};
use crate::error::{Error, Result};
use crate::preprocess::{prepare_flat, preprocess_data_pipeline, PreparedData, SplitSpec};
use crate::surrogate::{Layout, RawPredictor, ScaledModel};
use crate::tuner::{tune, SweepGrid, SweepResult};

/// The low-fidelity side of a composite.
#[derive(Debug, Clone)]
pub enum Stage {
    Single(ScaledModel),
    Composite(Box<MfComposite>),
}

impl Stage {
    fn as_predictor(&self) -> &dyn RawPredictor {
        match self {
            Stage::Single(m) => m,
            Stage::Composite(c) => c.as_ref(),
        }
    }
}

impl RawPredictor for Stage {
    fn input_dim(&self) -> usize {
        self.as_predictor().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.as_predictor().output_dim()
    }

    fn output_layout(&self) -> &Layout {
        self.as_predictor().output_layout()
    }

    fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.as_predictor().predict_raw(x_raw)
    }

    fn describe(&self) -> String {
        self.as_predictor().describe()
    }

    fn hyperparameters(&self) -> serde_json::Value {
        self.as_predictor().hyperparameters()
    }
}

#[derive(Debug, Clone)]
pub struct MfComposite {
    pub lf: Stage,
    pub mf: ScaledModel,
}

impl MfComposite {
    pub fn new(lf: Stage, mf: ScaledModel) -> Result<Self> {
        let want = lf.input_dim() + lf.output_dim();
        if mf.input_dim() != want {
            return Err(Error::Dimension {
                context: "multi-fidelity model inputs (d + q_lf)",
                expected: want,
                actual: mf.input_dim(),
            });
        }
        Ok(Self { lf, mf })
    }

    pub fn input_dim(&self) -> usize {
        self.lf.input_dim()
    }

    pub fn lf_output_dim(&self) -> usize {
        self.lf.output_dim()
    }

    pub fn hf_output_dim(&self) -> usize {
        self.mf.output_dim()
    }

    /// Number of fidelity levels in the chain.
    pub fn levels(&self) -> usize {
        match &self.lf {
            Stage::Single(_) => 2,
            Stage::Composite(c) => c.levels() + 1,
        }
    }
}

impl RawPredictor for MfComposite {
    fn input_dim(&self) -> usize {
        self.lf.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.mf.output_dim()
    }

    fn output_layout(&self) -> &Layout {
        &self.mf.outputs
    }

    fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let augmented = augment(&self.lf, x_raw)?;
        self.mf.predict_raw(&augmented)
    }

    fn describe(&self) -> String {
        format!("mf({} -> {})", self.lf.describe(), self.mf.model.label())
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::json!({
            "lf": self.lf.hyperparameters(),
            "mf": self.mf.hyperparameters(),
        })
    }
}

fn augment(lf: &dyn RawPredictor, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_raw.ncols() != lf.input_dim() {
        return Err(Error::Dimension {
            context: "design-site inputs",
            expected: lf.input_dim(),
            actual: x_raw.ncols(),
        });
    }
    let pred = lf.predict_raw(x_raw)?;
    let (n, q, d) = (x_raw.nrows(), pred.ncols(), x_raw.ncols());
    let mut out = DMatrix::zeros(n, q + d);
    out.columns_mut(0, q).copy_from(&pred);
    out.columns_mut(q, d).copy_from(x_raw);
    Ok(out)
}

/// `[F_lf(X) | X]` in original units: low-fidelity predictions first, then
/// the inputs. Columns are named `lf:<output>` followed by the input names.
pub fn build_mf_input(lf: &dyn RawPredictor, x_raw: &FlatMatrix) -> Result<FlatMatrix> {
    let data = augment(lf, x_raw.matrix())?;
    let mut names: Vec<String> = lf
        .output_layout()
        .column_names()
        .into_iter()
        .map(|n| format!("lf:{n}"))
        .collect();
    names.extend(Layout::of(x_raw).column_names());
    FlatMatrix::new(data, names.len(), 1, names)
}

/// One fidelity level of a chain: its data and the grid its model is
/// tuned over.
#[derive(Debug, Clone)]
pub struct Level {
    pub data: FidelityDataset,
    pub grid: SweepGrid,
}

#[derive(Debug, Clone)]
pub struct LevelReport {
    pub fidelity: String,
    pub sweep: SweepResult,
    pub prepared: PreparedData,
}

#[derive(Debug, Clone)]
pub struct TrainedChain {
    pub composite: MfComposite,
    /// One entry per level, lowest fidelity first.
    pub levels: Vec<LevelReport>,
}

impl TrainedChain {
    /// Prepared (split, scaled, augmented) data of the highest level.
    pub fn top(&self) -> &LevelReport {
        self.levels.last().expect("a chain has at least two levels")
    }
}

/// Trains levels in order, lowest fidelity first. Each level above the first
/// is trained on its inputs augmented by the chain built below it.
pub fn train_chain(levels: &[Level], split: &SplitSpec) -> Result<TrainedChain> {
    if levels.len() < 2 {
        return Err(Error::InvalidParameter("a multi-fidelity chain needs at least two levels".into()));
    }
    let d = levels[0].data.input_dim();
    if let Some(bad) = levels.iter().find(|l| l.data.input_dim() != d) {
        return Err(Error::Dimension {
            context: "fidelity input dimension",
            expected: d,
            actual: bad.data.input_dim(),
        });
    }

    let base = preprocess_data_pipeline(&levels[0].data, split)?;
    let tuned = tune(&base, &levels[0].grid)?;
    log::info!("{}: selected {}", levels[0].data.fidelity, tuned.result.winner().label);
    let mut reports = vec![LevelReport {
        fidelity: levels[0].data.fidelity.clone(),
        sweep: tuned.result,
        prepared: base,
    }];
    let mut stage = Stage::Single(tuned.model);
    let mut composite = None;

    for level in &levels[1..] {
        let augmented = build_mf_input(&stage, &flatten(&level.data.inputs))?;
        let prepared = prepare_flat(augmented, flatten(&level.data.outputs), split)?;
        let tuned = tune(&prepared, &level.grid)?;
        log::info!("{}: selected {}", level.data.fidelity, tuned.result.winner().label);
        let c = MfComposite::new(stage, tuned.model)?;
        reports.push(LevelReport {
            fidelity: level.data.fidelity.clone(),
            sweep: tuned.result,
            prepared,
        });
        stage = Stage::Composite(Box::new(c.clone()));
        composite = Some(c);
    }
    Ok(TrainedChain {
        composite: composite.expect("at least one upper level"),
        levels: reports,
    })
}

/// Two-level composition.
pub fn train_mf(
    lf_data: &FidelityDataset,
    hf_data: &FidelityDataset,
    lf_grid: &SweepGrid,
    mf_grid: &SweepGrid,
    split: &SplitSpec,
) -> Result<TrainedChain> {
    train_chain(
        &[
            Level {
                data: lf_data.clone(),
                grid: lf_grid.clone(),
            },
            Level {
                data: hf_data.clone(),
                grid: mf_grid.clone(),
            },
        ],
        split,
    )
}

/// New input sites in original units, optionally written out as CSV.
#[derive(Debug, Clone)]
pub struct DesignSiteRequest {
    pub sites: DataTensor,
    pub write_to_csv: Option<std::path::PathBuf>,
}

/// Evaluates any predictor at `request.sites` and reshapes to the output
/// tensor layout.
pub fn predict_sites(model: &dyn RawPredictor, request: &DesignSiteRequest) -> Result<DataTensor> {
    let x = flatten(&request.sites);
    if x.cols() != model.input_dim() {
        return Err(Error::Dimension {
            context: "design-site inputs (m * l)",
            expected: model.input_dim(),
            actual: x.cols(),
        });
    }
    let pred = model.predict_raw(x.matrix())?;
    if let Some(path) = &request.write_to_csv {
        write_site_csv(&x, model.output_layout(), &pred, path)?;
    }
    model.output_layout().to_tensor(&pred)
}

pub fn predict_at_design_sites(c: &MfComposite, request: &DesignSiteRequest) -> Result<DataTensor> {
    predict_sites(c, request)
}

pub fn predict_single_fidelity(model: &ScaledModel, request: &DesignSiteRequest) -> Result<DataTensor> {
    predict_sites(model, request)
}

/// One row per site: input columns, then output columns.
pub fn write_site_csv(x: &FlatMatrix, outputs: &Layout, pred: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut header = Layout::of(x).column_names();
    header.extend(outputs.column_names());
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..x.rows() {
        let row: Vec<String> = x
            .matrix()
            .row(i)
            .iter()
            .chain(pred.row(i).iter())
            .map(|v| format_float(*v))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, out)
}

/// Summary of a chain for reports and bundle metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub levels: usize,
    pub input_dim: usize,
    pub lf_output_dim: usize,
    pub hf_output_dim: usize,
    pub description: String,
}

impl MfComposite {
    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            levels: self.levels(),
            input_dim: self.input_dim(),
            lf_output_dim: self.lf_output_dim(),
            hf_output_dim: self.hf_output_dim(),
            description: self.describe(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::KernelSpec;
    use crate::mlp::{Activation, MlpArchitecture, MlpModel};
    use crate::preprocess::StandardScaler;
    use crate::surrogate::Surrogate;

    /// One hidden identity unit and unit weights: `f(x) = x`.
    fn identity_model() -> ScaledModel {
        let arch = MlpArchitecture::new(1, vec![1], 1, Activation::Identity);
        let mut net = MlpModel::init(arch, 0).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(1.0);
            l.bias.fill(0.0);
        }
        ScaledModel::new(
            Surrogate::Mlp(net),
            StandardScaler::identity(1),
            StandardScaler::identity(1),
            Layout::plain(1),
            Layout::plain(1),
        )
        .unwrap()
    }

    #[test]
    fn identity_lf_duplicates_input() {
        let x = FlatMatrix::plain(DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 2.0]));
        let aug = build_mf_input(&identity_model(), &x).unwrap();
        assert_eq!(aug.cols(), 2);
        for i in 0..3 {
            assert_eq!(aug.matrix()[(i, 0)], x.matrix()[(i, 0)]);
            assert_eq!(aug.matrix()[(i, 1)], x.matrix()[(i, 0)]);
        }
        assert_eq!(aug.scalar_names(), ["lf:s0", "s0"]);
    }

    #[test]
    fn augmented_width_is_q_plus_d() {
        let x = DMatrix::from_fn(6, 4, |i, j| (i + j) as f64);
        let y = DMatrix::from_fn(6, 2, |i, j| (i * j) as f64 + 0.5 * i as f64);
        let gp = crate::gpr::gpr_fit(&x, &y, &KernelSpec::rbf(3.0).with_noise(1e-6)).unwrap();
        let m = ScaledModel::new(
            Surrogate::Gpr(gp),
            StandardScaler::identity(4),
            StandardScaler::identity(2),
            Layout::plain(4),
            Layout::plain(2),
        )
        .unwrap();
        let hf = FlatMatrix::plain(DMatrix::from_fn(400, 4, |i, j| ((i * 7 + j) % 13) as f64));
        let aug = build_mf_input(&m, &hf).unwrap();
        assert_eq!((aug.rows(), aug.cols()), (400, 6));
        assert!(build_mf_input(&m, &FlatMatrix::plain(DMatrix::zeros(2, 3))).is_err());
    }

    #[test]
    fn composite_checks_widths() {
        let lf = identity_model();
        assert!(MfComposite::new(Stage::Single(lf.clone()), lf).is_err());
    }

    #[test]
    fn chain_needs_two_levels_with_equal_inputs() {
        let (lf, hf) = crate::synthbench::generate_pair_dataset(
            &crate::synthbench::AnalyticPair::forrester(),
            20,
            10,
            &crate::synthbench::Sampler::lhs(0),
        )
        .unwrap();
        let grid = SweepGrid::Gpr(Default::default());
        let split = SplitSpec::default();
        assert!(train_chain(
            &[Level {
                data: lf.clone(),
                grid: grid.clone()
            }],
            &split
        )
        .is_err());
        let (wide, _) = crate::synthbench::generate_pair_dataset(
            &crate::synthbench::AnalyticPair::trig4(),
            20,
            10,
            &crate::synthbench::Sampler::lhs(0),
        )
        .unwrap();
        assert!(train_mf(&wide, &hf, &grid, &grid, &split).is_err());
    }
}
