//! Trained models behind one interface, bundled with the scalers that map
//! raw data into and out of the space they were trained in.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{unflatten, DataTensor, FlatMatrix};
use crate::error::{Error, Result};
use crate::gpr::{gpr_fit, optimize_hyperparameters, GprModel, KernelSpec, OptimizeOptions};
use crate::mlp::{mlp_train, Activation, MlpArchitecture, MlpModel, TrainConfig};
use crate::preprocess::{PreparedData, StandardScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gpr,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gpr => "gpr",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gpr" | "gp" | "kriging" => Ok(ModelKind::Gpr),
            "mlp" | "nn" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidParameter(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Surrogate {
    Gpr(GprModel),
    Mlp(MlpModel),
}

impl Surrogate {
    pub fn kind(&self) -> ModelKind {
        match self {
            Surrogate::Gpr(_) => ModelKind::Gpr,
            Surrogate::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Surrogate::Gpr(m) => m.input_dim(),
            Surrogate::Mlp(m) => m.architecture().input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Surrogate::Gpr(m) => m.output_dim(),
            Surrogate::Mlp(m) => m.architecture().output_dim,
        }
    }

    /// Prediction in scaled space.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Surrogate::Gpr(m) => m.predict_mean(x),
            Surrogate::Mlp(m) => m.predict(x),
        }
    }

    /// Free parameters: optimized hyperparameters for a GP, weights and
    /// biases for a network.
    pub fn parameter_count(&self) -> usize {
        match self {
            Surrogate::Gpr(m) => {
                let k = m.kernel();
                k.length_scale.values().len() + k.scaled as usize + 1
            }
            Surrogate::Mlp(m) => m.parameter_count(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Surrogate::Gpr(m) => m.kernel().label(),
            Surrogate::Mlp(m) => mlp_label(&m.architecture().hidden, m.architecture().activation),
        }
    }
}

fn mlp_label(hidden: &[usize], activation: Activation) -> String {
    let widths: Vec<String> = hidden.iter().map(|w| w.to_string()).collect();
    format!("mlp[{}]-{activation}", widths.join("x"))
}

/// Column layout of a flat block, kept so predictions can be reshaped and
/// labelled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub m: usize,
    pub l: usize,
    pub scalar_names: Vec<String>,
}

impl Layout {
    pub fn of(flat: &FlatMatrix) -> Self {
        Self {
            m: flat.m(),
            l: flat.l(),
            scalar_names: flat.scalar_names().to_vec(),
        }
    }

    pub fn plain(cols: usize) -> Self {
        Self {
            m: cols,
            l: 1,
            scalar_names: (0..cols).map(|i| format!("s{i}")).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.m * self.l
    }

    /// One name per flat column: the scalar name, suffixed by the
    /// coordinate index when `l > 1`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for name in &self.scalar_names {
            if self.l == 1 {
                out.push(name.clone());
            } else {
                out.extend((0..self.l).map(|k| format!("{name}[{k}]")));
            }
        }
        out
    }

    pub fn wrap(&self, data: DMatrix<f64>) -> Result<FlatMatrix> {
        FlatMatrix::new(data, self.m, self.l, self.scalar_names.clone())
    }

    pub fn to_tensor(&self, data: &DMatrix<f64>) -> Result<DataTensor> {
        unflatten(data, self.m, self.l)?.with_scalar_names(self.scalar_names.iter().cloned())
    }
}

/// A model plus the scalers fitted on its training bin.
#[derive(Debug, Clone)]
pub struct ScaledModel {
    pub model: Surrogate,
    pub x_scaler: StandardScaler,
    pub y_scaler: StandardScaler,
    pub inputs: Layout,
    pub outputs: Layout,
}

impl ScaledModel {
    pub fn new(
        model: Surrogate,
        x_scaler: StandardScaler,
        y_scaler: StandardScaler,
        inputs: Layout,
        outputs: Layout,
    ) -> Result<Self> {
        if x_scaler.fitted_on() != model.input_dim() || inputs.width() != model.input_dim() {
            return Err(Error::Dimension {
                context: "input scaler columns",
                expected: model.input_dim(),
                actual: x_scaler.fitted_on(),
            });
        }
        if y_scaler.fitted_on() != model.output_dim() || outputs.width() != model.output_dim() {
            return Err(Error::Dimension {
                context: "output scaler columns",
                expected: model.output_dim(),
                actual: y_scaler.fitted_on(),
            });
        }
        Ok(Self {
            model,
            x_scaler,
            y_scaler,
            inputs,
            outputs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    /// scale, predict, inverse-transform.
    pub fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let xs = self.x_scaler.transform(x_raw)?;
        self.y_scaler.inverse_transform(&self.model.predict(&xs)?)
    }

    /// Mean and per-output standard deviation in original units (GPR only).
    pub fn predict_raw_with_std(&self, x_raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let Surrogate::Gpr(gp) = &self.model else {
            return Err(Error::Unsupported(
                "predictive uncertainty is only available for GPR models".into(),
            ));
        };
        let xs = self.x_scaler.transform(x_raw)?;
        let p = gp.predict(&xs)?;
        let mean = self.y_scaler.inverse_transform(&p.mean)?;
        let std = DMatrix::from_fn(p.mean.nrows(), p.mean.ncols(), |i, c| {
            p.variance[i].sqrt() * self.y_scaler.std_factor(c)
        });
        Ok((mean, std))
    }
}

/// Anything that maps raw inputs to raw outputs: a single scaled model or a
/// multi-fidelity chain.
pub trait RawPredictor: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn output_layout(&self) -> &Layout;
    fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Short identifier for reports.
    fn describe(&self) -> String;
    fn hyperparameters(&self) -> serde_json::Value;
}

impl RawPredictor for ScaledModel {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    fn output_layout(&self) -> &Layout {
        &self.outputs
    }

    fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ScaledModel::predict_raw(self, x_raw)
    }

    fn describe(&self) -> String {
        self.model.label()
    }

    fn hyperparameters(&self) -> serde_json::Value {
        match &self.model {
            Surrogate::Gpr(m) => serde_json::to_value(m.summary()).unwrap_or_default(),
            Surrogate::Mlp(m) => serde_json::json!({
                "architecture": m.architecture(),
                "parameters": m.parameter_count(),
                "best_epoch": m.best_epoch(),
                "epochs_run": m.history().len(),
            }),
        }
    }
}

/// What to train for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Gpr {
        kernel: KernelSpec,
        /// `None` keeps the kernel hyperparameters as given.
        optimize: Option<OptimizeOptions>,
    },
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
        train: TrainConfig,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Gpr { .. } => ModelKind::Gpr,
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Gpr { kernel, .. } => kernel.label(),
            ModelSpec::Mlp { hidden, activation, .. } => mlp_label(hidden, *activation),
        }
    }

    /// Trains on already-scaled matrices. The validation pair drives early
    /// stopping for networks and is ignored by GPR.
    pub fn fit_scaled(
        &self,
        x_train: &DMatrix<f64>,
        y_train: &DMatrix<f64>,
        x_val: &DMatrix<f64>,
        y_val: &DMatrix<f64>,
    ) -> Result<Surrogate> {
        match self {
            ModelSpec::Gpr { kernel, optimize } => {
                let kernel = match optimize {
                    Some(opts) => optimize_hyperparameters(x_train, y_train, kernel, opts)?.spec,
                    None => kernel.clone(),
                };
                Ok(Surrogate::Gpr(gpr_fit(x_train, y_train, &kernel)?))
            }
            ModelSpec::Mlp {
                hidden,
                activation,
                train,
            } => {
                let arch = MlpArchitecture::new(x_train.ncols(), hidden.clone(), y_train.ncols(), *activation);
                Ok(Surrogate::Mlp(mlp_train(&arch, train, x_train, y_train, x_val, y_val)?))
            }
        }
    }

    /// Trains on the training bin of `data` and attaches its scalers.
    pub fn fit(&self, data: &PreparedData) -> Result<ScaledModel> {
        let model = self.fit_scaled(
            data.x_train.matrix(),
            data.y_train.matrix(),
            data.x_val.matrix(),
            data.y_val.matrix(),
        )?;
        ScaledModel::new(
            model,
            data.x_scaler.clone(),
            data.y_scaler.clone(),
            Layout::of(&data.x_train),
            Layout::of(&data.y_train),
        )
    }
}
