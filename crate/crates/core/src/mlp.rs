//! Shallow fully connected networks trained by backpropagation.
//!
//! Each layer computes `z = a W + b` on a batch of row vectors, followed by
//! the hidden activation (tanh, ReLU or identity); the output layer is
//! always linear. Training minimizes the mean squared error over every
//! output entry with Adam (or plain gradient descent) on shuffled
//! minibatches, and keeps the parameters from the epoch with the lowest
//! validation loss.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidParameter("network input and output widths must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "need at least one hidden layer, all widths >= 1 (got {:?})",
                self.hidden
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 2000,
            batch_size: 32,
            early_stop_patience: 50,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("max_epochs and batch_size must be at least 1".into()));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::InvalidParameter(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("Adam moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArchitecture,
    layers: Vec<Dense>,
    history: Vec<EpochRecord>,
    best_epoch: usize,
}

/// Per-layer parameter gradients, same shapes as the layers.
pub type Gradients = Vec<Dense>;

impl MlpModel {
    /// Seeded fan-in uniform initialization: weights drawn from
    /// `U(-sqrt(3 / fan_in), sqrt(3 / fan_in))`, biases zero.
    pub fn init(arch: MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SeededRng::new(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (3.0 / fan_in as f64).sqrt();
                // Row-major draw order so the stream is layout independent.
                let vals: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
                Dense {
                    weights: DMatrix::from_row_slice(fan_in, fan_out, &vals),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn from_parts(arch: MlpArchitecture, layers: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weights.shape() != (*fan_in, *fan_out) || layer.bias.len() != *fan_out {
                return Err(Error::Shape(format!(
                    "layer {k}: expected weights ({fan_in}, {fan_out}) and {fan_out} biases"
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("layer {k} parameters"),
                    value: f64::NAN,
                });
            }
        }
        Ok(Self {
            arch,
            layers,
            history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Epoch whose parameters were kept (0 if never trained).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Dimension {
                context: "network inputs",
                expected: self.arch.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.arch.activation
        }
    }

    fn affine(layer: &Dense, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * &layer.weights;
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        z
    }

    /// Forward pass keeping `(z, a)` for every layer.
    fn forward_cache(&self, x: &DMatrix<f64>) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let mut cache: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = cache.last().map_or(x, |(_, a)| a);
            let z = Self::affine(layer, input);
            let act = self.activation_for(k);
            let a = z.map(|v| act.apply(v));
            cache.push((z, a));
        }
        cache
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(k);
            a = Self::affine(layer, &a).map(|v| act.apply(v));
        }
        Ok(a)
    }

    /// Prediction in the (scaled) space the network was trained in.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward(x)
    }

    /// Mean squared error over all entries.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let pred = self.forward(x)?;
        if pred.shape() != y.shape() {
            return Err(Error::Dimension {
                context: "network targets",
                expected: pred.ncols(),
                actual: y.ncols(),
            });
        }
        Ok(mse(&pred, y))
    }

    /// Loss and backpropagated gradients for a batch.
    pub fn gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        if y.nrows() != x.nrows() || y.ncols() != self.arch.output_dim {
            return Err(Error::Shape(format!(
                "targets {:?} do not match {} rows x {} outputs",
                y.shape(),
                x.nrows(),
                self.arch.output_dim
            )));
        }
        let cache = self.forward_cache(x);
        let out = &cache.last().expect("at least two layers").1;
        let loss = mse(out, y);
        let scale = 2.0 / (y.len() as f64);
        let mut delta = (out - y) * scale;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { x } else { &cache[k - 1].1 };
            let gw = input.tr_mul(&delta);
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if k > 0 {
                let back = &delta * self.layers[k].weights.transpose();
                let (z, a) = &cache[k - 1];
                let act = self.activation_for(k - 1);
                delta = back.zip_zip_map(z, a, |d, z, a| d * act.derivative(z, a));
            }
            grads.push(Dense { weights: gw, bias: gb });
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

fn mse(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl AdamState {
    fn new(layers: &[Dense]) -> Self {
        let zeros: Vec<Dense> = layers
            .iter()
            .map(|l| Dense {
                weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], cfg: &TrainConfig, t: i32) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..param.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

fn apply_step(model: &mut MlpModel, grads: &Gradients, cfg: &TrainConfig, adam: &mut AdamState) {
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (layer, g) in model.layers.iter_mut().zip(grads) {
                layer.weights -= &g.weights * cfg.learning_rate;
                layer.bias -= &g.bias * cfg.learning_rate;
            }
        }
        OptimizerKind::Adam => {
            adam.t += 1;
            let t = adam.t;
            for (k, (layer, g)) in model.layers.iter_mut().zip(grads).enumerate() {
                adam_update(
                    layer.weights.as_mut_slice(),
                    g.weights.as_slice(),
                    adam.m[k].weights.as_mut_slice(),
                    adam.v[k].weights.as_mut_slice(),
                    cfg,
                    t,
                );
                adam_update(
                    layer.bias.as_mut_slice(),
                    g.bias.as_slice(),
                    adam.m[k].bias.as_mut_slice(),
                    adam.v[k].bias.as_mut_slice(),
                    cfg,
                    t,
                );
            }
        }
    }
}

/// Trains a freshly initialized network on scaled data. An empty validation
/// set makes early stopping track the training loss instead.
pub fn mlp_train(
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    x_val: &DMatrix<f64>,
    y_val: &DMatrix<f64>,
) -> Result<MlpModel> {
    cfg.validate()?;
    let mut model = MlpModel::init(arch.clone(), cfg.seed)?;
    if x_train.nrows() == 0 {
        return Err(Error::Shape("empty training set".into()));
    }
    if x_train.nrows() != y_train.nrows() || y_train.ncols() != arch.output_dim {
        return Err(Error::Shape(format!(
            "training targets {:?} do not match inputs {:?}",
            y_train.shape(),
            x_train.shape()
        )));
    }
    model.check_input(x_train)?;
    let has_val = x_val.nrows() > 0;
    if has_val {
        model.check_input(x_val)?;
        if y_val.shape() != (x_val.nrows(), arch.output_dim) {
            return Err(Error::Shape("validation targets do not match inputs".into()));
        }
    }

    // Minibatch order uses its own stream so it does not perturb the weights.
    let mut rng = SeededRng::derive(cfg.seed, 1);
    let mut adam = AdamState::new(&model.layers);
    let mut best = (f64::INFINITY, model.layers.clone(), 0usize);
    let mut since_best = 0usize;
    let n = x_train.nrows();

    for epoch in 1..=cfg.max_epochs {
        let order = rng.permutation(n);
        for batch in order.chunks(cfg.batch_size) {
            let (xb, yb) = if batch.len() == n {
                (x_train.clone(), y_train.clone())
            } else {
                (x_train.select_rows(batch), y_train.select_rows(batch))
            };
            let (_, grads) = model.gradients(&xb, &yb)?;
            apply_step(&mut model, &grads, cfg, &mut adam);
        }
        let train_loss = model.loss(x_train, y_train)?;
        let val_loss = if has_val { model.loss(x_val, y_val)? } else { train_loss };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: cfg.learning_rate,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        model.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.layers.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.early_stop_patience {
                break;
            }
        }
    }
    model.layers = best.1;
    model.best_epoch = best.2;
    Ok(model)
}

/// `epoch,train_loss,val_loss` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            crate::dataset::format_float(r.train_loss),
            crate::dataset::format_float(r.val_loss)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_identity_neuron() {
        let arch = MlpArchitecture::new(2, vec![1], 1, Activation::Identity);
        let mut m = MlpModel::init(arch, 0).unwrap();
        m.layers[0].weights = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        m.layers[0].bias = DVector::from_element(1, 0.5);
        m.layers[1].weights = DMatrix::from_element(1, 1, 1.0);
        m.layers[1].bias = DVector::zeros(1);
        let out = m.forward(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        assert_eq!(out[(0, 0)], 3.5);
    }

    #[test]
    fn relu_clips_negative() {
        let arch = MlpArchitecture::new(1, vec![1], 1, Activation::Relu);
        let mut m = MlpModel::init(arch, 0).unwrap();
        m.layers[0].weights = DMatrix::from_element(1, 1, 1.0);
        m.layers[0].bias = DVector::from_element(1, -2.0);
        m.layers[1].weights = DMatrix::from_element(1, 1, 1.0);
        m.layers[1].bias = DVector::zeros(1);
        // z = 1 - 2 = -1
        let out = m.forward(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(out[(0, 0)], 0.0);
    }

    #[test]
    fn zero_weights_emit_output_bias() {
        let arch = MlpArchitecture::new(3, vec![4, 5], 2, Activation::Tanh);
        let mut m = MlpModel::init(arch, 1).unwrap();
        for l in m.layers_mut() {
            l.weights.fill(0.0);
        }
        m.layers.last_mut().unwrap().bias = DVector::from_column_slice(&[0.25, -4.0]);
        let x = DMatrix::from_fn(6, 3, |i, j| (i as f64) - (j as f64) * 0.3);
        let out = m.forward(&x).unwrap();
        for row in out.row_iter() {
            assert_eq!(row[0], 0.25);
            assert_eq!(row[1], -4.0);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        assert!(MlpArchitecture::new(2, vec![], 1, Activation::Tanh).validate().is_err());
        assert!(MlpArchitecture::new(2, vec![0], 1, Activation::Tanh).validate().is_err());
        let m = MlpModel::init(MlpArchitecture::new(2, vec![3], 1, Activation::Tanh), 0).unwrap();
        assert!(m.forward(&DMatrix::zeros(1, 3)).is_err());
        let bad = TrainConfig {
            early_stop_patience: 10,
            max_epochs: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let arch = MlpArchitecture::new(3, vec![8, 8], 2, Activation::Relu);
        let a = MlpModel::init(arch.clone(), 9).unwrap();
        let b = MlpModel::init(arch.clone(), 9).unwrap();
        let c = MlpModel::init(arch, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_epoch_with_zero_patience() {
        let arch = MlpArchitecture::new(1, vec![4], 1, Activation::Tanh);
        let cfg = TrainConfig {
            max_epochs: 1,
            early_stop_patience: 0,
            ..Default::default()
        };
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 / 10.0);
        let y = x.map(|v| 2.0 * v);
        let m = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap();
        assert_eq!(m.history().len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let arch = MlpArchitecture::new(1, vec![4], 1, Activation::Identity);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            optimizer: OptimizerKind::Sgd,
            max_epochs: 50,
            ..Default::default()
        };
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = x.map(|v| 3.0 * v);
        let err = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let arch = MlpArchitecture::new(1, vec![2], 1, Activation::Tanh);
        let empty = DMatrix::zeros(0, 1);
        assert!(mlp_train(&arch, &TrainConfig::default(), &empty, &empty, &empty, &empty).is_err());
    }

    fn param_mut(m: &mut MlpModel, layer: usize, p: usize) -> &mut f64 {
        let l = &mut m.layers[layer];
        let n_w = l.weights.len();
        if p < n_w {
            &mut l.weights.as_mut_slice()[p]
        } else {
            &mut l.bias.as_mut_slice()[p - n_w]
        }
    }

    fn max_fd_error(arch: MlpArchitecture) -> f64 {
        let mut m = MlpModel::init(arch.clone(), 3).unwrap();
        for (k, l) in m.layers_mut().iter_mut().enumerate() {
            for (i, b) in l.bias.iter_mut().enumerate() {
                *b = 0.1 * ((i + k) as f64).sin();
            }
        }
        let x = DMatrix::from_fn(5, arch.input_dim, |i, j| ((i * 3 + j) as f64 * 0.7).cos());
        let y = DMatrix::from_fn(5, arch.output_dim, |i, j| ((i + 2 * j) as f64 * 0.4).sin());
        let (_, grads) = m.gradients(&x, &y).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..m.layers.len() {
            let n_w = m.layers[k].weights.len();
            for p in 0..n_w + m.layers[k].bias.len() {
                let orig = *param_mut(&mut m, k, p);
                *param_mut(&mut m, k, p) = orig + eps;
                let up = m.loss(&x, &y).unwrap();
                *param_mut(&mut m, k, p) = orig - eps;
                let down = m.loss(&x, &y).unwrap();
                *param_mut(&mut m, k, p) = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = if p < n_w {
                    grads[k].weights.as_slice()[p]
                } else {
                    grads[k].bias[p - n_w]
                };
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            for depth in 1..=3 {
                let arch = MlpArchitecture::new(3, vec![6; depth], 2, act);
                let err = max_fd_error(arch);
                assert!(err < 1e-5, "{act} depth {depth}: {err}");
            }
        }
    }

    #[test]
    fn learns_a_line() {
        let x = DMatrix::from_fn(50, 1, |i, _| -1.0 + 2.0 * i as f64 / 49.0);
        let y = x.map(|v| 3.0 * v + 1.0);
        let arch = MlpArchitecture::new(1, vec![16], 1, Activation::Tanh);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 1500,
            batch_size: 16,
            ..Default::default()
        };
        let m = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap();
        let xt = DMatrix::from_fn(37, 1, |i, _| -0.95 + 1.9 * i as f64 / 36.0);
        let yt = xt.map(|v| 3.0 * v + 1.0);
        let pred = m.predict(&xt).unwrap();
        let mean = yt.mean();
        let ss_tot: f64 = yt.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = yt.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot > 0.999, "{}", 1.0 - ss_res / ss_tot);
    }

    #[test]
    fn full_batch_descent_is_monotone_on_linear_problem() {
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * 5 + j * 11) % 7) as f64 / 7.0);
        let y = DMatrix::from_fn(20, 1, |i, _| 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5);
        let arch = MlpArchitecture::new(2, vec![3], 1, Activation::Identity);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 200,
            batch_size: 20,
            early_stop_patience: 200,
            optimizer: OptimizerKind::Sgd,
            ..Default::default()
        };
        let m = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap();
        assert_eq!(m.history().len(), 200);
        for w in m.history().windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{w:?}");
        }
    }

    #[test]
    fn training_is_reproducible() {
        let x = DMatrix::from_fn(30, 2, |i, j| ((i + j) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(30, 1, |i, _| x[(i, 0)] * x[(i, 1)]);
        let arch = MlpArchitecture::new(2, vec![8], 1, Activation::Tanh);
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 8,
            early_stop_patience: 10,
            seed: 4,
            ..Default::default()
        };
        let a = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap();
        let b = mlp_train(&arch, &cfg, &x, &y, &x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_csv_layout() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
        }]);
        assert_eq!(csv, "epoch,train_loss,val_loss\n1,0.5,0.25\n");
    }
}
