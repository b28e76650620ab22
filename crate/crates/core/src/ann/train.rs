use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Layer, MlpModel, Scaler};
use crate::error::{Error, Result};
use crate::pod::Variable;

/// Disjoint train/validation index sets, each sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Times and their target coefficient vectors (`L x N`, one column per time).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDataset {
    pub inputs: Vec<f64>,
    pub targets: DMatrix<f64>,
    pub split: Split,
}

impl CoefficientDataset {
    /// Dataset with every sample in the training set.
    pub fn new(inputs: Vec<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.len() != targets.ncols() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), found: targets.ncols() });
        }
        if inputs.is_empty() || targets.nrows() == 0 {
            return Err(Error::invalid("empty coefficient dataset"));
        }
        if let Some(index) = inputs.iter().chain(targets.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let split = Split { train: (0..inputs.len()).collect(), validation: Vec::new() };
        Ok(Self { inputs, targets, split })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.validation) {
            if i >= n || seen[i] {
                return Err(Error::invalid("split indices must be distinct and in range"));
            }
            seen[i] = true;
        }
        if seen.contains(&false) {
            return Err(Error::invalid("split must cover every sample"));
        }
        self.split = split;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.nrows()
    }

    fn columns(&self, mask: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(1, mask.len(), |_, j| self.inputs[mask[j]]);
        let t = DMatrix::from_fn(self.targets.nrows(), mask.len(), |i, j| self.targets[(i, mask[j])]);
        (x, t)
    }
}

/// Seeded random split with `round(f N)` training samples.
pub fn split_dataset(dataset: &CoefficientDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("splitting needs at least two samples"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!("train fraction {train_fraction} leaves an empty partition of {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut validation = idx[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train, validation })
}

fn squared_error(y: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    (y - t).norm_squared() / y.len() as f64
}

/// Mean squared error over the masked samples and all outputs, in scaled target space.
pub fn mse_loss(model: &MlpModel, dataset: &CoefficientDataset, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("loss over an empty mask"));
    }
    check_outputs(model, dataset)?;
    let (x, t) = dataset.columns(mask);
    let y = model.forward_scaled(&model.input_scaler.apply(&x));
    Ok(squared_error(&y, &model.output_scaler.apply(&t)))
}

fn check_outputs(model: &MlpModel, dataset: &CoefficientDataset) -> Result<()> {
    if model.n_inputs() != 1 {
        return Err(Error::invalid("coefficient regression expects a single time input"));
    }
    if model.n_outputs() != dataset.n_outputs() {
        return Err(Error::DimensionMismatch { expected: model.n_outputs(), found: dataset.n_outputs() });
    }
    Ok(())
}

/// Loss gradients, shaped like the network layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// Flattened in the order of [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut g = Vec::new();
        for l in &self.layers {
            g.extend_from_slice(l.weights.as_slice());
            g.extend_from_slice(l.biases.as_slice());
        }
        g
    }
}

/// Loss and gradient for scaled inputs `x` and scaled targets `t`.
pub(crate) fn backward_scaled(model: &MlpModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Gradients) {
    let acts = model.activations(x);
    let y = &acts[acts.len() - 1];
    let loss = squared_error(y, t);
    let mut delta = (y - t) * (2.0 / y.len() as f64);
    let mut grads = Vec::with_capacity(model.layers.len());
    for k in (0..model.layers.len()).rev() {
        let dw = &delta * acts[k].transpose();
        let db = delta.column_sum();
        if k > 0 {
            let mut next = model.layers[k].weights.tr_mul(&delta);
            next.zip_apply(&acts[k], |d, a| *d *= model.activation.derivative_from_output(a));
            delta = next;
        }
        grads.push(Layer { weights: dw, biases: db });
    }
    grads.reverse();
    (loss, Gradients { layers: grads })
}

/// Loss and its gradient with respect to every weight and bias on the masked samples.
pub fn backward(model: &MlpModel, dataset: &CoefficientDataset, mask: &[usize]) -> Result<(f64, Gradients)> {
    if mask.is_empty() {
        return Err(Error::invalid("gradient over an empty mask"));
    }
    check_outputs(model, dataset)?;
    let (x, t) = dataset.columns(mask);
    Ok(backward_scaled(model, &model.input_scaler.apply(&x), &model.output_scaler.apply(&t)))
}

/// Largest discrepancy between the analytic gradient and central differences
/// with step `h`, measured as `|g - fd| / max(|g|, |fd|, 1e-3)`.
pub fn gradient_check(model: &MlpModel, dataset: &CoefficientDataset, mask: &[usize], h: f64) -> Result<f64> {
    let (_, g) = backward(model, dataset, mask)?;
    let g = g.flatten();
    let p0 = model.parameters();
    let mut probe = model.clone();
    let mut p = p0.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        p[i] = p0[i] + h;
        probe.set_parameters(&p)?;
        let up = mse_loss(&probe, dataset, mask)?;
        p[i] = p0[i] - h;
        probe.set_parameters(&p)?;
        let down = mse_loss(&probe, dataset, mask)?;
        p[i] = p0[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent.
    Gd,
    /// Heavy-ball momentum.
    Momentum { beta: f64 },
    /// Adaptive moment estimation with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gd" | "plain-gradient" | "sgd" => Ok(Optimizer::Gd),
            "momentum" => Ok(Optimizer::Momentum { beta: 0.9 }),
            "adam" | "adaptive-moment" => Ok(Self::adam()),
            _ => Err(Error::invalid(format!("unknown optimizer '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Gd => "plain-gradient",
            Optimizer::Momentum { .. } => "momentum",
            Optimizer::Adam { .. } => "adaptive-moment",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub neurons_per_layer: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub train_fraction: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    /// Full-scale hyperparameters per variable (three hidden layers each).
    pub fn full_scale(variable: Variable) -> Self {
        let (neurons, activation, epochs, lr) = match variable {
            Variable::Pressure => (500, Activation::Relu, 50_000, 1.0e-6),
            Variable::Velocity => (850, Activation::Tanh, 100_000, 8.25e-6),
            Variable::Wss => (900, Activation::Tanh, 100_000, 5.5e-6),
        };
        Self {
            epochs,
            learning_rate: lr,
            neurons_per_layer: neurons,
            hidden_layers: 3,
            activation,
            train_fraction: 0.95,
            seed: 0,
            optimizer: Optimizer::adam(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.neurons_per_layer == 0 && self.hidden_layers > 0 {
            return Err(Error::invalid("hidden layers need at least one neuron"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, n_outputs: usize) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(std::iter::repeat_n(self.neurons_per_layer, self.hidden_layers));
        s.push(n_outputs);
        s
    }

    pub fn build_model(&self, n_outputs: usize) -> Result<MlpModel> {
        self.validate()?;
        MlpModel::init(&self.layer_sizes(n_outputs), self.activation, self.seed)
    }
}

/// Loss at the start of every epoch, plus the loss after the last update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub train: Vec<f64>,
    /// NaN when the dataset has no validation samples.
    pub validation: Vec<f64>,
    pub final_train: f64,
    pub final_validation: f64,
}

/// Full-batch training on the dataset's training split.
///
/// The input scaler is refitted to map the training times onto [0, 1] and
/// the output scaler to standardise each training coefficient; the loss is
/// measured in that scaled space.
pub fn train(model: &MlpModel, dataset: &CoefficientDataset, cfg: &TrainConfig) -> Result<(MlpModel, LossHistory)> {
    cfg.validate()?;
    check_outputs(model, dataset)?;
    if dataset.split.train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut model = model.clone();
    let (x_tr, t_tr) = dataset.columns(&dataset.split.train);
    model.set_scalers(Scaler::fit_min_max(&x_tr), Scaler::fit_standard(&t_tr))?;
    let x_tr = model.input_scaler.apply(&x_tr);
    let t_tr = model.output_scaler.apply(&t_tr);
    let val = (!dataset.split.validation.is_empty()).then(|| {
        let (x, t) = dataset.columns(&dataset.split.validation);
        (model.input_scaler.apply(&x), model.output_scaler.apply(&t))
    });
    let val_loss = |m: &MlpModel| val.as_ref().map_or(f64::NAN, |(x, t)| squared_error(&m.forward_scaled(x), t));

    let mut params = model.parameters();
    let n = params.len();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let lr = cfg.learning_rate;
    let mut history = LossHistory {
        train: Vec::with_capacity(cfg.epochs),
        validation: Vec::with_capacity(cfg.epochs),
        ..LossHistory::default()
    };
    for epoch in 0..cfg.epochs {
        let (loss, grads) = backward_scaled(&model, &x_tr, &t_tr);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        history.train.push(loss);
        history.validation.push(val_loss(&model));
        let g = grads.flatten();
        match cfg.optimizer {
            Optimizer::Gd => {
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= lr * gi;
                }
            }
            Optimizer::Momentum { beta } => {
                for i in 0..n {
                    m1[i] = beta * m1[i] + g[i];
                    params[i] -= lr * m1[i];
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let k = (epoch + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(k), 1.0 - beta2.powi(k));
                for i in 0..n {
                    m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                    m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                    params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                }
            }
        }
        model.set_parameters(&params)?;
        if epoch % 1000 == 999 {
            log::debug!("epoch {}: train {:.3e} validation {:.3e}", epoch + 1, loss, history.validation[epoch]);
        }
    }
    history.final_train = squared_error(&model.forward_scaled(&x_tr), &t_tr);
    if !history.final_train.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs, loss: history.final_train });
    }
    history.final_validation = val_loss(&model);
    Ok((model, history))
}
