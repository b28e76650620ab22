//! Multilayer perceptron regressing time onto modal coefficients.
//!
//! Columns are samples throughout: a batch of `n` times is a `1 x n`
//! matrix and the network output is `L x n`.

mod file;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use file::{read_model, write_loss_csv, write_model};
pub use train::{
    backward, gradient_check, mse_loss, split_dataset, train, CoefficientDataset, Gradients, LossHistory, Optimizer, Split,
    TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::invalid(format!("unknown activation '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-component affine map `scaled = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self { offset: vec![0.0; n], scale: vec![1.0; n] }
    }

    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() {
            return Err(Error::DimensionMismatch { expected: offset.len(), found: scale.len() });
        }
        if scale.iter().chain(&offset).any(|v| !v.is_finite()) || scale.contains(&0.0) {
            return Err(Error::invalid("scaler needs finite offsets and finite non-zero scales"));
        }
        Ok(Self { offset, scale })
    }

    /// Maps each row of `x` (components x samples) onto [0, 1]. A constant row keeps scale 1.
    pub fn fit_min_max(x: &DMatrix<f64>) -> Self {
        let (mut offset, mut scale) = (Vec::new(), Vec::new());
        for r in x.row_iter() {
            let (lo, hi) = (r.min(), r.max());
            offset.push(lo);
            scale.push(if hi > lo { hi - lo } else { 1.0 });
        }
        Self { offset, scale }
    }

    /// Zero mean, unit (population) standard deviation per row. A constant row keeps scale 1.
    pub fn fit_standard(x: &DMatrix<f64>) -> Self {
        let (mut offset, mut scale) = (Vec::new(), Vec::new());
        for r in x.row_iter() {
            let n = r.len() as f64;
            let mean = r.sum() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            offset.push(mean);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { offset, scale }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.offset[i]) / self.scale[i])
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.scale[i] + self.offset[i])
    }
}

/// Dense layer `z = W a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Feedforward network with a shared hidden activation and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) layers: Vec<Layer>,
    pub(crate) activation: Activation,
    pub(crate) input_scaler: Scaler,
    pub(crate) output_scaler: Scaler,
}

impl MlpModel {
    /// Weights uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero biases,
    /// identity scalers.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("a network needs at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer in {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    biases: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            input_scaler: Scaler::identity(layer_sizes[0]),
            output_scaler: Scaler::identity(layer_sizes[layer_sizes.len() - 1]),
        })
    }

    /// Network from explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, input_scaler: Scaler, output_scaler: Scaler) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.biases.len() != l.n_out() || l.n_out() == 0 || l.n_in() == 0 {
                return Err(Error::invalid(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && layers[k - 1].n_out() != l.n_in() {
                return Err(Error::DimensionMismatch { expected: layers[k - 1].n_out(), found: l.n_in() });
            }
        }
        if input_scaler.dim() != layers[0].n_in() || output_scaler.dim() != layers[layers.len() - 1].n_out() {
            return Err(Error::invalid("scaler dimensions do not match the network"));
        }
        let model = Self { layers, activation, input_scaler, output_scaler };
        if model.parameters().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite network parameter"));
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in()];
        s.extend(self.layers.iter().map(Layer::n_out));
        s
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_scaler(&self) -> &Scaler {
        &self.input_scaler
    }

    pub fn output_scaler(&self) -> &Scaler {
        &self.output_scaler
    }

    pub fn set_scalers(&mut self, input: Scaler, output: Scaler) -> Result<()> {
        let sizes = self.layer_sizes();
        if input.dim() != sizes[0] || output.dim() != sizes[sizes.len() - 1] {
            return Err(Error::invalid("scaler dimensions do not match the network"));
        }
        self.input_scaler = input;
        self.output_scaler = output;
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All weights and biases, layer by layer (weights column-major, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(l.biases.as_slice());
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch { expected: self.n_parameters(), found: p.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.as_mut_slice().copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Activations of every layer for scaled inputs; the last entry is the
    /// scaled network output.
    pub(crate) fn activations(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &acts[k];
            for mut c in z.column_iter_mut() {
                c += &l.biases;
            }
            if k < last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Output in scaled coefficient space for scaled inputs.
    pub fn forward_scaled(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    /// Physical outputs (`L x n`) for physical inputs (`n_inputs x n`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), found: x.nrows() });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(self.output_scaler.invert(&self.forward_scaled(&self.input_scaler.apply(x))))
    }

    /// Coefficients predicted at a single time.
    pub fn forward(&self, t: f64) -> Result<Vec<f64>> {
        let y = self.forward_batch(&DMatrix::from_element(1, 1, t))?;
        Ok(y.as_slice().to_vec())
    }

    /// Coefficients for several times, one column each.
    pub fn predict(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        self.forward_batch(&DMatrix::from_row_slice(1, times.len(), times))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain-loop re-evaluation of the network, sharing no code with `activations`.
    fn reference_forward(m: &MlpModel, t: f64) -> Vec<f64> {
        let mut a = vec![(t - m.input_scaler.offset[0]) / m.input_scaler.scale[0]];
        for (k, l) in m.layers.iter().enumerate() {
            let mut next = vec![0.0; l.n_out()];
            for (i, out) in next.iter_mut().enumerate() {
                let mut z = l.biases[i];
                for (j, aj) in a.iter().enumerate() {
                    z += l.weights[(i, j)] * aj;
                }
                *out = if k + 1 < m.layers.len() {
                    match m.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Relu => {
                            if z > 0.0 {
                                z
                            } else {
                                0.0
                            }
                        }
                    }
                } else {
                    z
                };
            }
            a = next;
        }
        a.iter().enumerate().map(|(i, v)| v * m.output_scaler.scale[i] + m.output_scaler.offset[i]).collect()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpModel::init(&[1, 16, 16, 4], Activation::Tanh, 3).unwrap();
        let b = MlpModel::init(&[1, 16, 16, 4], Activation::Tanh, 3).unwrap();
        let c = MlpModel::init(&[1, 16, 16, 4], Activation::Tanh, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.parameters(), c.parameters());
        for l in a.layers() {
            assert!(l.biases.iter().all(|&v| v == 0.0));
            let bound = (6.0 / l.n_in() as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
        assert_eq!(a.layer_sizes(), vec![1, 16, 16, 4]);
        assert_eq!(a.n_parameters(), 16 + 16 + 16 * 16 + 16 + 16 * 4 + 4);
        assert!(MlpModel::init(&[1, 0, 4], Activation::Tanh, 0).is_err());
        assert!(MlpModel::init(&[1], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn zero_network_returns_offset() {
        let mut m = MlpModel::init(&[1, 8, 3], Activation::Relu, 0).unwrap();
        let zeros = vec![0.0; m.n_parameters()];
        m.set_parameters(&zeros).unwrap();
        m.set_scalers(Scaler::new(vec![0.2], vec![0.8]).unwrap(), Scaler::new(vec![1.0, -2.0, 3.5], vec![2.0, 1.0, 0.5]).unwrap())
            .unwrap();
        assert_eq!(m.forward(0.37).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn hand_built_affine_map() {
        // y = (2 t + 1, -t + 0.5) with scaled input (t - 1) / 2.
        let layer = Layer {
            weights: DMatrix::from_row_slice(2, 1, &[4.0, -2.0]),
            biases: DVector::from_column_slice(&[3.0, -0.5]),
        };
        let m = MlpModel::from_layers(vec![layer], Activation::Tanh, Scaler::new(vec![1.0], vec![2.0]).unwrap(), Scaler::identity(2))
            .unwrap();
        for t in [-1.0, 0.0, 0.25, 3.0] {
            let y = m.forward(t).unwrap();
            assert_eq!(y, vec![2.0 * t + 1.0, -t + 0.5]);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = MlpModel::init(&[1, 4, 2], Activation::Tanh, 0).unwrap();
        assert!(matches!(m.forward(f64::NAN), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn scaler_fits() {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0]);
        let mm = Scaler::fit_min_max(&x);
        assert_eq!(mm.offset, vec![0.0, 5.0]);
        assert_eq!(mm.scale, vec![3.0, 1.0]);
        let st = Scaler::fit_standard(&x);
        assert_eq!(st.offset, vec![1.5, 5.0]);
        assert!((st.scale[0] - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(st.scale[1], 1.0);
        assert!(Scaler::new(vec![0.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn scaler_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 6), off in -10.0f64..10.0, sc in 0.01f64..100.0) {
            let s = Scaler::new(vec![off, -off], vec![sc, 1.0 / sc]).unwrap();
            let x = DMatrix::from_column_slice(2, 3, &vals);
            let back = s.invert(&s.apply(&x));
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn forward_matches_reference(seed in any::<u64>(), t in -0.5f64..1.5, relu in any::<bool>()) {
            let act = if relu { Activation::Relu } else { Activation::Tanh };
            let mut m = MlpModel::init(&[1, 7, 5, 3], act, seed).unwrap();
            m.set_scalers(Scaler::new(vec![0.1], vec![0.9]).unwrap(), Scaler::new(vec![1.0, 2.0, 3.0], vec![0.5, 2.0, 4.0]).unwrap()).unwrap();
            let a = m.forward(t).unwrap();
            let b = reference_forward(&m, t);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn tanh_at_scaler_midpoint() {
        let mut m = MlpModel::init(&[1, 6, 6, 2], Activation::Tanh, 12).unwrap();
        m.set_scalers(Scaler::new(vec![0.0], vec![0.8]).unwrap(), Scaler::new(vec![0.5, -0.5], vec![3.0, 0.1]).unwrap()).unwrap();
        let a = m.forward(0.4).unwrap();
        let b = reference_forward(&m, 0.4);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-13);
        }
    }
}
