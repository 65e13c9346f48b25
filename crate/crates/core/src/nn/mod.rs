//! Minimal dense networks with hand-written reverse mode.
//!
//! Parameters flatten in a fixed canonical order: layer by layer, the weight
//! matrix row-major (`out × in`) followed by the bias vector. Every flat
//! gradient in the crate uses that order.

mod checkpoint;
mod classifier;
mod loss;

pub use classifier::{predict, top_k, train_classifier, ClassifierConfig, TrainedClassifier};
pub use checkpoint::{read_net, read_net_from, write_net, write_net_to, NET_MAGIC, NET_VERSION};
pub use loss::{
    batch_gradient, per_example_grads, per_example_losses, per_example_losses_and_grads, Batch, Loss, LossTag, Targets,
    LOGIT_CLAMP,
};

use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};

use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(invalid(format!("unknown activation {other}"))),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// `inputs[i]` feeds layer `i`; the last entry is the network output.
    pub(crate) activations: Vec<Array2<f64>>,
    pub(crate) pre: Vec<Array2<f64>>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.output_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Random initialization with weights `N(0, 1/fan_in)` and zero biases.
    /// `sizes` lists the widths from input to output; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        noise: &mut NoiseSource,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(invalid("network needs >= 2 positive layer widths"));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (1.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| scale * noise.gaussian());
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    /// Same architecture with parameters taken from `params`.
    pub fn unflatten(&self, params: &[f64]) -> Result<DenseNet> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = params[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let mut x = inputs.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = z;
        }
        Ok(x)
    }

    fn check_input(&self, inputs: &Array2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, inputs: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(inputs)?;
        let mut activations = vec![inputs.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = activations.last().expect("nonempty");
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Backpropagates `d_out` (gradient of each row's loss w.r.t. the
    /// network output). Returns the per-example parameter gradients as a
    /// `b × P` matrix in canonical order, plus the gradient w.r.t. inputs.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_out: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let b = d_out.nrows();
        let mut grads = Array2::<f64>::zeros((b, self.param_count()));
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }

        let mut upstream = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let post = &cache.activations[l + 1];
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(pre)
                .and(post)
                .for_each(|d, &p, &a| *d *= layer.activation.derivative(p, a));

            let input = &cache.activations[l];
            let (out_dim, in_dim) = layer.weights.dim();
            let base = offsets[l];
            for (mut row, (d, x)) in grads
                .axis_iter_mut(Axis(0))
                .zip(delta.axis_iter(Axis(0)).zip(input.axis_iter(Axis(0))))
            {
                for o in 0..out_dim {
                    let dv = d[o];
                    let start = base + o * in_dim;
                    for i in 0..in_dim {
                        row[start + i] = dv * x[i];
                    }
                    row[base + out_dim * in_dim + o] = dv;
                }
            }
            upstream = delta.dot(&layer.weights);
        }
        (grads, upstream)
    }

    /// Mean-reduced variant of [`backward`](Self::backward): returns
    /// `(1/b)·Σ_i grad_i` without materializing per-example rows.
    pub(crate) fn backward_mean(
        &self,
        cache: &ForwardCache,
        d_out: Array2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let b = d_out.nrows().max(1) as f64;
        let mut per_layer: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut upstream = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let post = &cache.activations[l + 1];
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(pre)
                .and(post)
                .for_each(|d, &p, &a| *d *= layer.activation.derivative(p, a));
            let gw = delta.t().dot(&cache.activations[l]) / b;
            let gb = delta.sum_axis(Axis(0)) / b;
            per_layer.push((gw, gb));
            upstream = delta.dot(&layer.weights);
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in per_layer {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (flat, upstream)
    }

    /// In-place `θ ← θ − η·grad`.
    pub fn apply_gradient(&mut self, grad: &[f64], eta: f64) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: grad.len(),
            });
        }
        let mut it = grad.iter();
        for layer in &mut self.layers {
            for (w, g) in layer.weights.iter_mut().zip(it.by_ref()) {
                *w -= eta * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(it.by_ref()) {
                *b -= eta * g;
            }
        }
        Ok(())
    }
}

/// `θ − η·grad` as a new network.
pub fn sgd_step(net: &DenseNet, grad: &[f64], eta: f64) -> Result<DenseNet> {
    let mut next = net.clone();
    next.apply_gradient(grad, eta)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> DenseNet {
        DenseNet::new(vec![Layer {
            weights,
            bias,
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(Array2::eye(3), Array1::zeros(3), Activation::Identity);
        let x = array![[1.0, -2.0, 3.5], [0.0, 0.25, -1.0]];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_relu_net_outputs_zero() {
        let net = single(Array2::zeros((2, 3)), Array1::zeros(2), Activation::Relu);
        let out = net.forward(&array![[1.0, 2.0, 3.0]]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_layer_matches_straight_line_evaluation() {
        let mut noise = NoiseSource::new(5, 0);
        let net = DenseNet::init(&[3, 4, 2], Activation::Tanh, Activation::Sigmoid, &mut noise)
            .unwrap();
        let x = [0.3, -1.2, 0.7];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = [0.0; 4];
        for o in 0..4 {
            let mut s = l0.bias[o];
            for i in 0..3 {
                s += l0.weights[[o, i]] * x[i];
            }
            hidden[o] = s.tanh();
        }
        let out = net.forward(&Array2::from_shape_vec((1, 3), x.to_vec()).unwrap()).unwrap();
        for o in 0..2 {
            let mut s = l1.bias[o];
            for i in 0..4 {
                s += l1.weights[[o, i]] * hidden[i];
            }
            let want = 1.0 / (1.0 + (-s).exp());
            assert!((out[[0, o]] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut noise = NoiseSource::new(6, 0);
        let net = DenseNet::init(&[5, 8, 3], Activation::Relu, Activation::Identity, &mut noise)
            .unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 1.0);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn dimension_errors() {
        let net = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        assert!(net.forward(&Array2::zeros((1, 3))).is_err());
        assert!(DenseNet::new(vec![
            Layer { weights: Array2::zeros((2, 3)), bias: Array1::zeros(2), activation: Activation::Relu },
            Layer { weights: Array2::zeros((1, 3)), bias: Array1::zeros(1), activation: Activation::Relu },
        ])
        .is_err());
        assert!(sgd_step(&net, &[1.0], 0.1).is_err());
    }

    #[test]
    fn flatten_round_trips() {
        let mut noise = NoiseSource::new(7, 0);
        let net = DenseNet::init(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut noise)
            .unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), 3 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(net.unflatten(&flat).unwrap(), net);
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut noise = NoiseSource::new(8, 0);
        let net = DenseNet::init(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut noise)
            .unwrap();
        let g = vec![1.0; net.param_count()];
        assert_eq!(sgd_step(&net, &g, 0.0).unwrap(), net);
    }

    #[test]
    fn sgd_on_one_dimensional_quadratic() {
        // θ = 1, f(θ) = θ², gradient 2θ
        let net = single(array![[1.0]], array![0.0], Activation::Identity);
        let theta = net.flatten();
        let grad = vec![2.0 * theta[0], 0.0];
        let next = sgd_step(&net, &grad, 0.1).unwrap();
        assert!((next.flatten()[0] - 0.8).abs() < 1e-15);
    }
}
