//! Multilayer perceptrons for the two function families.
//!
//! Hidden layers use `tanh`; the head is either a sigmoid (outputs in (0,1))
//! or the identity. Weights are stored `(fan_in, fan_out)` so a batch
//! `X (n × in)` maps to `X·W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FmcaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(OutputActivation::Sigmoid),
            "identity" => Some(OutputActivation::Identity),
            _ => None,
        }
    }
}

/// One affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    output_activation: OutputActivation,
}

/// Per-layer activations from a forward pass, reused by backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("cache always holds the input")
    }
}

/// Gradients with the same shapes as [`MlpParams`] layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn scale(&self, s: f64) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: &l.weights * s,
                    bias: &l.bias * s,
                })
                .collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpParams {
    /// Uniform(−a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], output_activation: OutputActivation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(FmcaError::InvalidArgument(format!(
                "an MLP needs at least an input and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(FmcaError::InvalidArgument(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            output_activation,
        })
    }

    /// Rebuilds a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(layers: Vec<Layer>, output_activation: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(FmcaError::InvalidArgument("no layers".into()));
        }
        let mut sizes = vec![layers[0].weights.nrows()];
        for (i, l) in layers.iter().enumerate() {
            let (fi, fo) = l.weights.dim();
            if fi != *sizes.last().unwrap() || l.bias.len() != fo || fo == 0 || fi == 0 {
                return Err(FmcaError::DimensionMismatch(format!(
                    "layer {i}: weights {fi}x{fo}, bias {}, expected fan-in {}",
                    l.bias.len(),
                    sizes.last().unwrap()
                )));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(FmcaError::InvalidArgument(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
            sizes.push(fo);
        }
        Ok(MlpParams {
            layer_sizes: sizes,
            layers,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(FmcaError::DimensionMismatch(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(FmcaError::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.into_output())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_batch(&x)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights);
            z += &layer.bias.view().insert_axis(Axis(0));
            if i < last {
                z.mapv_inplace(f64::tanh);
            } else if self.output_activation == OutputActivation::Sigmoid {
                z.mapv_inplace(sigmoid);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradient of `Σₙ ⟨out_grads[n], forward(x)[n]⟩` with respect to every parameter.
    pub fn backward(&self, x: ArrayView2<f64>, out_grads: ArrayView2<f64>) -> Result<MlpGrads> {
        let cache = self.forward_cached(x)?;
        self.backward_cached(&cache, out_grads)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, out_grads: ArrayView2<f64>) -> Result<MlpGrads> {
        let out = cache.output();
        if out_grads.dim() != out.dim() {
            return Err(FmcaError::DimensionMismatch(format!(
                "output gradients are {:?}, forward outputs are {:?}",
                out_grads.dim(),
                out.dim()
            )));
        }
        let mut delta = out_grads.to_owned();
        if self.output_activation == OutputActivation::Sigmoid {
            Zip::from(&mut delta).and(out).for_each(|d, &a| *d *= a * (1.0 - a));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.activations[i];
            grads[i].weights = input.t().dot(&delta);
            grads[i].bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                Zip::from(&mut prev).and(input).for_each(|d, &a| *d *= 1.0 - a * a);
                delta = prev;
            }
        }
        Ok(MlpGrads { layers: grads })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let zeros: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.first.len() != params.layers.len() {
            return Err(FmcaError::DimensionMismatch(format!(
                "gradient has {} layers, network {}",
                grads.layers.len(),
                params.layers.len()
            )));
        }
        for (i, (g, p)) in grads.layers.iter().zip(&params.layers).enumerate() {
            if g.weights.dim() != p.weights.dim() || g.bias.dim() != p.bias.dim() {
                return Err(FmcaError::DimensionMismatch(format!("layer {i} gradient shape")));
            }
            if !g.weights.iter().all(|v| v.is_finite()) {
                return Err(FmcaError::NonFiniteGradient(format!("layer {i} weights")));
            }
            if !g.bias.iter().all(|v| v.is_finite()) {
                return Err(FmcaError::NonFiniteGradient(format!("layer {i} bias")));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for i in 0..params.layers.len() {
            let (p, g) = (&mut params.layers[i], &grads.layers[i]);
            Zip::from(&mut p.weights)
                .and(&mut self.first[i].weights)
                .and(&mut self.second[i].weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut self.first[i].bias)
                .and(&mut self.second[i].bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
