//! Small fully connected networks with hand-written backpropagation and an
//! adaptive-moment optimizer.
//!
//! Weights are stored row-major as `outputs x inputs`, so output unit `o`
//! reads `weights[o * inputs .. (o + 1) * inputs]`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Largest double below one.
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside `(0, 1)` even where the exact
/// value rounds to an endpoint.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_CEIL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Parameters of a multilayer perceptron: ReLU on every hidden layer and a
/// configurable head activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpParams {
    /// `sizes = [input, hidden.., output]`. Weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_activation: Activation, rng: &mut R) -> Self {
        let mut params = Self::zeros(sizes, output_activation);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn zeros(sizes: &[usize], output_activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self {
            layers,
            hidden_activation: Activation::Relu,
            output_activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Visit every parameter in a fixed order (layer by layer, weights then biases).
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Forward pass returning the output and the cache needed by [`MlpParams::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_size() {
            return Err(Error::shape("mlp input", self.input_size(), input.len()));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut current = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(idx);
            let mut z = layer.biases.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *zo += dot(row, &current);
            }
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            cache.inputs.push(current);
            cache.pre_activations.push(z);
            current = y;
        }
        cache.inputs.push(current.clone());
        Ok((current, cache))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_size() {
            return Err(Error::shape("mlp input", self.input_size(), input.len()));
        }
        let mut current = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(idx);
            let mut next = layer.biases.clone();
            for (o, v) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *v = act.apply(*v + dot(row, &current));
            }
            current = next;
        }
        Ok(current)
    }

    /// Gradients of `output_gradient · output` with respect to every
    /// parameter and to the input vector.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<Gradients> {
        let mut params = GradientBuffer::zeros_like(self);
        let input = self.backward_accumulate(cache, output_gradient, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Like [`MlpParams::backward`] but adds the parameter gradient into `acc`.
    /// Returns the input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        acc: &mut GradientBuffer,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if !acc.matches(self) {
            return Err(Error::shape("gradient buffer layers", self.layers.len(), acc.layers.len()));
        }
        if output_gradient.len() != self.output_size() {
            return Err(Error::shape("mlp output gradient", self.output_size(), output_gradient.len()));
        }
        let mut delta: Vec<f64> = output_gradient.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = self.activation_of(idx);
            let z = &cache.pre_activations[idx];
            let y = &cache.inputs[idx + 1];
            for o in 0..layer.outputs {
                delta[o] *= act.derivative(z[o], y[o]);
            }
            let x = &cache.inputs[idx];
            let grad = &mut acc.layers[idx];
            for o in 0..layer.outputs {
                let d = delta[o];
                grad.biases[o] += d;
                if d != 0.0 {
                    let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Forward pass over a batch stored one sample per column
    /// (`input_size x batch`).
    pub fn forward_batch(&self, input: DMatrix<f64>) -> Result<BatchCache> {
        if input.nrows() != self.input_size() {
            return Err(Error::shape("mlp batch input rows", self.input_size(), input.nrows()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input;
        for (idx, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(idx);
            let z = layer_affine(layer, &current);
            let y = z.map(|v| act.apply(v));
            inputs.push(current);
            pre_activations.push(z);
            current = y;
        }
        inputs.push(current);
        Ok(BatchCache { inputs, pre_activations })
    }

    /// Batched forward pass without keeping intermediate activations.
    pub fn predict_batch(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if input.nrows() != self.input_size() {
            return Err(Error::shape("mlp batch input rows", self.input_size(), input.nrows()));
        }
        let mut current = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(idx);
            current = layer_affine(layer, &current);
            current.apply(|v| *v = act.apply(*v));
        }
        Ok(current)
    }

    /// Batched backward pass. `output_gradient` holds one column per sample;
    /// parameter gradients summed over the batch are added into `acc` when
    /// given. Returns the per-sample input gradients.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        output_gradient: &DMatrix<f64>,
        mut acc: Option<&mut GradientBuffer>,
    ) -> Result<DMatrix<f64>> {
        if cache.pre_activations.len() != self.layers.len() {
            return Err(Error::shape("batch cache depth", self.layers.len(), cache.pre_activations.len()));
        }
        let batch = cache.batch_size();
        if output_gradient.nrows() != self.output_size() || output_gradient.ncols() != batch {
            return Err(Error::shape("mlp batch output gradient", self.output_size() * batch, output_gradient.len()));
        }
        if let Some(acc) = acc.as_deref() {
            if !acc.matches(self) {
                return Err(Error::shape("gradient buffer layers", self.layers.len(), acc.layers.len()));
            }
        }
        let mut delta = output_gradient.clone();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = self.activation_of(idx);
            let z = &cache.pre_activations[idx];
            let y = &cache.inputs[idx + 1];
            if z.nrows() != layer.outputs || cache.inputs[idx].nrows() != layer.inputs {
                return Err(Error::shape("batch cache layer", layer.outputs, z.nrows()));
            }
            delta.zip_zip_apply(z, y, |d, zv, yv| *d *= act.derivative(zv, yv));
            let x = &cache.inputs[idx];
            if let Some(acc) = acc.as_deref_mut() {
                // dW = delta * x^T (outputs x inputs), stored row-major.
                let dw = &delta * x.transpose();
                let grad = &mut acc.layers[idx];
                for o in 0..layer.outputs {
                    for i in 0..layer.inputs {
                        grad.weights[o * layer.inputs + i] += dw[(o, i)];
                    }
                    grad.biases[o] += delta.row(o).sum();
                }
            }
            delta = layer_matrix(layer).transpose() * delta;
        }
        Ok(delta)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.pre_activations.len() != self.layers.len() || cache.inputs.len() != self.layers.len() + 1 {
            return Err(Error::shape("forward cache depth", self.layers.len(), cache.pre_activations.len()));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            if cache.inputs[idx].len() != layer.inputs {
                return Err(Error::shape("forward cache layer input", layer.inputs, cache.inputs[idx].len()));
            }
            if cache.pre_activations[idx].len() != layer.outputs {
                return Err(Error::shape(
                    "forward cache layer output",
                    layer.outputs,
                    cache.pre_activations[idx].len(),
                ));
            }
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_matrix(layer: &Layer) -> DMatrix<f64> {
    DMatrix::from_row_slice(layer.outputs, layer.inputs, &layer.weights)
}

/// `W x + b` for every column of `x`.
fn layer_affine(layer: &Layer, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = layer_matrix(layer) * x;
    for mut col in z.column_iter_mut() {
        for (v, b) in col.iter_mut().zip(&layer.biases) {
            *v += b;
        }
    }
    z
}

/// Column-per-sample activations recorded by [`MlpParams::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchCache {
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
}

impl BatchCache {
    /// Network outputs, `output_size x batch`.
    pub fn output(&self) -> &DMatrix<f64> {
        &self.inputs[self.inputs.len() - 1]
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].ncols()
    }
}

/// Per-layer inputs and pre-activations recorded by [`MlpParams::forward`].
/// `inputs` holds one extra trailing entry: the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Pre-activation values of every layer, input side first.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter-shaped accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub layers: Vec<LayerGradient>,
}

impl GradientBuffer {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Rescale so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: GradientBuffer,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers and step counter of the adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: GradientBuffer,
    pub second_moment: GradientBuffer,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: GradientBuffer::zeros_like(params),
            second_moment: GradientBuffer::zeros_like(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient contained NaN or infinity; nothing changed.
    SkippedNonFinite,
}

/// Bias-corrected adaptive-moment descent step on `params` (minimizes).
pub fn optimizer_step(
    params: &mut MlpParams,
    grads: &GradientBuffer,
    opt: &mut OptimizerState,
) -> Result<StepOutcome> {
    if !grads.matches(params) {
        return Err(Error::shape("optimizer gradient layers", params.layers.len(), grads.layers.len()));
    }
    if !opt.first_moment.matches(params) || !opt.second_moment.matches(params) {
        return Err(Error::shape("optimizer moment layers", params.layers.len(), opt.first_moment.layers.len()));
    }
    if !grads.is_finite() {
        return Ok(StepOutcome::SkippedNonFinite);
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = opt.config;
    opt.step += 1;
    let t = opt.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let moments = opt.first_moment.values_mut().zip(opt.second_moment.values_mut());
    for ((p, g), (m, v)) in params.params_mut().zip(grads.values()).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(StepOutcome::Applied)
}

/// `target <- (1 - tau) * target + tau * online`, element-wise.
pub fn soft_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::shape("soft update layers", online.layers.len(), target.layers.len()));
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}
