//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Weights of a layer are stored row-major as an `outputs x inputs` matrix, so
//! a layer computes `y = act(W x + b)`. Batches are row-major `batch x dim`
//! buffers and every pass is expressed as a handful of matrix products.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y = act(x)`.
    #[inline]
    fn derivative_at_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Architecture of a [`DenseNet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl NetSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rectified-linear hidden layers between `input` and `output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, output_activation: Activation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, Activation::Relu, output_activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least an input and an output size, got {:?}",
                self.layer_sizes
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer size at position {pos} is zero")));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// One affine map. Also used as storage for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    inputs: usize,
    outputs: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        check_len("layer weight", inputs * outputs, weight.len())?;
        check_len("layer bias", outputs, bias.len())?;
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Row-major `outputs x inputs`.
    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parameter-shaped buffer: gradients, Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Flat view in the same order as [`DenseNet::param`].
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.values())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.values_mut())
    }

    pub fn get(&self, index: usize) -> T {
        *self.iter().nth(index).expect("parameter index out of range")
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, factor: T) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b * factor;
        }
        Ok(())
    }

    pub fn norm(&self) -> T {
        self.iter().map(|g| *g * *g).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub(crate) fn check_congruent(&self, other: &Self) -> Result<()> {
        check_len("gradient layer count", self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            check_len("gradient layer inputs", a.inputs, b.inputs)?;
            check_len("gradient layer outputs", a.outputs, b.outputs)?;
        }
        Ok(())
    }
}

/// Result of a backward pass: parameter gradients summed over the batch and
/// the per-example input gradient (`batch x input_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: ParamGrads<T>,
    pub input: Vec<T>,
}

/// Activations recorded by a forward pass; `activations[0]` is the input and
/// `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    batch: usize,
    activations: Vec<Vec<T>>,
}

impl<T: Scalar> Cache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[T] {
        self.activations.last().unwrap()
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    spec: NetSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> DenseNet<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = (0..inputs * outputs)
                    .map(|_| T::of(dist.sample(&mut rng)))
                    .collect();
                Layer {
                    inputs,
                    outputs,
                    weight,
                    bias: vec![T::zero(); outputs],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self { spec, layers })
    }

    /// Assemble a network from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: NetSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        spec.validate()?;
        check_len("layer count", spec.num_layers(), layers.len())?;
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs != spec.layer_sizes[i] || layer.outputs != spec.layer_sizes[i + 1] {
                return Err(Error::Load(format!(
                    "layer {i} is {}x{} but the architecture expects {}x{}",
                    layer.outputs,
                    layer.inputs,
                    spec.layer_sizes[i + 1],
                    spec.layer_sizes[i]
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// Flat parameter access: layer by layer, weights before biases.
    pub fn param(&self, index: usize) -> T {
        *self.params().nth(index).expect("parameter index out of range")
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        *self.params_mut().nth(index).expect("parameter index out of range") = value;
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.values())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.values_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Overwrite parameters with another network's, keeping allocations.
    pub fn copy_from(&mut self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Contract("copy between networks of different architectures".into()));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weight.copy_from_slice(&src.weight);
            dst.bias.copy_from_slice(&src.bias);
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, Cache<T>)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Output only, for callers that never backpropagate.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward(input).map(|(out, _)| out)
    }

    pub fn predict_batch(&self, inputs: &[T], batch: usize) -> Result<Vec<T>> {
        let mut cache = self.forward_batch(inputs, batch)?;
        Ok(cache.activations.pop().unwrap())
    }

    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<Cache<T>> {
        if batch == 0 {
            return Err(Error::Contract("forward pass over an empty batch".into()));
        }
        check_len("network input", batch * self.input_dim(), inputs.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut out = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                out.extend_from_slice(&layer.bias);
            }
            T::gemm(
                batch,
                layer.inputs,
                layer.outputs,
                T::one(),
                prev,
                false,
                &layer.weight,
                true,
                T::one(),
                &mut out,
            );
            let act = self.spec.activation(l);
            if act != Activation::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            activations.push(out);
        }
        Ok(Cache { batch, activations })
    }

    /// Gradients of `sum_b output_b . output_grad_b` with respect to every
    /// parameter (summed over the batch) and every input row.
    pub fn backward(&self, cache: &Cache<T>, output_grad: &[T]) -> Result<Gradients<T>> {
        let mut params = ParamGrads::zeros_like(self);
        let input = self.backprop(cache, output_grad, Some(&mut params))?;
        Ok(Gradients { params, input })
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn input_gradient(&self, cache: &Cache<T>, output_grad: &[T]) -> Result<Vec<T>> {
        self.backprop(cache, output_grad, None)
    }

    fn check_cache(&self, cache: &Cache<T>) -> Result<()> {
        check_len("cache depth", self.layers.len() + 1, cache.activations.len())?;
        for (size, act) in self.spec.layer_sizes.iter().zip(&cache.activations) {
            check_len("cached activation", cache.batch * size, act.len())?;
        }
        Ok(())
    }

    fn backprop(
        &self,
        cache: &Cache<T>,
        output_grad: &[T],
        mut params: Option<&mut ParamGrads<T>>,
    ) -> Result<Vec<T>> {
        self.check_cache(cache)?;
        let batch = cache.batch;
        check_len("output gradient", batch * self.output_dim(), output_grad.len())?;

        let n = self.layers.len();
        let out_act = self.spec.activation(n - 1);
        let mut delta: Vec<T> = output_grad
            .iter()
            .zip(cache.output())
            .map(|(&g, &y)| g * out_act.derivative_at_output(y))
            .collect();

        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let prev = &cache.activations[l];
            if let Some(grads) = params.as_deref_mut() {
                let g = &mut grads.layers[l];
                T::gemm(
                    layer.outputs,
                    batch,
                    layer.inputs,
                    T::one(),
                    &delta,
                    true,
                    prev,
                    false,
                    T::zero(),
                    &mut g.weight,
                );
                g.bias.iter_mut().for_each(|b| *b = T::zero());
                for row in delta.chunks_exact(layer.outputs) {
                    for (b, d) in g.bias.iter_mut().zip(row) {
                        *b += *d;
                    }
                }
            }
            let mut prev_grad = vec![T::zero(); batch * layer.inputs];
            T::gemm(
                batch,
                layer.outputs,
                layer.inputs,
                T::one(),
                &delta,
                false,
                &layer.weight,
                false,
                T::zero(),
                &mut prev_grad,
            );
            if l > 0 {
                let act = self.spec.activation(l - 1);
                for (g, &y) in prev_grad.iter_mut().zip(prev) {
                    *g *= act.derivative_at_output(y);
                }
            }
            delta = prev_grad;
        }
        Ok(delta)
    }
}
