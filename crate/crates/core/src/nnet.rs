//! Minimal dense feed-forward networks with hand-written backpropagation.
//!
//! Shared by the per-user response simulators (squared error on the whole
//! output vector) and the Q-network (squared error on one output unit).
//! Everything is `f64` and deterministic given the seed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, usage, Error, Result};
use crate::math::{dot, sqrt};
use crate::rng::{rng_from_seed, Rng};

/// Elementwise nonlinearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer, weights stored row-major as `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(usage("layer dimensions must be positive"));
        }
        check_len("layer weights", inputs * outputs, weights.len())?;
        check_len("layer bias", outputs, bias.len())?;
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row `o` of the weight matrix (the fan-in of output unit `o`).
    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// Column `i` of the weight matrix (the fan-out of input `i`).
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.weights[o * self.inputs + i])
            .collect()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| {
            self.activation
                .apply(self.bias[o] + dot(self.row(o), x))
        }));
    }
}

/// Per-layer outputs of a forward pass; entry 0 is the input itself and the
/// last entry is the network output.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("activations always hold the input")
    }

    /// Output of layer `k` (1-based; 0 is the input).
    pub fn layer(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetRecord", into = "NetRecord")]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network with He-style uniform initialisation,
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, and zero biases.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(usage("a network needs at least an input and an output dimension"));
        }
        check_len("activation tags", dims.len() - 1, activations.len())?;
        if dims.iter().any(|&d| d == 0) {
            return Err(usage("layer dimensions must be positive"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = sqrt(6.0 / fan_in as f64);
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(usage("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_len("layer chain", pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Squared Frobenius norm of all weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| dot(&l.weights, &l.weights)).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Activations> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(values.last().unwrap(), &mut out);
            values.push(out);
        }
        Ok(Activations { values })
    }

    /// Forward pass returning only the output vector.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Gradients of a loss with respect to every parameter, given the loss
    /// gradient at the network output. The weight gradients include the
    /// ℓ2 term `l2_lambda * w`; biases are not regularised.
    pub fn backward(&self, input: &[f64], output_grad: &[f64], l2_lambda: f64) -> Result<Gradients> {
        let acts = self.forward(input)?;
        check_len("output gradient", self.output_dim(), output_grad.len())?;
        let mut grads = Gradients::zeros_like(self);
        self.accumulate(&acts, output_grad, &mut grads);
        grads.add_weight_decay(self, l2_lambda);
        Ok(grads)
    }

    /// Adds the data gradient for one example into `grads`.
    fn accumulate(&self, acts: &Activations, output_grad: &[f64], grads: &mut Gradients) {
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(acts.output())
            .map(|(g, &y)| g * self.layers.last().unwrap().activation.derivative_at_output(y))
            .collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &acts.values[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
            if k == 0 {
                break;
            }
            let prev_act = self.layers[k - 1].activation;
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(layer.row(o)) {
                    *p += d * w;
                }
            }
            for (p, &y) in prev.iter_mut().zip(x) {
                *p *= prev_act.derivative_at_output(y);
            }
            delta = prev;
        }
    }

    fn apply_update(&mut self, step: &Gradients) {
        for (layer, s) in self.layers.iter_mut().zip(&step.layers) {
            for (w, d) in layer.weights.iter_mut().zip(&s.weights) {
                *w -= d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&s.bias) {
                *b -= d;
            }
        }
    }

    /// Mutable access for tests and hand-built networks.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let l = &mut self.layers[k];
        (&mut l.weights, &mut l.bias)
    }
}

/// Parameter-shaped gradient (or update) buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g *= factor);
            l.bias.iter_mut().for_each(|g| *g *= factor);
        }
    }

    fn add_weight_decay(&mut self, net: &DenseNet, l2_lambda: f64) {
        if l2_lambda == 0.0 {
            return;
        }
        for (g, layer) in self.layers.iter_mut().zip(&net.layers) {
            for (gw, w) in g.weights.iter_mut().zip(&layer.weights) {
                *gw += l2_lambda * w;
            }
        }
    }

    /// Iterates over every gradient entry, weights before biases per layer.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }
}

/// Update rule applied by [`Trainer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Hyperparameters for gradient training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_lambda: 0.0,
            batch_size: 32,
            max_epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(usage("learning_rate must be positive"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(usage("l2_lambda must be nonnegative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(usage("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state: Adam moments or nothing for plain SGD.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    moments: Option<(Gradients, Gradients)>,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            moments: None,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    /// Applies one update to `net` from the gradient `grads`.
    pub fn apply(&mut self, net: &mut DenseNet, grads: &Gradients) {
        match self.kind {
            OptimizerKind::Sgd => {
                let mut step = grads.clone();
                step.scale(self.learning_rate);
                net.apply_update(&step);
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (Gradients::zeros_like(net), Gradients::zeros_like(net)));
                self.beta1_pow *= ADAM_BETA1;
                self.beta2_pow *= ADAM_BETA2;
                let lr = self.learning_rate * sqrt(1.0 - self.beta2_pow) / (1.0 - self.beta1_pow);
                let mut step = grads.clone();
                for ((sl, ml), vl) in step.layers.iter_mut().zip(&mut m.layers).zip(&mut v.layers) {
                    let pairs = sl
                        .weights
                        .iter_mut()
                        .chain(sl.bias.iter_mut())
                        .zip(ml.weights.iter_mut().chain(ml.bias.iter_mut()))
                        .zip(vl.weights.iter_mut().chain(vl.bias.iter_mut()));
                    for ((s, mi), vi) in pairs {
                        let g = *s;
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        *s = lr * *mi / (sqrt(*vi) + ADAM_EPS);
                    }
                }
                net.apply_update(&step);
            }
        }
    }
}

/// What an example's output is regressed onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target<'a> {
    /// Squared error on every output unit.
    Dense(&'a [f64]),
    /// Squared error on a single output unit; the others get no gradient.
    Action { index: usize, value: f64 },
}

/// A weighted training example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub target: Target<'a>,
    pub weight: f64,
}

impl<'a> Sample<'a> {
    pub fn dense(input: &'a [f64], target: &'a [f64]) -> Self {
        Self {
            input,
            target: Target::Dense(target),
            weight: 1.0,
        }
    }

    pub fn action(input: &'a [f64], index: usize, value: f64) -> Self {
        Self {
            input,
            target: Target::Action { index, value },
            weight: 1.0,
        }
    }
}

/// Objective and gradient over a batch:
/// `sum_i w_i * 0.5 * |f(x_i) - t_i|^2 / sum_i w_i + (l2 / 2) * |W|^2`.
pub fn batch_loss_and_gradients(
    net: &DenseNet,
    batch: &[Sample<'_>],
    l2_lambda: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(usage("cannot compute a gradient from an empty batch"));
    }
    let total_weight: f64 = batch.iter().map(|s| s.weight).sum();
    if !(total_weight > 0.0) {
        return Err(usage("batch weights must sum to a positive value"));
    }
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; net.output_dim()];
    for sample in batch {
        let acts = net.forward(sample.input)?;
        let out = acts.output();
        let w = sample.weight / total_weight;
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        match sample.target {
            Target::Dense(t) => {
                check_len("regression target", out.len(), t.len())?;
                for ((g, y), t) in out_grad.iter_mut().zip(out).zip(t) {
                    let r = y - t;
                    loss += w * 0.5 * r * r;
                    *g = w * r;
                }
            }
            Target::Action { index, value } => {
                if index >= out.len() {
                    return Err(Error::Shape {
                        context: "action target index",
                        expected: out.len(),
                        found: index,
                    });
                }
                let r = out[index] - value;
                loss += w * 0.5 * r * r;
                out_grad[index] = w * r;
            }
        }
        net.accumulate(&acts, &out_grad, &mut grads);
    }
    loss += 0.5 * l2_lambda * net.weight_norm_sq();
    grads.add_weight_decay(net, l2_lambda);
    Ok((loss, grads))
}

/// Stop rule for [`Trainer::fit`]: halt once the best loss of the last
/// `window` epochs improves on the best loss before them by a relative
/// amount below `tolerance`. Comparing best-so-far values keeps a single
/// oscillating epoch from ending a run that is still descending.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    pub tolerance: f64,
}

impl Plateau {
    fn should_stop(&self, history: &[f64]) -> bool {
        if history.len() <= self.window {
            return false;
        }
        let (older, recent) = history.split_at(history.len() - self.window);
        let best = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
        let before = best(older);
        (before - best(recent)) / before.abs().max(f64::MIN_POSITIVE) < self.tolerance
    }
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            window: 10,
            tolerance: 1e-6,
        }
    }
}

/// A network together with its optimizer state and configuration.
#[derive(Clone, Debug)]
pub struct Trainer {
    net: DenseNet,
    optimizer: Optimizer,
    config: TrainConfig,
    rng: Rng,
}

impl Trainer {
    pub fn new(net: DenseNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            rng: rng_from_seed(config.seed),
            net,
            config,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn into_net(self) -> DenseNet {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One optimizer update on `batch`. Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[Sample<'_>]) -> Result<f64> {
        let (loss, grads) = batch_loss_and_gradients(&self.net, batch, self.config.l2_lambda)?;
        self.optimizer.apply(&mut self.net, &grads);
        Ok(loss)
    }

    /// Minibatch training over `samples` for up to `max_epochs` epochs, with
    /// a seeded shuffle each epoch. Returns the mean pre-update batch loss of
    /// every completed epoch.
    pub fn fit(&mut self, samples: &[Sample<'_>], plateau: Option<Plateau>) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(usage("cannot fit on an empty sample set"));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::new();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.max_epochs {
            if samples.len() > self.config.batch_size {
                order.shuffle(&mut self.rng);
            }
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i]));
                epoch_loss += self.train_step(&batch)?;
                batches += 1;
            }
            let epoch_loss = epoch_loss / batches as f64;
            history.push(epoch_loss);
            if !epoch_loss.is_finite() {
                return Err(usage(String::from("training diverged to a non-finite loss")));
            }
            if let Some(p) = plateau {
                if epoch_loss == 0.0 {
                    break;
                }
                if p.should_stop(&history) {
                    break;
                }
            }
        }
        Ok(history)
    }
}

/// Versioned on-disk form of a [`DenseNet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetRecord {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    /// Row-major `outputs x inputs` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

const NET_FORMAT: &str = "dense-net";
const NET_VERSION: u32 = 1;

impl From<DenseNet> for NetRecord {
    fn from(net: DenseNet) -> Self {
        Self {
            format: NET_FORMAT.into(),
            version: NET_VERSION,
            layer_dims: net.layer_dims(),
            activations: net.activations(),
            weights: net.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers.into_iter().map(|l| l.bias).collect(),
        }
    }
}

impl TryFrom<NetRecord> for DenseNet {
    type Error = Error;

    fn try_from(r: NetRecord) -> Result<Self> {
        if r.format != NET_FORMAT || r.version != NET_VERSION {
            return Err(usage(alloc::format!(
                "unsupported network format {} v{}",
                r.format,
                r.version
            )));
        }
        if r.layer_dims.len() < 2 {
            return Err(usage("layer_dims needs at least two entries"));
        }
        let n = r.layer_dims.len() - 1;
        check_len("activation tags", n, r.activations.len())?;
        check_len("weight arrays", n, r.weights.len())?;
        check_len("bias arrays", n, r.biases.len())?;
        let layers = r
            .weights
            .into_iter()
            .zip(r.biases)
            .zip(&r.activations)
            .enumerate()
            .map(|(k, ((w, b), &a))| Layer::new(r.layer_dims[k], r.layer_dims[k + 1], w, b, a))
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn net(dims: &[usize], acts: &[Activation], seed: u64) -> DenseNet {
        DenseNet::new(dims, acts, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let l = Layer::new(3, 3, w, vec![0.0; 3], Activation::Identity).unwrap();
        let n = DenseNet::from_layers(vec![l]).unwrap();
        assert_eq!(n.predict(&[0.5, -2.0, 7.0]).unwrap(), [0.5, -2.0, 7.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let l = Layer::new(2, 1, vec![1.0, -1.0], vec![0.0], Activation::Relu).unwrap();
        let n = DenseNet::from_layers(vec![l]).unwrap();
        assert_eq!(n.predict(&[2.0, 3.0]).unwrap(), [0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let n = net(&[3, 2], &[Activation::Identity], 1);
        assert!(matches!(n.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn shapes_must_chain() {
        let a = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(2, 1, vec![0.0; 2], vec![0.0; 1], Activation::Identity).unwrap();
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
        assert!(DenseNet::new(&[2, 3], &[], &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let n = net(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 2);
        let x = [0.3, -0.1, 0.8];
        let y = n.predict(&x).unwrap();
        let (loss, g) = batch_loss_and_gradients(&n, &[Sample::dense(&x, &y)], 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn regulariser_only_gradient_is_lambda_w() {
        let n = net(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 3);
        let lambda = 0.37;
        let g = n.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0], lambda).unwrap();
        for (gl, l) in g.layers.iter().zip(n.layers()) {
            for (gw, w) in gl.weights.iter().zip(l.weights()) {
                assert_eq!(*gw, lambda * w);
            }
            assert!(gl.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn action_target_touches_only_that_unit() {
        let n = net(&[3, 5, 4], &[Activation::Relu, Activation::Identity], 4);
        let x = [0.2, 0.9, -0.4];
        let (_, g) = batch_loss_and_gradients(&n, &[Sample::action(&x, 2, 3.0)], 0.0).unwrap();
        let last = g.layers.last().unwrap();
        for o in 0..4 {
            let row = &last.weights[o * 5..(o + 1) * 5];
            if o == 2 {
                assert!(last.bias[o] != 0.0);
            } else {
                assert_eq!(last.bias[o], 0.0);
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut t = Trainer::new(net(&[1, 1], &[Activation::Identity], 5), TrainConfig::default()).unwrap();
        assert!(matches!(t.train_step(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn one_sgd_step_decreases_quadratic_loss() {
        let l = Layer::new(1, 1, vec![2.0], vec![0.0], Activation::Identity).unwrap();
        let n = DenseNet::from_layers(vec![l]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(n, cfg).unwrap();
        let batch = [Sample::dense(&[1.0], &[0.0])];
        let before = t.train_step(&batch).unwrap();
        let after = t.train_step(&batch).unwrap();
        assert!(after < before);
    }

    #[test]
    fn serde_record_rejects_bad_version() {
        let n = net(&[2, 2], &[Activation::Relu], 6);
        let mut r = NetRecord::from(n);
        r.version = 99;
        assert!(DenseNet::try_from(r).is_err());
    }

    #[test]
    fn plateau_compares_best_losses() {
        let p = Plateau { window: 3, tolerance: 1e-6 };
        assert!(!p.should_stop(&[5.0, 4.0, 3.0]));
        // A blip above the loss three epochs back is not a plateau while the
        // window still holds a new best.
        assert!(!p.should_stop(&[5.0, 4.0, 3.0, 2.0, 3.5]));
        assert!(p.should_stop(&[5.0, 2.0, 2.5, 2.2, 2.1]));
        assert!(p.should_stop(&[1.0, 1.0, 1.0, 1.0]));
    }
}
