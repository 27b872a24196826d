//! Dense multilayer perceptrons with taped reverse-mode differentiation, the
//! scalar losses used by the learners, and an Adam optimizer.
//!
//! Weights are row-major `out × in`. A network with zero layers is the
//! identity map on its input, which is how a purely linear Q-function (no
//! hidden encoder) is expressed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::config(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::numeric("non-finite layer parameter"));
        }
        Ok(Self { in_dim, out_dim, weight, bias, activation })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self { in_dim, out_dim, weight, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Pre-activation `W x + b`. Zero inputs are skipped, which makes one-hot
    /// observations cheap; the per-output summation order is unchanged.
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (o, zo) in z.iter_mut().enumerate() {
                *zo += self.weight[o * self.in_dim + j] * xj;
            }
        }
        z
    }
}

/// An ordered chain of dense layers: the parameter set of one sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    in_dim: usize,
    layers: Vec<Dense>,
}

/// Everything recorded by one forward pass that the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.layer_inputs[0]
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// Re-run the recorded pass through `net` and check it reproduces the
    /// recorded intermediates bit for bit.
    pub fn replays_on(&self, net: &Mlp) -> bool {
        match net.forward(self.input()) {
            Ok((_, tape)) => &tape == self,
            Err(_) => false,
        }
    }
}

/// Gradient of a scalar loss with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGradient] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerGradient] {
        &mut self.layers
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&g| g == 0.0)
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }
}

impl Mlp {
    pub fn new(in_dim: usize, layers: Vec<Dense>) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::config("network input dimension must be positive"));
        }
        let mut dim = in_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim != dim {
                return Err(Error::config(format!(
                    "layer {k} expects input {} but the previous output is {dim}",
                    layer.in_dim
                )));
            }
            dim = layer.out_dim;
        }
        Ok(Self { in_dim, layers })
    }

    /// Zero-layer network: the identity on `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        Self { in_dim: dim, layers: Vec::new() }
    }

    /// Randomly initialised chain `in_dim -> widths[0] -> ... -> widths[last]`.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        widths: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut dim = in_dim;
        for (k, &w) in widths.iter().enumerate() {
            let act = if k + 1 == widths.len() { last } else { hidden };
            layers.push(Dense::init(dim, w, act, rng)?);
            dim = w;
        }
        Self::new(in_dim, layers)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::config(format!("input has length {} but the network expects {}", x.len(), self.in_dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite network input"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&h);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            layer_inputs.push(std::mem::replace(&mut h, next));
            pre_activations.push(z);
        }
        if layer_inputs.is_empty() {
            layer_inputs.push(h.clone());
        }
        let tape = Tape { layer_inputs, pre_activations, output: h.clone() };
        Ok((h, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.affine(&h);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            h = z;
        }
        Ok(h)
    }

    /// Reverse pass. Returns the parameter gradient and the gradient with
    /// respect to the network input.
    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<(Gradient, Vec<f64>)> {
        let mut grad = Gradient::zeros_like(self);
        let dx = self.backward_into(tape, output_gradient, &mut grad)?;
        Ok((grad, dx))
    }

    /// Like [`Mlp::backward`] but adds into an existing gradient.
    pub fn backward_into(&self, tape: &Tape, output_gradient: &[f64], grad: &mut Gradient) -> Result<Vec<f64>> {
        if tape.depth() != self.layers.len() || tape.input().len() != self.in_dim {
            return Err(Error::numeric("tape was not recorded on this network"));
        }
        if output_gradient.len() != tape.output.len() {
            return Err(Error::numeric(format!(
                "output gradient has length {} but the taped output has {}",
                output_gradient.len(),
                tape.output.len()
            )));
        }
        if !grad.same_shape(self) {
            return Err(Error::numeric("gradient accumulator shape does not match the network"));
        }
        let mut upstream = output_gradient.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.layer_inputs[k];
            let z = &tape.pre_activations[k];
            let dz: Vec<f64> = upstream.iter().zip(z).map(|(&g, &zv)| g * layer.activation.derivative(zv)).collect();
            let lg = &mut grad.layers[k];
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                lg.bias[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut lg.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for j in 0..layer.in_dim {
                    grow[j] += d * x[j];
                    dx[j] += row[j] * d;
                }
            }
            upstream = dx;
        }
        Ok(upstream)
    }

    /// Polyak averaging `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Huber loss of `prediction - target` and its derivative with respect to the
/// prediction. Quadratic (`0.5 δ²`) inside the threshold, linear outside, so
/// the derivative is clipped to `±threshold`.
pub fn huber(prediction: f64, target: f64, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0) {
        return Err(Error::config(format!("huber threshold must be positive, got {threshold}")));
    }
    if !prediction.is_finite() || !target.is_finite() || !threshold.is_finite() {
        return Err(Error::numeric("non-finite huber input"));
    }
    let delta = prediction - target;
    if delta.abs() <= threshold {
        Ok((0.5 * delta * delta, delta))
    } else {
        Ok((threshold * (delta.abs() - 0.5 * threshold), threshold * delta.signum()))
    }
}

/// Squared error `δ²` and its derivative `2δ`.
#[inline]
pub fn squared_error(prediction: f64, target: f64) -> (f64, f64) {
    let delta = prediction - target;
    (delta * delta, 2.0 * delta)
}

/// Divide the gradient entries of the listed encoder layers by the number of
/// heads that sit on top of them. Other layers are returned unchanged.
pub fn scale_encoder_gradients(gradient: &Gradient, encoder_layers: &[usize], head_count: usize) -> Result<Gradient> {
    if head_count == 0 {
        return Err(Error::config("head count must be at least 1"));
    }
    let mut out = gradient.clone();
    for &k in encoder_layers {
        let layer = out
            .layers
            .get_mut(k)
            .ok_or_else(|| Error::config(format!("encoder layer index {k} out of range")))?;
        if head_count > 1 {
            let f = head_count as f64;
            layer.weight.iter_mut().chain(layer.bias.iter_mut()).for_each(|g| *g /= f);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam moments for one [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: AdamConfig,
    first: Gradient,
    second: Gradient,
    step: u64,
}

impl OptimState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self { config, first: Gradient::zeros_like(net), second: Gradient::zeros_like(net), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradient {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradient {
        &self.second
    }
}

/// One bias-corrected Adam update over flat slices.
fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Apply one Adam step. A non-finite gradient is rejected and leaves both
/// the parameters and the optimizer state untouched.
pub fn optimizer_step(params: &mut Mlp, gradient: &Gradient, state: &mut OptimState) -> Result<()> {
    if !gradient.same_shape(params) || !state.first.same_shape(params) {
        return Err(Error::numeric("gradient or optimizer state shape does not match the parameters"));
    }
    if !gradient.is_finite() {
        return Err(Error::numeric("non-finite gradient, optimizer step rejected"));
    }
    state.step += 1;
    for (k, layer) in params.layers.iter_mut().enumerate() {
        let g = &gradient.layers[k];
        let m = &mut state.first.layers[k];
        let v = &mut state.second.layers[k];
        adam_update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight, state.step, &state.config);
        adam_update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, state.step, &state.config);
    }
    Ok(())
}

/// Adam over a single scalar, used for the learned entropy temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    config: AdamConfig,
    m: f64,
    v: f64,
    step: u64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: 0.0, v: 0.0, step: 0 }
    }

    pub fn update(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::numeric("non-finite scalar gradient"));
        }
        self.step += 1;
        let mut p = [*param];
        let (mut m, mut v) = ([self.m], [self.v]);
        adam_update(&mut p, &[grad], &mut m, &mut v, self.step, &self.config);
        *param = p[0];
        self.m = m[0];
        self.v = v[0];
        Ok(())
    }
}
