//! Dense regression network: initialization, forward pass, reverse-mode
//! gradients, Adam, mini-batch training and checkpoints.
//!
//! Hidden layers apply the configured activation (ReLU by default); the
//! output layer is linear because deficit targets are signed.

mod adam;
mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{N_FEATURES, N_TARGETS};
use crate::seed::{self, Stream};

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{evaluate_loss, train, EpochStats, History, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation; ReLU's at 0 is 0.
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
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Number of leading dense layers forming the shared root.
    pub split_index: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input: N_FEATURES,
            hidden: vec![64, 32, 16, 8, 4],
            output: N_TARGETS,
            activation: Activation::Relu,
            split_index: 3,
        }
    }
}

impl Architecture {
    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(inputs, outputs)` for every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        if self.hidden.is_empty() {
            return Err(Error::config("model.hidden", "at least one hidden layer is required"));
        }
        if !(1..self.layer_count()).contains(&self.split_index) {
            return Err(Error::config(
                "federated.split_index",
                format!("must lie in [1, {}]", self.layer_count() - 1),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.weights.len() == other.weights.len()
            && self.bias.len() == other.bias.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Parameters of the whole network; gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
            activation: arch.activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
            activation: self.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len() && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// Checks that the layers chain and match `arch`.
    pub fn check_architecture(&self, arch: &Architecture) -> Result<()> {
        let shapes = arch.layer_shapes();
        if self.activation != arch.activation || self.layers.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "model has {} layers ({:?}), architecture expects {} ({:?})",
                self.layers.len(),
                self.activation,
                shapes.len(),
                arch.activation
            )));
        }
        for (k, (l, &(i, o))) in self.layers.iter().zip(&shapes).enumerate() {
            if l.inputs != i || l.outputs != o || l.weights.len() != i * o || l.bias.len() != o {
                return Err(Error::Shape(format!(
                    "layer {k} is {}x{}, architecture expects {o}x{i}",
                    l.outputs, l.inputs
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_width()
            )));
        }
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut z);
            if k < last {
                a.clear();
                a.extend(z.iter().map(|&v| self.activation.apply(v)));
            } else {
                std::mem::swap(&mut a, &mut z);
            }
        }
        Ok(a)
    }
}

/// He-style uniform initialization: weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
/// (variance `2/fan_in`), biases zero.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = seed::rng(seed, Stream::Init, 0);
    let mut params = ModelParams::zeros(arch);
    for layer in &mut params.layers {
        let bound = (6.0 / layer.inputs as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Row-major inputs and targets of equal row count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: usize,
    pub outputs: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.inputs, "input width");
        assert_eq!(y.len(), self.outputs, "output width");
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.x.len().checked_div(self.inputs).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.inputs..(i + 1) * self.inputs]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.y[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut d = Dataset::new(self.inputs, self.outputs);
        for &i in idx {
            d.push(self.input(i), self.target(i));
        }
        d
    }
}

/// Loss over the rows `idx` (mean over rows and outputs) and its gradient
/// with respect to every parameter. The subgradient of `|r|` at `r = 0` is 0.
pub fn loss_and_grads(
    params: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    loss: LossKind,
) -> Result<(f64, ModelParams)> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if data.inputs != params.input_width() || data.outputs != params.output_width() {
        return Err(Error::Shape(format!(
            "data is {}->{}, model is {}->{}",
            data.inputs,
            data.outputs,
            params.input_width(),
            params.output_width()
        )));
    }
    let n_layers = params.layers.len();
    let scale = 1.0 / (idx.len() * data.outputs) as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;

    // acts[k] is the input to layer k; pre[k] its pre-activation output.
    let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut pre: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut delta = Vec::new();
    let mut delta_prev = Vec::new();

    for &i in idx {
        let x = data.input(i);
        let y = data.target(i);
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training batch"));
        }
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for k in 0..n_layers {
            let mut z = std::mem::take(&mut pre[k]);
            params.layers[k].affine(&acts[k], &mut z);
            if k + 1 < n_layers {
                let next = &mut acts[k + 1];
                next.clear();
                next.extend(z.iter().map(|&v| params.activation.apply(v)));
            }
            pre[k] = z;
        }
        let out = &pre[n_layers - 1];
        delta.clear();
        for (yh, yt) in out.iter().zip(y) {
            let r = yh - yt;
            match loss {
                LossKind::Mae => {
                    total += r.abs();
                    delta.push(scale * sign(r));
                }
                LossKind::Mse => {
                    total += r * r;
                    delta.push(scale * 2.0 * r);
                }
            }
        }
        for k in (0..n_layers).rev() {
            let layer = &params.layers[k];
            let g = &mut grads.layers[k];
            let a = &acts[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, ai) in row.iter_mut().zip(a) {
                    *gw += d * ai;
                }
            }
            if k > 0 {
                delta_prev.clear();
                delta_prev.resize(layer.inputs, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (dp, w) in delta_prev.iter_mut().zip(row) {
                        *dp += w * d;
                    }
                }
                for (dp, &z) in delta_prev.iter_mut().zip(&pre[k - 1]) {
                    *dp *= params.activation.derivative(z);
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }
    Ok((total * scale, grads))
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch(hidden: Vec<usize>) -> Architecture {
        Architecture {
            input: 7,
            hidden,
            output: 2,
            activation: Activation::Relu,
            split_index: 1,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let arch = Architecture::default();
        let a = init_model(&arch, 5).unwrap();
        let b = init_model(&arch, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(&arch, 6).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        a.check_architecture(&arch).unwrap();
        assert_eq!(a.num_params(), 3302);
    }

    #[test]
    fn init_variance_tracks_fan_in() {
        let arch = Architecture::default();
        let models: Vec<_> = (0..5).map(|s| init_model(&arch, s).unwrap()).collect();
        for k in 0..arch.layer_count() {
            let ws: Vec<f64> = models
                .iter()
                .flat_map(|m| m.layers[k].weights.iter().copied())
                .collect();
            let n = ws.len() as f64;
            let mean = ws.iter().sum::<f64>() / n;
            let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
            let target = 2.0 / models[0].layers[k].inputs as f64;
            assert!(
                (var / target - 1.0).abs() <= 0.2,
                "layer {k}: var {var}, expected {target}"
            );
        }
    }

    #[test]
    fn invalid_architecture_rejected() {
        let mut arch = Architecture {
            split_index: 6,
            ..Architecture::default()
        };
        assert!(init_model(&arch, 0).is_err());
        arch.split_index = 0;
        assert!(init_model(&arch, 0).is_err());
        arch.split_index = 3;
        arch.hidden[2] = 0;
        assert!(init_model(&arch, 0).is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let p = ModelParams::zeros(&Architecture::default());
        assert_eq!(
            p.forward(&[3.0, -1.0, 2.0, 0.5, 1.0, 2.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn single_linear_layer_selects_inputs() {
        let mut layer = Layer::zeros(7, 2);
        layer.weights[1] = 1.0; // output 0 <- input 1
        layer.weights[7] = 1.0; // output 1 <- input 0
        let p = ModelParams {
            layers: vec![layer],
            activation: Activation::Relu,
        };
        let x = [-4.5, 2.25, 9.0, 1.0, 0.0, -3.0, 7.0];
        assert_eq!(p.forward(&x).unwrap(), vec![2.25, -4.5]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = ModelParams::zeros(&Architecture::default());
        assert!(matches!(p.forward(&[1.0; 6]), Err(Error::Shape(_))));
    }

    #[test]
    fn mae_loss_examples() {
        // Linear 1->2 model: y_hat = (2, 4) for every input.
        let mut layer = Layer::zeros(1, 2);
        layer.bias = vec![2.0, 4.0];
        let p = ModelParams {
            layers: vec![layer],
            activation: Activation::Relu,
        };
        let mut d = Dataset::new(1, 2);
        d.push(&[0.3], &[1.0, 2.0]);
        let (loss, _) = loss_and_grads(&p, &d, &[0], LossKind::Mae).unwrap();
        assert_eq!(loss, 1.5);

        let mut exact = Dataset::new(1, 2);
        exact.push(&[0.3], &[2.0, 4.0]);
        let (loss, g) = loss_and_grads(&p, &exact, &[0], LossKind::Mae).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_rejects_empty_and_non_finite() {
        let p = init_model(&small_arch(vec![4]), 1).unwrap();
        let mut d = Dataset::new(7, 2);
        d.push(&[f64::NAN; 7], &[0.0, 0.0]);
        assert!(loss_and_grads(&p, &d, &[], LossKind::Mae).is_err());
        assert!(matches!(
            loss_and_grads(&p, &d, &[0], LossKind::Mae),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn forward_is_finite_on_random_inputs() {
        use proptest::prelude::*;
        let p = init_model(&Architecture::default(), 11).unwrap();
        proptest!(|(x in prop::array::uniform7(-1e6f64..1e6))| {
            let y = p.forward(&x).unwrap();
            prop_assert!(y.iter().all(|v| v.is_finite()));
        });
    }
}
