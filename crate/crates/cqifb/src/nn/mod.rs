//! Dense-network training engine: layers, reverse-mode gradients, Adam, the
//! asymmetric reconstruction loss, and the binary model format.

mod adam;
mod gradcheck;
mod io;
mod loss;
mod math;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use loss::loss_cqinet;
pub use math::{axpy, dense_backward_input, dense_backward_params, dense_forward, dot, Matrix};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch-normalization running-average momentum.
pub const BN_MOMENTUM: f32 = 0.9;
/// Batch-normalization variance floor.
pub const BN_EPS: f32 = 1e-5;
/// LeakyReLU negative-side slope.
pub const LEAKY_SLOPE: f32 = 0.01;

/// Forward-pass mode: training uses batch statistics and dropout, evaluation
/// uses running statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layer kinds understood by the engine and the model file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    BatchNorm,
    LeakyRelu,
    Sigmoid,
    Dropout,
    Quantize,
}

/// Shape-and-parameter descriptor of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Kind-specific scalar: dropout rate or LeakyReLU slope; otherwise 0.
    pub param: f64,
    /// Quantization bit width; 0 for other kinds.
    pub bits: u32,
}

/// One network layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        /// Input-major weights: `w.row(i)` is the fan-out of input `i`.
        w: Matrix,
        b: Vec<f32>,
    },
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
    LeakyRelu {
        slope: f32,
    },
    Sigmoid,
    Dropout {
        rate: f32,
    },
    Quantize {
        bits: u32,
    },
}

impl Layer {
    /// Fresh batch-norm layer over `dim` features.
    pub fn batch_norm(dim: usize) -> Layer {
        Layer::BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    /// Dense layer with uniform fan-in initialization.
    pub fn dense_init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Layer {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut w = Matrix::zeros(in_dim, out_dim);
        for v in w.data_mut() {
            *v = (rng.gen::<f64>() * 2.0 * bound - bound) as f32;
        }
        let b = (0..out_dim)
            .map(|_| (rng.gen::<f64>() * 2.0 * bound - bound) as f32)
            .collect();
        Layer::Dense { w, b }
    }

    pub fn spec(&self, width_in: usize) -> LayerSpec {
        match self {
            Layer::Dense { w, .. } => LayerSpec {
                kind: LayerKind::Dense,
                in_dim: w.rows(),
                out_dim: w.cols(),
                param: 0.0,
                bits: 0,
            },
            Layer::BatchNorm { gamma, .. } => LayerSpec {
                kind: LayerKind::BatchNorm,
                in_dim: gamma.len(),
                out_dim: gamma.len(),
                param: 0.0,
                bits: 0,
            },
            Layer::LeakyRelu { slope } => LayerSpec {
                kind: LayerKind::LeakyRelu,
                in_dim: width_in,
                out_dim: width_in,
                param: *slope as f64,
                bits: 0,
            },
            Layer::Sigmoid => LayerSpec {
                kind: LayerKind::Sigmoid,
                in_dim: width_in,
                out_dim: width_in,
                param: 0.0,
                bits: 0,
            },
            Layer::Dropout { rate } => LayerSpec {
                kind: LayerKind::Dropout,
                in_dim: width_in,
                out_dim: width_in,
                param: *rate as f64,
                bits: 0,
            },
            Layer::Quantize { bits } => LayerSpec {
                kind: LayerKind::Quantize,
                in_dim: width_in,
                out_dim: width_in,
                param: 0.0,
                bits: *bits,
            },
        }
    }
}

/// Uniform quantizer to `2^bits` mid-rise levels on [0, 1].
#[inline]
pub fn quantize_value(x: f32, bits: u32) -> f32 {
    let levels = (1u32 << bits) as f32;
    let m = (x * levels - 0.5).round().clamp(0.0, levels - 1.0);
    (m + 0.5) / levels
}

/// Ordered layer stack with an optional additive shortcut.
///
/// The shortcut saves the output of layer `from` and adds it to the input of
/// layer `to` (both 0-based layer indices, `from < to`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    layers: Vec<Layer>,
    shortcut: Option<(usize, usize)>,
    in_dim: usize,
    out_dim: usize,
}

impl NetworkModel {
    pub fn new(layers: Vec<Layer>, shortcut: Option<(usize, usize)>, in_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut width = in_dim;
        let mut widths = Vec::with_capacity(layers.len() + 1);
        widths.push(width);
        for (i, layer) in layers.iter().enumerate() {
            let spec = layer.spec(width);
            if spec.in_dim != width {
                return Err(Error::invalid(format!(
                    "layer {i} expects width {} but receives {width}",
                    spec.in_dim
                )));
            }
            match layer {
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::invalid("dropout rate must be in [0, 1)"));
                    }
                }
                Layer::Quantize { bits } => {
                    if *bits == 0 || *bits > 16 {
                        return Err(Error::invalid("quantize bits must be in 1..=16"));
                    }
                }
                Layer::BatchNorm { running_var, .. } => {
                    if running_var.iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::invalid("running variance must be positive"));
                    }
                }
                _ => {}
            }
            width = spec.out_dim;
            widths.push(width);
        }
        if let Some((from, to)) = shortcut {
            if from >= to || to >= layers.len() {
                return Err(Error::invalid("shortcut must point forward within the network"));
            }
            // Output width of `from` is widths[from + 1]; input of `to` is widths[to].
            if widths[from + 1] != widths[to] {
                return Err(Error::invalid(format!(
                    "shortcut width mismatch: {} vs {}",
                    widths[from + 1],
                    widths[to]
                )));
            }
        }
        Ok(NetworkModel {
            layers,
            shortcut,
            in_dim,
            out_dim: width,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn shortcut(&self) -> Option<(usize, usize)> {
        self.shortcut
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut width = self.in_dim;
        self.layers
            .iter()
            .map(|l| {
                let s = l.spec(width);
                width = s.out_dim;
                s
            })
            .collect()
    }

    /// Total learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { w, b } => w.rows() * w.cols() + b.len(),
                Layer::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                _ => 0,
            })
            .sum()
    }

    /// Visits every learnable parameter tensor in declaration order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut [f32])) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    f(w.data_mut());
                    f(b);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    f(gamma);
                    f(beta);
                }
                _ => {}
            }
        }
    }

    pub fn param_tensor_lens(&self) -> Vec<usize> {
        let mut lens = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    lens.push(w.rows() * w.cols());
                    lens.push(b.len());
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    lens.push(gamma.len());
                    lens.push(beta.len());
                }
                _ => {}
            }
        }
        lens
    }

    /// Training-mode forward pass. Updates batch-norm running statistics and
    /// consumes dropout randomness from `rng`.
    pub fn forward_train(&mut self, batch: &Matrix, rng: &mut ChaCha8Rng) -> ForwardCache {
        assert_eq!(batch.cols(), self.in_dim, "batch width mismatch");
        let shortcut = self.shortcut;
        // acts[i] is the input of layer i (after any shortcut add); the last
        // entry is the network output.
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        let mut aux = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some((from, to)) = shortcut {
                if to == i {
                    // acts[from + 1] is the saved source output.
                    let (head, tail) = acts.split_at_mut(i);
                    let x = &mut tail[0];
                    if from + 1 == i {
                        for xv in x.data_mut() {
                            *xv += *xv;
                        }
                    } else {
                        for (xv, sv) in x.data_mut().iter_mut().zip(head[from + 1].data()) {
                            *xv += sv;
                        }
                    }
                }
            }
            let (out, a, stats) = layer_forward(layer, &acts[i], Mode::Train, Some(rng));
            if let (Layer::BatchNorm { running_mean, running_var, .. }, Some((mean, var))) = (&mut *layer, stats) {
                for f in 0..mean.len() {
                    running_mean[f] = BN_MOMENTUM * running_mean[f] + (1.0 - BN_MOMENTUM) * mean[f];
                    running_var[f] = BN_MOMENTUM * running_var[f] + (1.0 - BN_MOMENTUM) * var[f];
                }
            }
            aux.push(a);
            acts.push(out);
        }
        ForwardCache { acts, aux }
    }

    /// Evaluation-mode forward pass: deterministic, no side effects.
    pub fn forward_eval(&self, batch: &Matrix) -> Matrix {
        assert_eq!(batch.cols(), self.in_dim, "batch width mismatch");
        let mut x = batch.clone();
        let mut saved: Option<Matrix> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((_, to)) = self.shortcut {
                if to == i {
                    let s = saved.as_ref().expect("shortcut source precedes target");
                    for (xv, sv) in x.data_mut().iter_mut().zip(s.data()) {
                        *xv += sv;
                    }
                }
            }
            let (out, _, _) = layer_forward(layer, &x, Mode::Eval, None);
            x = out;
            if let Some((from, _)) = self.shortcut {
                if from == i {
                    saved = Some(x.clone());
                }
            }
        }
        x
    }

    /// Replaces batch-norm running statistics with population statistics
    /// gathered under the current weights (dropout disabled).
    ///
    /// Batch statistics drift behind the weights during training; for layers
    /// whose activations have tiny variance the `1/sqrt(var + eps)` factor
    /// turns that lag into large evaluation error, so deployed models use
    /// exact population moments instead.
    pub fn recalibrate_batchnorm(&mut self, batches: &[Matrix]) {
        if batches.is_empty() {
            return;
        }
        // Per BN layer: count, per-feature sum, per-feature sum of squares.
        let mut stats: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = vec![None; self.layers.len()];
        for batch in batches {
            let mut x = batch.clone();
            let mut saved: Option<Matrix> = None;
            for (i, layer) in self.layers.iter().enumerate() {
                if let Some((_, to)) = self.shortcut {
                    if to == i {
                        let s = saved.as_ref().expect("shortcut source precedes target");
                        for (xv, sv) in x.data_mut().iter_mut().zip(s.data()) {
                            *xv += sv;
                        }
                    }
                }
                if let Layer::BatchNorm { gamma, .. } = layer {
                    let dim = gamma.len();
                    let entry = stats[i].get_or_insert_with(|| (0.0, vec![0.0; dim], vec![0.0; dim]));
                    entry.0 += x.rows() as f64;
                    for r in 0..x.rows() {
                        for (f, &v) in x.row(r).iter().enumerate() {
                            entry.1[f] += v as f64;
                            entry.2[f] += v as f64 * v as f64;
                        }
                    }
                }
                // BN itself still applies per-batch statistics here, matching
                // the distribution the downstream layers saw in training.
                let (out, _, _) = layer_forward(
                    layer,
                    &x,
                    if matches!(layer, Layer::Dropout { .. }) { Mode::Eval } else { Mode::Train },
                    None,
                );
                x = out;
                if let Some((from, _)) = self.shortcut {
                    if from == i {
                        saved = Some(x.clone());
                    }
                }
            }
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let (Layer::BatchNorm { running_mean, running_var, .. }, Some((n, sum, sq))) =
                (layer, &stats[i])
            {
                for f in 0..running_mean.len() {
                    let mean = sum[f] / n;
                    let var = (sq[f] / n - mean * mean).max(0.0);
                    running_mean[f] = mean as f32;
                    running_var[f] = var as f32;
                }
            }
        }
    }

    /// Reverse-mode gradients for a cached training forward pass.
    ///
    /// Returns per-layer parameter gradients and the gradient w.r.t. the
    /// batch input. The quantize layer passes gradients through unchanged.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> (Gradients, Matrix) {
        assert_eq!(cache.acts.len(), self.layers.len() + 1, "cache does not match model");
        let mut grads: Vec<LayerGrads> = vec![LayerGrads::None; self.layers.len()];
        let mut g = grad_out.clone();
        let mut shortcut_grad: Option<Matrix> = None;
        for i in (0..self.layers.len()).rev() {
            // Entering layer i: g is the gradient at its output. If the
            // shortcut branch re-joins here, fold that gradient in first.
            if let Some((from, _)) = self.shortcut {
                if from == i {
                    if let Some(sg) = shortcut_grad.take() {
                        for (gv, sv) in g.data_mut().iter_mut().zip(sg.data()) {
                            *gv += sv;
                        }
                    }
                }
            }
            let (lg, gi) = layer_backward(&self.layers[i], &cache.acts[i], &cache.aux[i], &g);
            grads[i] = lg;
            g = gi;
            if let Some((_, to)) = self.shortcut {
                if to == i {
                    // The add at this input sends the same gradient up the
                    // saved branch.
                    shortcut_grad = Some(g.clone());
                }
            }
        }
        (Gradients { per_layer: grads }, g)
    }
}

/// Saved activations from a training-mode forward pass.
pub struct ForwardCache {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Matrix>,
    aux: Vec<LayerAux>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds at least the input")
    }
}

/// Layer-specific values the backward pass needs.
enum LayerAux {
    None,
    BatchNorm { x_hat: Matrix, inv_std: Vec<f32> },
    Sigmoid { y: Matrix },
    Dropout { mask: Matrix },
}

/// Parameter gradients aligned with the model's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub per_layer: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub enum LayerGrads {
    None,
    Dense { dw: Matrix, db: Vec<f32> },
    BatchNorm { dgamma: Vec<f32>, dbeta: Vec<f32> },
}

type BnStats = Option<(Vec<f32>, Vec<f32>)>;

fn layer_forward(layer: &Layer, x: &Matrix, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> (Matrix, LayerAux, BnStats) {
    match layer {
        Layer::Dense { w, b } => (dense_forward(x, w, b), LayerAux::None, None),
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } => match mode {
            Mode::Train => {
                let n = x.rows() as f32;
                let dim = gamma.len();
                let mut mean = vec![0.0f32; dim];
                for b in 0..x.rows() {
                    axpy(&mut mean, 1.0, x.row(b));
                }
                for m in mean.iter_mut() {
                    *m /= n;
                }
                let mut var = vec![0.0f32; dim];
                for b in 0..x.rows() {
                    let row = x.row(b);
                    for (f, v) in var.iter_mut().enumerate() {
                        let d = row[f] - mean[f];
                        *v += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= n;
                }
                let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut x_hat = Matrix::zeros(x.rows(), dim);
                let mut out = Matrix::zeros(x.rows(), dim);
                for b in 0..x.rows() {
                    let row = x.row(b);
                    let hrow = x_hat.row_mut(b);
                    for f in 0..dim {
                        hrow[f] = (row[f] - mean[f]) * inv_std[f];
                    }
                    let orow = out.row_mut(b);
                    for f in 0..dim {
                        orow[f] = gamma[f] * x_hat.row(b)[f] + beta[f];
                    }
                }
                (out, LayerAux::BatchNorm { x_hat, inv_std }, Some((mean, var)))
            }
            Mode::Eval => {
                let dim = gamma.len();
                let mut out = Matrix::zeros(x.rows(), dim);
                let scale: Vec<f32> = (0..dim)
                    .map(|f| gamma[f] / (running_var[f] + BN_EPS).sqrt())
                    .collect();
                for b in 0..x.rows() {
                    let row = x.row(b);
                    let orow = out.row_mut(b);
                    for f in 0..dim {
                        orow[f] = scale[f] * (row[f] - running_mean[f]) + beta[f];
                    }
                }
                (out, LayerAux::None, None)
            }
        },
        Layer::LeakyRelu { slope } => {
            let s = *slope;
            (x.map(|v| if v >= 0.0 { v } else { s * v }), LayerAux::None, None)
        }
        Layer::Sigmoid => {
            let y = x.map(|v| 1.0 / (1.0 + (-v).exp()));
            (y.clone(), LayerAux::Sigmoid { y }, None)
        }
        Layer::Dropout { rate } => match mode {
            Mode::Train => {
                let rate = *rate as f64;
                let rng = rng.expect("training-mode dropout needs an rng");
                let keep_scale = (1.0 / (1.0 - rate)) as f32;
                let mut mask = Matrix::zeros(x.rows(), x.cols());
                for v in mask.data_mut() {
                    *v = if rng.gen::<f64>() < rate { 0.0 } else { keep_scale };
                }
                let mut out = x.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                (out, LayerAux::Dropout { mask }, None)
            }
            Mode::Eval => (x.clone(), LayerAux::None, None),
        },
        Layer::Quantize { bits } => {
            let bits = *bits;
            (x.map(|v| quantize_value(v, bits)), LayerAux::None, None)
        }
    }
}

fn layer_backward(layer: &Layer, input: &Matrix, aux: &LayerAux, dy: &Matrix) -> (LayerGrads, Matrix) {
    match (layer, aux) {
        (Layer::Dense { w, .. }, _) => {
            let dx = dense_backward_input(dy, w);
            let (dw, db) = dense_backward_params(input, dy);
            (LayerGrads::Dense { dw, db }, dx)
        }
        (Layer::BatchNorm { gamma, .. }, LayerAux::BatchNorm { x_hat, inv_std }) => {
            let n = dy.rows() as f32;
            let dim = gamma.len();
            let mut dgamma = vec![0.0f32; dim];
            let mut dbeta = vec![0.0f32; dim];
            for b in 0..dy.rows() {
                let dyr = dy.row(b);
                let hr = x_hat.row(b);
                for f in 0..dim {
                    dgamma[f] += dyr[f] * hr[f];
                    dbeta[f] += dyr[f];
                }
            }
            let mut dx = Matrix::zeros(dy.rows(), dim);
            for b in 0..dy.rows() {
                let dyr = dy.row(b);
                let hr = x_hat.row(b);
                let dxr = dx.row_mut(b);
                for f in 0..dim {
                    dxr[f] = gamma[f] * inv_std[f] / n * (n * dyr[f] - dbeta[f] - hr[f] * dgamma[f]);
                }
            }
            (LayerGrads::BatchNorm { dgamma, dbeta }, dx)
        }
        (Layer::LeakyRelu { slope }, _) => {
            let s = *slope;
            let mut dx = dy.clone();
            for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x < 0.0 {
                    *g *= s;
                }
            }
            (LayerGrads::None, dx)
        }
        (Layer::Sigmoid, LayerAux::Sigmoid { y }) => {
            let mut dx = dy.clone();
            for (g, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                *g *= yv * (1.0 - yv);
            }
            (LayerGrads::None, dx)
        }
        (Layer::Dropout { .. }, LayerAux::Dropout { mask }) => {
            let mut dx = dy.clone();
            for (g, &m) in dx.data_mut().iter_mut().zip(mask.data()) {
                *g *= m;
            }
            (LayerGrads::None, dx)
        }
        // Straight-through estimator: the quantizer is identity in the
        // backward pass.
        (Layer::Quantize { .. }, _) => (LayerGrads::None, dy.clone()),
        _ => unreachable!("cache does not match layer"),
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the overestimation penalty in the loss.
    pub alpha: f64,
    pub dropout_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub plateau_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 1000,
            batch_size: 100,
            alpha: 0.05,
            dropout_rate: 0.03,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            plateau_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must be in [0, 1)"));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::invalid("Adam parameters out of range"));
        }
        Ok(())
    }
}
