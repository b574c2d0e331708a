//! Minimal deterministic feed-forward engine: dense layers, masked SGD, and
//! per-layer post-activation traces.
//!
//! Conventions:
//! - weights are `out_dim x in_dim`, inputs are `batch x in_dim`,
//!   pre-activations are `x @ W^T`;
//! - the softmax of an output layer is folded into [`loss_ce`], so `forward`
//!   returns raw logits and the trace stores softmax probabilities for that
//!   layer;
//! - biases are off by default and are never masked, pruned, or counted in
//!   connectivity.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Marks the classifier layer. Forward exposes raw logits; the trace
    /// stores row-wise softmax; backward expects the softmax Jacobian to be
    /// already folded into the logit gradient (as [`loss_ce`] does).
    SoftmaxOutput,
}

impl Activation {
    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Relu => {
                for v in row.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for v in row.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::Identity => {}
            Activation::SoftmaxOutput => softmax_row(row),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_post(self, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
            // Handled structurally in backward; never evaluated.
            Activation::SoftmaxOutput => 1.0,
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out_dim x in_dim`.
    pub weights: Tensor,
    /// Present only when the network was built with biases enabled.
    pub bias: Option<Vec<f64>>,
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    bias_enabled: bool,
}

impl Network {
    /// Builds a network with seeded uniform init on `(-a, a)`,
    /// `a = sqrt(6 / (fan_in + fan_out))`. Biases (when enabled) start at zero.
    pub fn init(specs: &[LayerSpec], seed: u64, bias_enabled: bool) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let data: Vec<f64> = (0..spec.in_dim * spec.out_dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer {
                    spec: *spec,
                    weights: Tensor::from_parts(vec![spec.out_dim, spec.in_dim], data),
                    bias: bias_enabled.then(|| vec![0.0; spec.out_dim]),
                }
            })
            .collect();
        Ok(Self {
            layers,
            bias_enabled,
        })
    }

    /// Builds a network from explicit weight matrices (no biases).
    pub fn from_weights(weights: Vec<(Tensor, Activation)>) -> Result<Self> {
        let specs: Vec<LayerSpec> = weights
            .iter()
            .map(|(w, act)| {
                if w.shape().len() != 2 {
                    return Err(Error::Dimension("layer weights must be 2-D".into()));
                }
                Ok(LayerSpec {
                    in_dim: w.cols(),
                    out_dim: w.rows(),
                    activation: *act,
                })
            })
            .collect::<Result<_>>()?;
        validate_specs(&specs)?;
        let layers = specs
            .iter()
            .zip(weights)
            .map(|(spec, (w, _))| Layer {
                spec: *spec,
                weights: w,
                bias: None,
            })
            .collect();
        Ok(Self {
            layers,
            bias_enabled: false,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l]
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().spec.out_dim
    }

    /// Per-layer `(out_dim, in_dim)` pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.spec.out_dim, l.spec.in_dim))
            .collect()
    }

    /// All parameters as one flat vector: weights layer by layer (row-major),
    /// then biases layer by layer when enabled.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
        }
        if self.bias_enabled {
            for layer in &self.layers {
                out.extend_from_slice(layer.bias.as_ref().unwrap());
            }
        }
        out
    }

    /// Writes a flat parameter vector (layout of [`Network::flatten`]) back
    /// into the network.
    pub fn unflatten_from(&mut self, params: &[f64]) -> Result<()> {
        let want = self.num_params();
        if params.len() != want {
            return Err(Error::Dimension(format!(
                "expected {want} parameters, got {}",
                params.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let n = layer.weights.len();
            layer.weights.data_mut().copy_from_slice(&params[off..off + n]);
            off += n;
        }
        if self.bias_enabled {
            for layer in &mut self.layers {
                let b = layer.bias.as_mut().unwrap();
                let n = b.len();
                b.copy_from_slice(&params[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let w: usize = self.layers.iter().map(|l| l.weights.len()).sum();
        let b: usize = if self.bias_enabled {
            self.layers.iter().map(|l| l.spec.out_dim).sum()
        } else {
            0
        };
        w + b
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if spec.activation == Activation::SoftmaxOutput && i + 1 != specs.len() {
            return Err(Error::Config(format!(
                "softmax_output is only allowed on the final layer, found on layer {i}"
            )));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Dimension(format!(
                "layer {i} out_dim {} != layer {} in_dim {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Everything backward needs from a forward pass: the input batch and each
/// layer's post-activation output, plus raw logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    /// `post[l]` is `batch x out_dim(l)`.
    pub post: Vec<Tensor>,
    pub logits: Tensor,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.post.len()
    }
}

/// Per-layer gradients, shapes mirroring the network exactly.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Tensor>,
    pub biases: Option<Vec<Vec<f64>>>,
}

/// Runs the batch through the network.
///
/// `logits` are the final layer's pre-softmax values; `trace.post` holds the
/// post-activation output of every layer.
pub fn forward(net: &Network, batch: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    if batch.shape().len() != 2 {
        return Err(Error::Dimension("batch must be 2-D".into()));
    }
    if batch.cols() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            net.input_dim()
        )));
    }
    let n = batch.rows();
    let mut current = batch.clone();
    let mut post = Vec::with_capacity(net.num_layers());
    let mut logits = None;
    for (l, layer) in net.layers().iter().enumerate() {
        let out_dim = layer.spec.out_dim;
        let in_dim = layer.spec.in_dim;
        let w = layer.weights.data();
        let mut pre = vec![0.0; n * out_dim];
        for r in 0..n {
            let x = current.row(r);
            let dst = &mut pre[r * out_dim..(r + 1) * out_dim];
            for (o, slot) in dst.iter_mut().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for (xi, wi) in x.iter().zip(wrow) {
                    acc += xi * wi;
                }
                if let Some(b) = &layer.bias {
                    acc += b[o];
                }
                *slot = acc;
            }
        }
        if l + 1 == net.num_layers() {
            logits = Some(Tensor::from_parts(vec![n, out_dim], pre.clone()));
        }
        let mut act = pre;
        for r in 0..n {
            layer
                .spec
                .activation
                .apply_row(&mut act[r * out_dim..(r + 1) * out_dim]);
        }
        current = Tensor::from_parts(vec![n, out_dim], act);
        post.push(current.clone());
    }
    let logits = logits.unwrap();
    Ok((
        logits.clone(),
        ForwardTrace {
            input: batch.clone(),
            post,
            logits,
        },
    ))
}

/// Mean cross-entropy over the batch with the exact analytic logit gradient
/// `(softmax - onehot) / batch`.
pub fn loss_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for {} logit rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * c];
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - row[labels[r]];
        let g = &mut grad[r * c..(r + 1) * c];
        for (j, slot) in g.iter_mut().enumerate() {
            *slot = (row[j] - lse).exp() * inv_n;
        }
        g[labels[r]] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::from_parts(vec![n, c], grad)))
}

/// Exact reverse-mode gradients for all weights (and biases when enabled).
///
/// `logit_grad` is the gradient with respect to `forward`'s logits. For a
/// `SoftmaxOutput` final layer that gradient already includes the softmax
/// Jacobian (see [`loss_ce`]); for any other final activation the chain rule
/// is applied here.
pub fn backward(net: &Network, trace: &ForwardTrace, logit_grad: &Tensor) -> Result<GradientSet> {
    let num_layers = net.num_layers();
    if trace.num_layers() != num_layers {
        return Err(Error::State(format!(
            "trace has {} layers, network has {num_layers}",
            trace.num_layers()
        )));
    }
    for (l, layer) in net.layers().iter().enumerate() {
        if trace.post[l].cols() != layer.spec.out_dim {
            return Err(Error::State(format!(
                "trace layer {l} width {} != layer out_dim {}",
                trace.post[l].cols(),
                layer.spec.out_dim
            )));
        }
    }
    let n = trace.input.rows();
    if logit_grad.shape() != [n, net.output_dim()] {
        return Err(Error::Dimension(format!(
            "logit_grad shape {:?}, expected [{n}, {}]",
            logit_grad.shape(),
            net.output_dim()
        )));
    }

    let mut weight_grads = vec![Tensor::zeros(vec![1]); num_layers];
    let mut bias_grads = net
        .bias_enabled()
        .then(|| vec![Vec::<f64>::new(); num_layers]);

    // delta = dL/d(pre-activation) for the layer being processed.
    let mut delta: Vec<f64> = Vec::new();
    for l in (0..num_layers).rev() {
        let layer = net.layer(l);
        let out_dim = layer.spec.out_dim;
        let post = &trace.post[l];
        if l + 1 == num_layers {
            delta = logit_grad.data().to_vec();
            if layer.spec.activation != Activation::SoftmaxOutput {
                for r in 0..n {
                    for o in 0..out_dim {
                        delta[r * out_dim + o] *=
                            layer.spec.activation.derivative_from_post(post.at2(r, o));
                    }
                }
            }
        }

        let input: &Tensor = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let in_dim = layer.spec.in_dim;
        let mut wg = vec![0.0; out_dim * in_dim];
        for r in 0..n {
            let x = input.row(r);
            let d = &delta[r * out_dim..(r + 1) * out_dim];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let row = &mut wg[o * in_dim..(o + 1) * in_dim];
                for (slot, &xv) in row.iter_mut().zip(x) {
                    *slot += dv * xv;
                }
            }
        }
        weight_grads[l] = Tensor::from_parts(vec![out_dim, in_dim], wg);
        if let Some(bg) = &mut bias_grads {
            let mut b = vec![0.0; out_dim];
            for r in 0..n {
                for (o, slot) in b.iter_mut().enumerate() {
                    *slot += delta[r * out_dim + o];
                }
            }
            bg[l] = b;
        }

        if l > 0 {
            // delta_{l-1} = (delta_l @ W_l) * act'(post_{l-1})
            let prev = net.layer(l - 1);
            let prev_out = prev.spec.out_dim;
            let w = layer.weights.data();
            let prev_post = &trace.post[l - 1];
            let mut next = vec![0.0; n * prev_out];
            for r in 0..n {
                let d = &delta[r * out_dim..(r + 1) * out_dim];
                let dst = &mut next[r * prev_out..(r + 1) * prev_out];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * in_dim..(o + 1) * in_dim];
                    for (slot, &wv) in dst.iter_mut().zip(wrow) {
                        *slot += dv * wv;
                    }
                }
                for (i, slot) in dst.iter_mut().enumerate() {
                    *slot *= prev
                        .spec
                        .activation
                        .derivative_from_post(prev_post.at2(r, i));
                }
            }
            delta = next;
        }
    }
    Ok(GradientSet {
        weights: weight_grads,
        biases: bias_grads,
    })
}

/// One SGD step on the trainable coordinates only.
///
/// Frozen entries stay bit-identical; entries pruned in the current task stay
/// exactly `0.0`. Biases, when enabled, are always trainable.
pub fn sgd_step(net: &mut Network, grads: &GradientSet, lr: f64, masks: &MaskSet) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if grads.weights.len() != net.num_layers() {
        return Err(Error::Dimension(format!(
            "{} gradient layers for {} network layers",
            grads.weights.len(),
            net.num_layers()
        )));
    }
    masks.check_compatible(&net.layer_shapes())?;
    for l in 0..net.num_layers() {
        let g = &grads.weights[l];
        let layer = net.layer_mut(l);
        if g.shape() != layer.weights.shape() {
            return Err(Error::Dimension(format!(
                "gradient shape {:?} != weight shape {:?} in layer {l}",
                g.shape(),
                layer.weights.shape()
            )));
        }
        let w = layer.weights.data_mut();
        let gd = g.data();
        for (idx, slot) in w.iter_mut().enumerate() {
            if masks.is_trainable(l, idx) {
                *slot -= lr * gd[idx];
            }
        }
        if let (Some(b), Some(bg)) = (&mut layer.bias, &grads.biases) {
            for (slot, gv) in b.iter_mut().zip(&bg[l]) {
                *slot -= lr * gv;
            }
        }
    }
    Ok(())
}
