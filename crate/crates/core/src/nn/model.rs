use super::tensor::{axpy, dot, Tensor};
use super::ModelError;
use crate::label::Side;
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use rand::Rng;

/// Kernel size of every convolution, padded by one pixel on each side.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution, rectifier, 2x2 max-pool. Input `[in, size, size]`.
    ConvBlock { in_channels: usize, out_channels: usize, size: usize },
    /// Fully connected, optionally rectified.
    Dense { inputs: usize, outputs: usize, relu: bool },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            Self::ConvBlock { in_channels, size, .. } => in_channels * size * size,
            Self::Dense { inputs, .. } => inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Self::ConvBlock { out_channels, size, .. } => out_channels * (size / 2) * (size / 2),
            Self::Dense { outputs, .. } => outputs,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Self::ConvBlock { in_channels, out_channels, .. } => vec![out_channels, in_channels, KERNEL, KERNEL],
            Self::Dense { inputs, outputs, .. } => vec![outputs, inputs],
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Self::ConvBlock { in_channels, out_channels, .. } => (in_channels * TAPS, out_channels * TAPS),
            Self::Dense { inputs, outputs, .. } => (inputs, outputs),
        }
    }
}

/// A parameterized layer: weight and bias tensors plus its fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(kind: LayerKind) -> Self {
        let outputs = match kind {
            LayerKind::ConvBlock { out_channels, .. } => out_channels,
            LayerKind::Dense { outputs, .. } => outputs,
        };
        Self {
            kind,
            weight: Tensor::zeros(&kind.weight_shape()),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Architecture description of a plain convolutional classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl ConvNetSpec {
    /// Three conv blocks (8, 16, 32 channels), one 64-unit hidden layer, 2-way head.
    pub fn reference(input_size: usize) -> Self {
        Self {
            input_size,
            in_channels: 3,
            conv_channels: vec![8, 16, 32],
            hidden: vec![64],
        }
    }

    pub fn layer_kinds(&self) -> Result<Vec<LayerKind>, ModelError> {
        let pool = 1usize << self.conv_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(pool) || self.in_channels == 0 {
            return Err(ModelError::UnsupportedInput(self.input_size));
        }
        let mut kinds = Vec::new();
        let (mut channels, mut size) = (self.in_channels, self.input_size);
        for &out in &self.conv_channels {
            kinds.push(LayerKind::ConvBlock {
                in_channels: channels,
                out_channels: out,
                size,
            });
            channels = out;
            size /= 2;
        }
        let mut width = channels * size * size;
        for &h in &self.hidden {
            kinds.push(LayerKind::Dense {
                inputs: width,
                outputs: h,
                relu: true,
            });
            width = h;
        }
        kinds.push(LayerKind::Dense {
            inputs: width,
            outputs: 2,
            relu: false,
        });
        Ok(kinds)
    }
}

/// Ordered layers ending in a 2-way softmax head (index 0 = left, 1 = right).
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel<T> {
    input_size: usize,
    in_channels: usize,
    layers: Vec<Layer<T>>,
}

/// Gradient of the loss with respect to one layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrad<T> {
    fn zeros(layer: &Layer<T>) -> Self {
        Self {
            weight: vec![T::zero(); layer.weight.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }

    fn add(&mut self, other: &Self) {
        axpy(T::one(), &other.weight, &mut self.weight);
        axpy(T::one(), &other.bias, &mut self.bias);
    }

    fn scale(&mut self, s: T) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }
}

pub type Gradients<T> = Vec<LayerGrad<T>>;

pub(crate) enum Cache<T> {
    Conv {
        /// Patch matrix, one row of `in * 9` taps per output pixel.
        patches: Vec<T>,
        pre: Vec<T>,
        argmax: Vec<u32>,
    },
    Dense {
        input: Vec<T>,
        pre: Vec<T>,
    },
}

fn softmax2<T: Scalar>(z: &[T]) -> [T; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// −log softmax(z)[y], computed without overflow.
fn cross_entropy2<T: Scalar>(z: &[T], y: usize) -> T {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[y]
}

impl<T: Scalar> LayeredModel<T> {
    /// Glorot-uniform weights, zero biases. Each weight tensor draws from its own seeded stream.
    pub fn from_spec(spec: &ConvNetSpec, seed: u64) -> Result<Self, ModelError> {
        let kinds = spec.layer_kinds()?;
        let layers = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let mut layer = Layer::zeros(kind);
                let (fan_in, fan_out) = kind.fans();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream_rng(seed, i as u64);
                for w in layer.weight.data_mut() {
                    *w = T::of(rng.gen_range(-limit..limit));
                }
                layer
            })
            .collect();
        Ok(Self {
            input_size: spec.input_size,
            in_channels: spec.in_channels,
            layers,
        })
    }

    /// Assembles a model from explicit layers after checking they chain.
    pub fn from_layers(input_size: usize, in_channels: usize, layers: Vec<Layer<T>>) -> Result<Self, ModelError> {
        if layers.len() < 2 {
            return Err(ModelError::Architecture("at least two layers are required".into()));
        }
        let mut expected = in_channels * input_size * input_size;
        for (i, layer) in layers.iter().enumerate() {
            if layer.kind.input_len() != expected {
                return Err(ModelError::Architecture(format!(
                    "layer {i} expects {} inputs, previous layer produces {expected}",
                    layer.kind.input_len()
                )));
            }
            if let LayerKind::ConvBlock { size, .. } = layer.kind {
                if size % 2 != 0 {
                    return Err(ModelError::Architecture(format!("layer {i} pools an odd size {size}")));
                }
            }
            if layer.weight.shape() != layer.kind.weight_shape().as_slice() || layer.bias.len() != layer.kind.output_len_channels() {
                return Err(ModelError::Architecture(format!("layer {i} parameter shapes do not match")));
            }
            expected = layer.kind.output_len();
        }
        match layers.last().map(|l| l.kind) {
            Some(LayerKind::Dense { outputs: 2, relu: false, .. }) => {}
            _ => return Err(ModelError::Architecture("last layer must be a 2-way linear head".into())),
        }
        Ok(Self {
            input_size,
            in_channels,
            layers,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn zero_parameters(&mut self) {
        for layer in &mut self.layers {
            layer.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
            layer.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayeredModel<U> {
        LayeredModel {
            input_size: self.input_size,
            in_channels: self.in_channels,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    kind: l.kind,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize, ModelError> {
        let expected = [self.in_channels, self.input_size, self.input_size];
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(ModelError::ShapeMismatch {
                expected: format!("[N, {}, {}, {}]", expected[0], expected[1], expected[2]),
                actual: format!("{shape:?}"),
            });
        }
        Ok(shape[0])
    }

    /// Class probabilities, one `[left, right]` row per sample.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let n = self.check_batch(batch)?;
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let logits = self.forward_from(0, batch.row(i), None)?;
            out.extend_from_slice(&softmax2(&logits));
        }
        Ok(Tensor::from_vec(&[n, 2], out).expect("2 columns"))
    }

    /// Runs layers `start..` on one flattened activation.
    pub(crate) fn forward_from(&self, start: usize, input: &[T], mut caches: Option<&mut Vec<Cache<T>>>) -> Result<Vec<T>, ModelError> {
        let mut x = input.to_vec();
        for (offset, layer) in self.layers[start..].iter().enumerate() {
            let (y, cache) = layer_forward(layer, &x, caches.is_some());
            if y.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NumericalFailure { layer: start + offset });
            }
            if let (Some(c), Some(cache)) = (caches.as_deref_mut(), cache) {
                c.push(cache);
            }
            x = y;
        }
        Ok(x)
    }

    /// Output of the first `end` layers, used to cache frozen prefixes.
    pub(crate) fn prefix(&self, end: usize, input: &[T]) -> Result<Vec<T>, ModelError> {
        let mut x = input.to_vec();
        for (i, layer) in self.layers[..end].iter().enumerate() {
            x = layer_forward(layer, &x, false).0;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NumericalFailure { layer: i });
            }
        }
        Ok(x)
    }

    /// Loss and gradients of layers `start..` for samples whose activations
    /// at layer `start` are given. Gradients are summed, not averaged.
    pub(crate) fn sample_grads(
        &self,
        start: usize,
        input: &[T],
        label: Side,
        grads: &mut [LayerGrad<T>],
    ) -> Result<(T, [T; 2]), ModelError> {
        let mut caches = Vec::with_capacity(self.layers.len() - start);
        let logits = self.forward_from(start, input, Some(&mut caches))?;
        let y = label.index();
        let loss = cross_entropy2(&logits, y);
        let probs = softmax2(&logits);
        let mut delta = vec![probs[0], probs[1]];
        delta[y] -= T::one();
        for l in (start..self.layers.len()).rev() {
            let need_input = l > start;
            delta = layer_backward(&self.layers[l], &caches[l - start], &delta, &mut grads[l - start], need_input);
        }
        Ok((loss, probs))
    }

    pub fn zero_grads(&self, start: usize) -> Gradients<T> {
        self.layers[start..].iter().map(LayerGrad::zeros).collect()
    }

    /// Mean cross-entropy over the batch and its gradient for every layer.
    pub fn loss_and_grads(&self, batch: &Tensor<T>, labels: &[Side]) -> Result<(T, Gradients<T>), ModelError> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{n} labels"),
                actual: format!("{} labels", labels.len()),
            });
        }
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let mut grads = self.zero_grads(0);
        let mut total = T::zero();
        for (i, label) in labels.iter().enumerate() {
            let (loss, _) = self.sample_grads(0, batch.row(i), *label, &mut grads)?;
            total += loss;
        }
        let inv = T::one() / T::of(n as f64);
        grads.iter_mut().for_each(|g| g.scale(inv));
        Ok((total * inv, grads))
    }

    pub(crate) fn accumulate(into: &mut [LayerGrad<T>], from: &[LayerGrad<T>]) {
        for (a, b) in into.iter_mut().zip(from) {
            a.add(b);
        }
    }
}

impl LayerKind {
    fn output_len_channels(&self) -> usize {
        match *self {
            Self::ConvBlock { out_channels, .. } => out_channels,
            Self::Dense { outputs, .. } => outputs,
        }
    }
}

/// Patch matrix for a padded 3x3 convolution: row `p` holds the `c * 9` taps
/// of output pixel `p`, ordered (channel, ky, kx).
fn im2row<T: Scalar>(input: &[T], channels: usize, size: usize) -> Vec<T> {
    let k = channels * TAPS;
    let mut rows = vec![T::zero(); size * size * k];
    for y in 0..size {
        for x in 0..size {
            let row = &mut rows[(y * size + x) * k..(y * size + x + 1) * k];
            for c in 0..channels {
                let plane = &input[c * size * size..(c + 1) * size * size];
                for ky in 0..KERNEL {
                    let sy = y + ky;
                    if sy == 0 || sy > size {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x + kx;
                        if sx == 0 || sx > size {
                            continue;
                        }
                        row[c * TAPS + ky * KERNEL + kx] = plane[(sy - 1) * size + (sx - 1)];
                    }
                }
            }
        }
    }
    rows
}

fn layer_forward<T: Scalar>(layer: &Layer<T>, x: &[T], keep: bool) -> (Vec<T>, Option<Cache<T>>) {
    match layer.kind {
        LayerKind::ConvBlock { in_channels, out_channels, size } => {
            let k = in_channels * TAPS;
            let pixels = size * size;
            let patches = im2row(x, in_channels, size);
            let w = layer.weight.data();
            let b = layer.bias.data();
            let mut pre = vec![T::zero(); out_channels * pixels];
            for o in 0..out_channels {
                let wo = &w[o * k..(o + 1) * k];
                let out = &mut pre[o * pixels..(o + 1) * pixels];
                for (p, v) in out.iter_mut().enumerate() {
                    *v = b[o] + dot(wo, &patches[p * k..(p + 1) * k]);
                }
            }
            let half = size / 2;
            let mut pooled = vec![T::zero(); out_channels * half * half];
            let mut argmax = vec![0u32; pooled.len()];
            for o in 0..out_channels {
                let plane = &pre[o * pixels..(o + 1) * pixels];
                for py in 0..half {
                    for px in 0..half {
                        let mut best = 2 * py * size + 2 * px;
                        for idx in [best + 1, best + size, best + size + 1] {
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                        let q = o * half * half + py * half + px;
                        pooled[q] = plane[best].max(T::zero());
                        argmax[q] = best as u32;
                    }
                }
            }
            let cache = keep.then_some(Cache::Conv { patches, pre, argmax });
            (pooled, cache)
        }
        LayerKind::Dense { inputs, outputs, relu } => {
            let w = layer.weight.data();
            let b = layer.bias.data();
            let pre: Vec<T> = (0..outputs).map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], x)).collect();
            let y = if relu { pre.iter().map(|v| v.max(T::zero())).collect() } else { pre.clone() };
            let cache = keep.then(|| Cache::Dense { input: x.to_vec(), pre });
            (y, cache)
        }
    }
}

/// Accumulates parameter gradients and returns the gradient with respect to
/// the layer input (empty when `need_input` is false).
fn layer_backward<T: Scalar>(
    layer: &Layer<T>,
    cache: &Cache<T>,
    delta: &[T],
    grad: &mut LayerGrad<T>,
    need_input: bool,
) -> Vec<T> {
    match (layer.kind, cache) {
        (LayerKind::ConvBlock { in_channels, out_channels, size }, Cache::Conv { patches, pre, argmax }) => {
            let k = in_channels * TAPS;
            let pixels = size * size;
            let half = size / 2;
            let w = layer.weight.data();
            let mut drows = if need_input { vec![T::zero(); pixels * k] } else { Vec::new() };
            for o in 0..out_channels {
                let gw = &mut grad.weight[o * k..(o + 1) * k];
                let wo = &w[o * k..(o + 1) * k];
                let mut gb = T::zero();
                for q in o * half * half..(o + 1) * half * half {
                    let p = argmax[q] as usize;
                    let d = delta[q];
                    if d == T::zero() || pre[o * pixels + p] <= T::zero() {
                        continue;
                    }
                    gb += d;
                    axpy(d, &patches[p * k..(p + 1) * k], gw);
                    if need_input {
                        axpy(d, wo, &mut drows[p * k..(p + 1) * k]);
                    }
                }
                grad.bias[o] += gb;
            }
            if !need_input {
                return Vec::new();
            }
            let mut dx = vec![T::zero(); in_channels * pixels];
            for y in 0..size {
                for x in 0..size {
                    let row = &drows[(y * size + x) * k..(y * size + x + 1) * k];
                    for c in 0..in_channels {
                        for ky in 0..KERNEL {
                            let sy = y + ky;
                            if sy == 0 || sy > size {
                                continue;
                            }
                            for kx in 0..KERNEL {
                                let sx = x + kx;
                                if sx == 0 || sx > size {
                                    continue;
                                }
                                dx[c * pixels + (sy - 1) * size + (sx - 1)] += row[c * TAPS + ky * KERNEL + kx];
                            }
                        }
                    }
                }
            }
            dx
        }
        (LayerKind::Dense { inputs, outputs, relu }, Cache::Dense { input, pre }) => {
            let w = layer.weight.data();
            let mut dx = if need_input { vec![T::zero(); inputs] } else { Vec::new() };
            for o in 0..outputs {
                let mut d = delta[o];
                if relu && pre[o] <= T::zero() {
                    d = T::zero();
                }
                if d == T::zero() {
                    continue;
                }
                grad.bias[o] += d;
                axpy(d, input, &mut grad.weight[o * inputs..(o + 1) * inputs]);
                if need_input {
                    axpy(d, &w[o * inputs..(o + 1) * inputs], &mut dx);
                }
            }
            dx
        }
        _ => unreachable!("cache kind always matches layer kind"),
    }
}
