//! Deterministic numeric building blocks with explicit backward passes.
//!
//! "Convolution" throughout this crate means valid cross-correlation with no
//! kernel flip: `y[k][j] = b[k] + Σ_c Σ_i w[k][c][i]·x[c][j·stride + i]`.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Shape, SignalBatch};

/// A plain 1D convolutional layer. Weights are stored `[out][in][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    out_channels: usize,
    in_channels: usize,
    kernel_len: usize,
    stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: SignalBatch,
}

impl ConvLayer {
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_len: usize,
        stride: usize,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_len == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "conv layer dimensions must be positive (out {out_channels}, in {in_channels}, \
                 kernel {kernel_len}, stride {stride})"
            )));
        }
        Ok(Self {
            weights: vec![0.0; out_channels * in_channels * kernel_len],
            bias: vec![0.0; out_channels],
            out_channels,
            in_channels,
            kernel_len,
            stride,
        })
    }

    pub fn from_parts(
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_channels: usize,
        kernel_len: usize,
        stride: usize,
    ) -> Result<Self> {
        let out_channels = bias.len();
        let mut layer = Self::zeros(out_channels, in_channels, kernel_len, stride)?;
        if weights.len() != layer.weights.len() {
            return Err(Error::shape(
                "ConvLayer::from_parts",
                format!("{out_channels}x{in_channels}x{kernel_len} weights"),
                format!("{} values", weights.len()),
            ));
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        kernels::output_len(input_len, self.kernel_len, self.stride)
    }

    fn check_input(&self, op: &'static str, shape: Shape) -> Result<usize> {
        if shape.channels != self.in_channels {
            return Err(Error::shape(
                op,
                format!("{} input channels (layer {})", self.in_channels, self.describe()),
                format!("input {shape}"),
            ));
        }
        self.output_len(shape.length).ok_or_else(|| {
            Error::shape(
                op,
                format!("input length >= {} (layer {})", self.kernel_len, self.describe()),
                format!("input {shape}"),
            )
        })
    }

    fn describe(&self) -> String {
        format!(
            "{}x{}x{}/s{}",
            self.out_channels, self.in_channels, self.kernel_len, self.stride
        )
    }

    /// Forward pass for one sample stored as `[in][len]`; returns `[out][out_len]`.
    pub(crate) fn forward_sample(&self, x: &[f64], in_len: usize, out_len: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.out_channels * out_len];
        self.forward_into(x, in_len, &mut y);
        y
    }

    /// Like `forward_sample`, writing into `out` (`[out][out_len]`).
    pub(crate) fn forward_into(&self, x: &[f64], in_len: usize, out: &mut [f64]) {
        kernels::correlate_multi(x, in_len, &self.weights, self.kernel_len, Some(&self.bias), self.stride, out);
    }

    /// Accumulates parameter gradients (and optionally the input gradient)
    /// for one sample.
    pub(crate) fn backward_sample(
        &self,
        g: &[f64],
        x: &[f64],
        in_len: usize,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        grad_x: Option<&mut [f64]>,
    ) {
        let out_len = g.len() / self.out_channels;
        let k = self.kernel_len;
        for (gb, go) in grad_b.iter_mut().zip(g.chunks_exact(out_len)) {
            *gb += go.iter().sum::<f64>();
        }
        kernels::kernel_grad_multi(g, x, in_len, k, self.stride, grad_w);
        if let Some(gx) = grad_x {
            kernels::input_grad_multi(g, &self.weights, k, self.stride, gx, in_len);
        }
    }
}

/// Valid cross-correlation of every sample in `x` with the layer's kernels.
pub fn conv1d_forward(x: &SignalBatch, layer: &ConvLayer) -> Result<SignalBatch> {
    let out_len = layer.check_input("conv1d_forward", x.shape())?;
    let out_shape = Shape::new(x.batch(), layer.out_channels, out_len);
    let mut data = Vec::with_capacity(out_shape.numel());
    for b in 0..x.batch() {
        data.extend(layer.forward_sample(x.sample(b), x.length(), out_len));
    }
    SignalBatch::new(out_shape, data)
}

pub fn conv1d_backward(
    grad_out: &SignalBatch,
    x: &SignalBatch,
    layer: &ConvLayer,
) -> Result<ConvGrads> {
    let out_len = layer.check_input("conv1d_backward", x.shape())?;
    let expected = Shape::new(x.batch(), layer.out_channels, out_len);
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv1d_backward",
            format!("grad_out {expected}"),
            format!("grad_out {}", grad_out.shape()),
        ));
    }
    let mut grads = ConvGrads {
        weights: vec![0.0; layer.weights.len()],
        bias: vec![0.0; layer.out_channels],
        input: SignalBatch::zeros(x.shape()),
    };
    for b in 0..x.batch() {
        layer.backward_sample(
            grad_out.sample(b),
            x.sample(b),
            x.length(),
            &mut grads.weights,
            &mut grads.bias,
            Some(grads.input.sample_mut(b)),
        );
    }
    Ok(grads)
}

/// Half-open bin `[floor(j·len/out), floor((j+1)·len/out))` of adaptive pooling.
pub fn pool_bin(j: usize, length: usize, out_len: usize) -> (usize, usize) {
    (j * length / out_len, (j + 1) * length / out_len)
}

fn check_pool(op: &'static str, length: usize, out_len: usize) -> Result<()> {
    if out_len == 0 {
        return Err(Error::invalid(format!("{op}: output length must be positive")));
    }
    if length < out_len {
        return Err(Error::shape(
            op,
            format!("input length >= {out_len}"),
            format!("input length {length}"),
        ));
    }
    Ok(())
}

pub(crate) fn avgpool_row(x: &[f64], out: &mut [f64]) {
    let (len, out_len) = (x.len(), out.len());
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = pool_bin(j, len, out_len);
        *o = x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
}

pub(crate) fn avgpool_row_backward(g: &[f64], gx: &mut [f64]) {
    let (len, out_len) = (gx.len(), g.len());
    for (j, &gj) in g.iter().enumerate() {
        let (lo, hi) = pool_bin(j, len, out_len);
        let share = gj / (hi - lo) as f64;
        gx[lo..hi].iter_mut().for_each(|v| *v = share);
    }
}

/// Parameter-free adaptive average pooling to `out_len` samples per channel.
pub fn avgpool_forward(x: &SignalBatch, out_len: usize) -> Result<SignalBatch> {
    check_pool("avgpool_forward", x.length(), out_len)?;
    let shape = Shape::new(x.batch(), x.channels(), out_len);
    let mut y = SignalBatch::zeros(shape);
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            avgpool_row(x.row(b, c), y.row_mut(b, c));
        }
    }
    Ok(y)
}

pub fn avgpool_backward(grad_out: &SignalBatch, x_shape: Shape) -> Result<SignalBatch> {
    check_pool("avgpool_backward", x_shape.length, grad_out.length())?;
    if grad_out.batch() != x_shape.batch || grad_out.channels() != x_shape.channels {
        return Err(Error::shape(
            "avgpool_backward",
            format!("grad_out {}x{}x_", x_shape.batch, x_shape.channels),
            format!("grad_out {}", grad_out.shape()),
        ));
    }
    let mut gx = SignalBatch::zeros(x_shape);
    for b in 0..x_shape.batch {
        for c in 0..x_shape.channels {
            avgpool_row_backward(grad_out.row(b, c), gx.row_mut(b, c));
        }
    }
    Ok(gx)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient passes where `x > 0`; the subgradient at 0 is taken as 0.
pub fn relu_backward(grad_out: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if grad_out.len() != x.len() {
        return Err(Error::shape("relu_backward", x.len(), grad_out.len()));
    }
    Ok(grad_out
        .iter()
        .zip(x)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect())
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

pub(crate) fn relu_backward_in_place(grad: &mut [f64], x: &[f64]) {
    for (g, &v) in grad.iter_mut().zip(x) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Fully connected layer, `y = W·x + b`, with `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    in_features: usize,
    out_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::invalid(format!(
                "linear layer dimensions must be positive ({in_features} -> {out_features})"
            )));
        }
        Ok(Self {
            weights: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
            in_features,
            out_features,
        })
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>, in_features: usize) -> Result<Self> {
        let mut layer = Self::zeros(in_features, bias.len())?;
        if weights.len() != layer.weights.len() {
            return Err(Error::shape(
                "LinearLayer::from_parts",
                format!("{}x{in_features} weights", bias.len()),
                format!("{} values", weights.len()),
            ));
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn backward_acc(
        &self,
        g: &[f64],
        x: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_features];
        for (o, &go) in g.iter().enumerate() {
            grad_b[o] += go;
            let row = o * self.in_features..(o + 1) * self.in_features;
            kernels::axpy(&mut grad_w[row.clone()], go, x);
            kernels::axpy(&mut gx, go, &self.weights[row]);
        }
        gx
    }
}

pub fn linear_forward(x: &[f64], layer: &LinearLayer) -> Result<Vec<f64>> {
    if x.len() != layer.in_features {
        return Err(Error::shape("linear_forward", layer.in_features, x.len()));
    }
    let mut out = layer.bias.clone();
    kernels::matvec_acc(&layer.weights, x, &mut out);
    Ok(out)
}

/// [`linear_forward`] for several inputs at once; bit-identical per input.
pub fn linear_forward_batch(xs: &[&[f64]], layer: &LinearLayer) -> Result<Vec<Vec<f64>>> {
    if let Some(x) = xs.iter().find(|x| x.len() != layer.in_features) {
        return Err(Error::shape("linear_forward_batch", layer.in_features, x.len()));
    }
    let mut outs = vec![layer.bias.clone(); xs.len()];
    kernels::matvec_batch_acc(&layer.weights, xs, &mut outs);
    Ok(outs)
}

pub fn linear_backward(grad_out: &[f64], x: &[f64], layer: &LinearLayer) -> Result<LinearGrads> {
    if x.len() != layer.in_features {
        return Err(Error::shape("linear_backward", layer.in_features, x.len()));
    }
    if grad_out.len() != layer.out_features {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_out of length {}", layer.out_features),
            grad_out.len(),
        ));
    }
    let mut weights = vec![0.0; layer.weights.len()];
    let mut bias = vec![0.0; layer.out_features];
    let input = layer.backward_acc(grad_out, x, &mut weights, &mut bias);
    Ok(LinearGrads {
        weights,
        bias,
        input,
    })
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against a one-hot `label`.
///
/// Returns `(−ln p_label, p − one_hot(label))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "softmax_cross_entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = (total.ln() - (logits[label] - m)).max(0.0);
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
