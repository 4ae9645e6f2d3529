//! The diagnosis network: a swappable first layer on a small fixed backbone.
//!
//! ```text
//! first (F filters, length L) → ReLU
//! Conv(F→6, k=5, stride 1)    → ReLU
//! Conv(6→16, k=5, stride 2)   → ReLU
//! AdaptiveAvgPool(16) → flatten(256)
//! Linear(256→120) → ReLU → Linear(120→84) → ReLU → Linear(84→classes)
//! ```
//!
//! With the default 1000-sample input the feature lengths are
//! 985 → 981 → 489 → 16.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cwconv::{self, CWConvLayer};
use crate::error::{Error, Result};
use crate::ops::{self, ConvLayer, LinearLayer};
use crate::tensor::{ensure_finite, Matrix, SignalBatch};
use crate::wavelets::WaveletFamily;

pub const CONV2_CHANNELS: usize = 6;
pub const CONV2_KERNEL: usize = 5;
pub const CONV2_STRIDE: usize = 1;
pub const CONV3_CHANNELS: usize = 16;
pub const CONV3_KERNEL: usize = 5;
pub const CONV3_STRIDE: usize = 2;
pub const POOL_LEN: usize = 16;
pub const HIDDEN1: usize = 120;
pub const HIDDEN2: usize = 84;

/// Samples per partial gradient sum. Partials are combined in a fixed order,
/// so results do not depend on the number of worker threads.
const REDUCE_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FirstLayerKind {
    /// CWConv with the given wavelet family.
    Wavelet(WaveletFamily),
    /// Ordinary convolution with free taps and bias.
    Plain,
    /// CWConv using `sin` atoms.
    Sin,
}

impl FirstLayerKind {
    pub fn family(self) -> Option<WaveletFamily> {
        match self {
            FirstLayerKind::Wavelet(f) => Some(f),
            FirstLayerKind::Sin => Some(WaveletFamily::Sin),
            FirstLayerKind::Plain => None,
        }
    }

    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            FirstLayerKind::Wavelet(f) => f.name(),
            FirstLayerKind::Plain => "cnn",
            FirstLayerKind::Sin => "sin",
        }
    }
}

impl fmt::Display for FirstLayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FirstLayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" | "plain" | "conv" => Ok(FirstLayerKind::Plain),
            "sin" | "sincnn" => Ok(FirstLayerKind::Sin),
            other => other.parse().map(FirstLayerKind::Wavelet).map_err(|_| {
                Error::invalid(format!(
                    "unknown model variant `{other}` (expected morlet, mexhat, laplace, cnn or sin)"
                ))
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub first_layer: FirstLayerKind,
    pub filters: usize,
    pub kernel_len: usize,
    pub num_classes: usize,
    pub input_length: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            first_layer: FirstLayerKind::Wavelet(WaveletFamily::Laplace),
            filters: 100,
            kernel_len: 16,
            num_classes: 7,
            input_length: 1000,
        }
    }
}

impl ModelConfig {
    pub fn with_first_layer(mut self, kind: FirstLayerKind) -> Self {
        self.first_layer = kind;
        self
    }

    /// Feature lengths after the first, second and third convolutions.
    pub fn feature_lengths(&self) -> Result<[usize; 3]> {
        if self.filters == 0 {
            return Err(Error::invalid("first layer needs at least one filter"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let too_short = |layer: &str, len: usize, k: usize| {
            Error::invalid(format!(
                "input length {} too short: layer `{layer}` (kernel {k}) receives {len} samples",
                self.input_length
            ))
        };
        let min_first = if self.first_layer == FirstLayerKind::Plain { 1 } else { 2 };
        if self.kernel_len < min_first {
            return Err(Error::invalid(format!(
                "first-layer kernel length {} is too small",
                self.kernel_len
            )));
        }
        let n1 = crate::kernels::output_len(self.input_length, self.kernel_len, 1)
            .ok_or_else(|| too_short("first", self.input_length, self.kernel_len))?;
        let n2 = crate::kernels::output_len(n1, CONV2_KERNEL, CONV2_STRIDE)
            .ok_or_else(|| too_short("conv2", n1, CONV2_KERNEL))?;
        let n3 = crate::kernels::output_len(n2, CONV3_KERNEL, CONV3_STRIDE)
            .ok_or_else(|| too_short("conv3", n2, CONV3_KERNEL))?;
        if n3 < POOL_LEN {
            return Err(Error::invalid(format!(
                "input length {} too short: layer `pool` needs {POOL_LEN} samples, receives {n3}",
                self.input_length
            )));
        }
        Ok([n1, n2, n3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FirstLayer {
    Wavelet(CWConvLayer),
    Plain(ConvLayer),
}

impl FirstLayer {
    pub fn param_count(&self) -> usize {
        match self {
            FirstLayer::Wavelet(l) => l.learnable_count(),
            FirstLayer::Plain(l) => l.param_count(),
        }
    }
}

/// One gradient array per learnable parameter array, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<&'static str>,
    arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let params = net.params();
        Self {
            names: params.iter().map(|(n, _)| *n).collect(),
            arrays: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn arrays(&self) -> &[Vec<f64>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.arrays[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        self.names.iter().copied().zip(self.arrays.iter().map(Vec::as_slice))
    }

    pub fn scale(&mut self, factor: f64) {
        self.arrays.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// Per-layer parameter tally, in stack order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub name: &'static str,
    pub output: String,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    first: FirstLayer,
    conv2: ConvLayer,
    conv3: ConvLayer,
    fc1: LinearLayer,
    fc2: LinearLayer,
    fc3: LinearLayer,
    lengths: [usize; 3],
    cache: Option<ForwardCache>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    traces: Vec<Trace>,
}

/// Post-activation values of one sample, enough for its backward pass.
/// ReLU masks are recovered from `z > 0`, which holds exactly where the
/// pre-activation is positive.
#[derive(Debug, Clone, Default)]
struct Trace {
    input: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    pooled: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    logits: Vec<f64>,
}

/// Gradient accumulator; the first layer is tracked per kernel tap.
struct Accum {
    first_kernel: Matrix,
    first_bias: Vec<f64>,
    conv2: (Vec<f64>, Vec<f64>),
    conv3: (Vec<f64>, Vec<f64>),
    fc1: (Vec<f64>, Vec<f64>),
    fc2: (Vec<f64>, Vec<f64>),
    fc3: (Vec<f64>, Vec<f64>),
    loss: f64,
    correct: usize,
}

fn uniform_fill(rng: &mut ChaCha8Rng, values: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in values {
        *v = rng.random_range(-bound..=bound);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over a batch of logit rows.
pub fn mean_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape(
            "mean_cross_entropy",
            format!("{} labels (non-empty)", logits.len()),
            labels.len(),
        ));
    }
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        total += ops::softmax_cross_entropy(z, y)?.0;
    }
    Ok(total / labels.len() as f64)
}

impl Network {
    /// Builds a freshly initialized network. Plain convolution and linear
    /// weights and biases are drawn uniformly from `±1/√fan_in`; CWConv
    /// layers use [`CWConvLayer::init`].
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let lengths = config.feature_lengths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, l) = (config.filters, config.kernel_len);
        let first = match config.first_layer.family() {
            Some(family) => FirstLayer::Wavelet(CWConvLayer::init(family, f, l)?),
            None => {
                let mut conv = ConvLayer::zeros(f, 1, l, 1)?;
                uniform_fill(&mut rng, &mut conv.weights, l);
                uniform_fill(&mut rng, &mut conv.bias, l);
                FirstLayer::Plain(conv)
            }
        };
        let mut conv2 = ConvLayer::zeros(CONV2_CHANNELS, f, CONV2_KERNEL, CONV2_STRIDE)?;
        uniform_fill(&mut rng, &mut conv2.weights, f * CONV2_KERNEL);
        uniform_fill(&mut rng, &mut conv2.bias, f * CONV2_KERNEL);
        let mut conv3 = ConvLayer::zeros(CONV3_CHANNELS, CONV2_CHANNELS, CONV3_KERNEL, CONV3_STRIDE)?;
        uniform_fill(&mut rng, &mut conv3.weights, CONV2_CHANNELS * CONV3_KERNEL);
        uniform_fill(&mut rng, &mut conv3.bias, CONV2_CHANNELS * CONV3_KERNEL);
        let linear = |rng: &mut ChaCha8Rng, i: usize, o: usize| -> Result<LinearLayer> {
            let mut layer = LinearLayer::zeros(i, o)?;
            uniform_fill(rng, &mut layer.weights, i);
            uniform_fill(rng, &mut layer.bias, i);
            Ok(layer)
        };
        let fc1 = linear(&mut rng, CONV3_CHANNELS * POOL_LEN, HIDDEN1)?;
        let fc2 = linear(&mut rng, HIDDEN1, HIDDEN2)?;
        let fc3 = linear(&mut rng, HIDDEN2, config.num_classes)?;
        Ok(Self {
            config,
            first,
            conv2,
            conv3,
            fc1,
            fc2,
            fc3,
            lengths,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn first_layer(&self) -> &FirstLayer {
        &self.first
    }

    pub fn first_layer_mut(&mut self) -> &mut FirstLayer {
        &mut self.first
    }

    pub fn output_layer_mut(&mut self) -> &mut LinearLayer {
        &mut self.fc3
    }

    /// Feature lengths after each convolution.
    pub fn feature_lengths(&self) -> [usize; 3] {
        self.lengths
    }

    pub fn layer_params(&self) -> Vec<LayerParams> {
        let [n1, n2, n3] = self.lengths;
        let first_name = match self.first {
            FirstLayer::Wavelet(_) => "cwconv",
            FirstLayer::Plain(_) => "conv1",
        };
        vec![
            LayerParams {
                name: first_name,
                output: format!("1x{}x{n1}", self.config.filters),
                params: self.first.param_count(),
            },
            LayerParams {
                name: "conv2",
                output: format!("1x{CONV2_CHANNELS}x{n2}"),
                params: self.conv2.param_count(),
            },
            LayerParams {
                name: "conv3",
                output: format!("1x{CONV3_CHANNELS}x{n3}"),
                params: self.conv3.param_count(),
            },
            LayerParams {
                name: "avgpool",
                output: format!("1x{CONV3_CHANNELS}x{POOL_LEN}"),
                params: 0,
            },
            LayerParams {
                name: "fc1",
                output: format!("1x{HIDDEN1}"),
                params: self.fc1.param_count(),
            },
            LayerParams {
                name: "fc2",
                output: format!("1x{HIDDEN2}"),
                params: self.fc2.param_count(),
            },
            LayerParams {
                name: "fc3",
                output: format!("1x{}", self.config.num_classes),
                params: self.fc3.param_count(),
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_params().iter().map(|l| l.params).sum()
    }

    /// Every learnable array with its stable name, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = match &self.first {
            FirstLayer::Wavelet(l) => vec![("first.u", &l.u), ("first.s", &l.s)],
            FirstLayer::Plain(l) => vec![("first.weight", &l.weights), ("first.bias", &l.bias)],
        };
        out.extend([
            ("conv2.weight", self.conv2.weights.as_slice()),
            ("conv2.bias", &self.conv2.bias),
            ("conv3.weight", &self.conv3.weights),
            ("conv3.bias", &self.conv3.bias),
            ("fc1.weight", &self.fc1.weights),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weights),
            ("fc2.bias", &self.fc2.bias),
            ("fc3.weight", &self.fc3.weights),
            ("fc3.bias", &self.fc3.bias),
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = match &mut self.first {
            FirstLayer::Wavelet(l) => vec![("first.u", &mut l.u), ("first.s", &mut l.s)],
            FirstLayer::Plain(l) => {
                vec![("first.weight", &mut l.weights), ("first.bias", &mut l.bias)]
            }
        };
        out.extend([
            ("conv2.weight", self.conv2.weights.as_mut_slice()),
            ("conv2.bias", &mut self.conv2.bias),
            ("conv3.weight", &mut self.conv3.weights),
            ("conv3.bias", &mut self.conv3.bias),
            ("fc1.weight", &mut self.fc1.weights),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weights),
            ("fc2.bias", &mut self.fc2.bias),
            ("fc3.weight", &mut self.fc3.weights),
            ("fc3.bias", &mut self.fc3.bias),
        ]);
        out
    }

    /// Enforces layer constraints after a parameter update (CWConv scale range).
    pub fn project_params(&mut self) {
        if let FirstLayer::Wavelet(l) = &mut self.first {
            l.clamp_scales();
        }
    }

    fn bank(&self) -> Result<Option<Matrix>> {
        match &self.first {
            FirstLayer::Wavelet(l) => l.materialize().map(Some),
            FirstLayer::Plain(_) => Ok(None),
        }
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_length {
            return Err(Error::shape(
                "network forward",
                format!("samples of length {}", self.config.input_length),
                format!("length {}", x.len()),
            ));
        }
        Ok(())
    }

    /// First-layer pre-activation for one sample into `out` (`[F][n1]`).
    fn first_forward(&self, bank: Option<&Matrix>, x: &[f64], out: &mut [f64]) {
        match (&self.first, bank) {
            (FirstLayer::Wavelet(_), Some(bank)) => cwconv::correlate_bank(bank, x, out),
            (FirstLayer::Plain(l), _) => l.forward_into(x, x.len(), out),
            (FirstLayer::Wavelet(_), None) => unreachable!("wavelet layer without a bank"),
        }
    }

    /// Runs one sample forward, reusing the buffers already held by `t`.
    fn forward_into(&self, bank: Option<&Matrix>, x: &[f64], t: &mut Trace) -> Result<()> {
        self.conv_into(bank, x, t)?;
        let a1 = ops::linear_forward(&t.pooled, &self.fc1)?;
        ensure_finite(&a1, "fc1")?;
        t.r1 = ops::relu(&a1);
        let a2 = ops::linear_forward(&t.r1, &self.fc2)?;
        ensure_finite(&a2, "fc2")?;
        t.r2 = ops::relu(&a2);
        t.logits = ops::linear_forward(&t.r2, &self.fc3)?;
        ensure_finite(&t.logits, "fc3")?;
        Ok(())
    }

    /// The convolutional stack up to and including the pooled features.
    fn conv_into(&self, bank: Option<&Matrix>, x: &[f64], t: &mut Trace) -> Result<()> {
        self.check_sample(x)?;
        let [n1, n2, n3] = self.lengths;
        t.input.clear();
        t.input.extend_from_slice(x);
        t.z1.resize(self.config.filters * n1, 0.0);
        self.first_forward(bank, x, &mut t.z1);
        ensure_finite(&t.z1, "first")?;
        ops::relu_in_place(&mut t.z1);
        t.z2.resize(CONV2_CHANNELS * n2, 0.0);
        self.conv2.forward_into(&t.z1, n1, &mut t.z2);
        ensure_finite(&t.z2, "conv2")?;
        ops::relu_in_place(&mut t.z2);
        t.z3.resize(CONV3_CHANNELS * n3, 0.0);
        self.conv3.forward_into(&t.z2, n2, &mut t.z3);
        ensure_finite(&t.z3, "conv3")?;
        ops::relu_in_place(&mut t.z3);
        t.pooled.resize(CONV3_CHANNELS * POOL_LEN, 0.0);
        for (c, out) in t.pooled.chunks_exact_mut(POOL_LEN).enumerate() {
            ops::avgpool_row(&t.z3[c * n3..(c + 1) * n3], out);
        }
        Ok(())
    }

    /// Forward pass for a few samples: convolutions per sample, then the
    /// dense layers batched so each weight row is streamed once. Results
    /// are bit-identical to [`Self::forward_into`].
    fn infer_chunk(&self, bank: Option<&Matrix>, xs: &[&[f64]]) -> Result<Vec<Inference>> {
        let mut t = Trace::default();
        let mut pooled = Vec::with_capacity(xs.len());
        for x in xs {
            self.conv_into(bank, x, &mut t)?;
            pooled.push(t.pooled.clone());
        }
        let dense = |inputs: &[Vec<f64>], layer: &LinearLayer, name: &str, relu: bool| -> Result<Vec<Vec<f64>>> {
            let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
            let mut outs = ops::linear_forward_batch(&refs, layer)?;
            for o in &mut outs {
                ensure_finite(o, name)?;
                if relu {
                    ops::relu_in_place(o);
                }
            }
            Ok(outs)
        };
        let r1 = dense(&pooled, &self.fc1, "fc1", true)?;
        let r2 = dense(&r1, &self.fc2, "fc2", true)?;
        let logits = dense(&r2, &self.fc3, "fc3", false)?;
        Ok(logits
            .into_iter()
            .zip(r2)
            .map(|(logits, features)| Inference { logits, features })
            .collect())
    }

    fn forward_sample(&self, bank: Option<&Matrix>, x: &[f64]) -> Result<Trace> {
        let mut t = Trace::default();
        self.forward_into(bank, x, &mut t)?;
        Ok(t)
    }

    fn new_accum(&self) -> Accum {
        let (f, l) = (self.config.filters, self.config.kernel_len);
        let pair = |w: &[f64], b: &[f64]| (vec![0.0; w.len()], vec![0.0; b.len()]);
        Accum {
            first_kernel: Matrix::zeros(f, l),
            first_bias: vec![0.0; f],
            conv2: pair(&self.conv2.weights, &self.conv2.bias),
            conv3: pair(&self.conv3.weights, &self.conv3.bias),
            fc1: pair(&self.fc1.weights, &self.fc1.bias),
            fc2: pair(&self.fc2.weights, &self.fc2.bias),
            fc3: pair(&self.fc3.weights, &self.fc3.bias),
            loss: 0.0,
            correct: 0,
        }
    }

    fn backward_sample(&self, t: &Trace, grad_logits: &[f64], acc: &mut Accum, scratch: &mut Scratch) {
        let [n1, n2, n3] = self.lengths;
        let mut g = self.fc3.backward_acc(grad_logits, &t.r2, &mut acc.fc3.0, &mut acc.fc3.1);
        ops::relu_backward_in_place(&mut g, &t.r2);
        let mut g = self.fc2.backward_acc(&g, &t.r1, &mut acc.fc2.0, &mut acc.fc2.1);
        ops::relu_backward_in_place(&mut g, &t.r1);
        let g_pool = self.fc1.backward_acc(&g, &t.pooled, &mut acc.fc1.0, &mut acc.fc1.1);

        let g3 = zeroed(&mut scratch.g3, CONV3_CHANNELS * n3);
        for (c, gp) in g_pool.chunks_exact(POOL_LEN).enumerate() {
            ops::avgpool_row_backward(gp, &mut g3[c * n3..(c + 1) * n3]);
        }
        ops::relu_backward_in_place(g3, &t.z3);
        let g2 = zeroed(&mut scratch.g2, CONV2_CHANNELS * n2);
        self.conv3
            .backward_sample(g3, &t.z2, n2, &mut acc.conv3.0, &mut acc.conv3.1, Some(&mut *g2));
        ops::relu_backward_in_place(g2, &t.z2);
        let g1 = zeroed(&mut scratch.g1, self.config.filters * n1);
        self.conv2
            .backward_sample(g2, &t.z1, n1, &mut acc.conv2.0, &mut acc.conv2.1, Some(&mut *g1));
        ops::relu_backward_in_place(g1, &t.z1);
        match &self.first {
            FirstLayer::Wavelet(_) => cwconv::bank_grad_acc(g1, &t.input, &mut acc.first_kernel),
            FirstLayer::Plain(l) => l.backward_sample(
                g1,
                &t.input,
                t.input.len(),
                acc.first_kernel.data_mut(),
                &mut acc.first_bias,
                None,
            ),
        }
    }
}

/// Reusable backward buffers.
#[derive(Default)]
struct Scratch {
    g1: Vec<f64>,
    g2: Vec<f64>,
    g3: Vec<f64>,
}

fn zeroed(buf: &mut Vec<f64>, len: usize) -> &mut [f64] {
    buf.clear();
    buf.resize(len, 0.0);
    buf
}

/// Outcome of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Samples whose argmax logit equals the label.
    pub correct: usize,
    /// Gradients of the mean loss.
    pub grads: Gradients,
}

impl Accum {
    fn merge(&mut self, other: Accum) {
        add_into(self.first_kernel.data_mut(), other.first_kernel.data());
        add_into(&mut self.first_bias, &other.first_bias);
        for (dst, src) in [
            (&mut self.conv2, &other.conv2),
            (&mut self.conv3, &other.conv3),
            (&mut self.fc1, &other.fc1),
            (&mut self.fc2, &other.fc2),
            (&mut self.fc3, &other.fc3),
        ] {
            add_into(&mut dst.0, &src.0);
            add_into(&mut dst.1, &src.1);
        }
        self.loss += other.loss;
        self.correct += other.correct;
    }
}

impl Network {
    fn sample_step(&self, trace: &Trace, label: usize, acc: &mut Accum, scratch: &mut Scratch) -> Result<()> {
        let (loss, grad) = ops::softmax_cross_entropy(&trace.logits, label)?;
        acc.loss += loss;
        if argmax(&trace.logits) == label {
            acc.correct += 1;
        }
        self.backward_sample(trace, &grad, acc, scratch);
        Ok(())
    }

    fn finish(&self, acc: Accum, batch: usize) -> BatchResult {
        let n = batch as f64;
        let div = |v: Vec<f64>| v.into_iter().map(|g| g / n).collect::<Vec<f64>>();
        let mut arrays = match &self.first {
            FirstLayer::Wavelet(l) => {
                let mut bank = acc.first_kernel;
                bank.data_mut().iter_mut().for_each(|g| *g /= n);
                let (gu, gs) = l.chain_bank_grad(&bank);
                vec![gu, gs]
            }
            FirstLayer::Plain(_) => vec![div(acc.first_kernel.into_data()), div(acc.first_bias)],
        };
        for (w, b) in [acc.conv2, acc.conv3, acc.fc1, acc.fc2, acc.fc3] {
            arrays.push(div(w));
            arrays.push(div(b));
        }
        let names = self.params().iter().map(|(name, _)| *name).collect();
        BatchResult {
            loss: acc.loss / n,
            correct: acc.correct,
            grads: Gradients { names, arrays },
        }
    }

    fn check_labels(&self, count: usize, labels: &[usize]) -> Result<()> {
        if count == 0 || count != labels.len() {
            return Err(Error::shape(
                "network batch",
                format!("{count} labels for a non-empty batch"),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.config.num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Forward and backward over a batch without touching the cache.
    ///
    /// Samples are processed in parallel; partial sums are combined in a
    /// fixed order so the result is bit-identical for any thread count.
    pub fn loss_and_gradients(&self, samples: &[&[f64]], labels: &[usize]) -> Result<BatchResult> {
        self.check_labels(samples.len(), labels)?;
        let bank = self.bank()?;
        let partials = samples
            .par_chunks(REDUCE_CHUNK)
            .zip(labels.par_chunks(REDUCE_CHUNK))
            .map(|(xs, ys)| {
                let mut acc = self.new_accum();
                let mut trace = Trace::default();
                let mut scratch = Scratch::default();
                for (x, &y) in xs.iter().zip(ys) {
                    self.forward_into(bank.as_ref(), x, &mut trace)?;
                    self.sample_step(&trace, y, &mut acc, &mut scratch)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<Accum>>>()?;
        let mut total = self.new_accum();
        for part in partials {
            total.merge(part);
        }
        Ok(self.finish(total, samples.len()))
    }

    /// Forward pass over a `(B, 1, input_length)` batch. Activations are
    /// cached for [`Network::backward`]. Returns one logit row per sample.
    pub fn forward(&mut self, batch: &SignalBatch) -> Result<Vec<Vec<f64>>> {
        if batch.channels() != 1 || batch.length() != self.config.input_length {
            return Err(Error::shape(
                "network forward",
                format!("Bx1x{}", self.config.input_length),
                batch.shape(),
            ));
        }
        self.cache = None;
        let bank = self.bank()?;
        let traces = (0..batch.batch())
            .into_par_iter()
            .map(|b| self.forward_sample(bank.as_ref(), batch.sample(b)))
            .collect::<Result<Vec<Trace>>>()?;
        let logits = traces.iter().map(|t| t.logits.clone()).collect();
        self.cache = Some(ForwardCache { traces });
        Ok(logits)
    }

    /// Gradients of the mean cross-entropy of the cached forward pass.
    pub fn backward(&self, labels: &[usize]) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("network backward called before forward".into()))?;
        self.check_labels(cache.traces.len(), labels)?;
        let partials = cache
            .traces
            .par_chunks(REDUCE_CHUNK)
            .zip(labels.par_chunks(REDUCE_CHUNK))
            .map(|(ts, ys)| {
                let mut acc = self.new_accum();
                let mut scratch = Scratch::default();
                for (t, &y) in ts.iter().zip(ys) {
                    self.sample_step(t, y, &mut acc, &mut scratch)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<Accum>>>()?;
        let mut total = self.new_accum();
        for part in partials {
            total.merge(part);
        }
        Ok(self.finish(total, cache.traces.len()).grads)
    }

    /// Mean cross-entropy of a batch, forward pass only.
    pub fn batch_loss(&self, samples: &[&[f64]], labels: &[usize]) -> Result<f64> {
        self.check_labels(samples.len(), labels)?;
        let logits: Vec<Vec<f64>> = self.infer(samples)?.into_iter().map(|r| r.logits).collect();
        mean_cross_entropy(&logits, labels)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let bank = self.bank()?;
        Ok(self.forward_sample(bank.as_ref(), x)?.logits)
    }

    /// Logits and penultimate (post-ReLU, 84-wide) features for many samples.
    pub fn infer(&self, samples: &[&[f64]]) -> Result<Vec<Inference>> {
        let bank = self.bank()?;
        let chunks = samples
            .par_chunks(REDUCE_CHUNK)
            .map(|xs| self.infer_chunk(bank.as_ref(), xs))
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// The first-layer filters as an `F × L` matrix: the materialized wavelet
    /// bank for CWConv, raw taps for a plain convolution.
    pub fn export_first_layer(&self) -> Result<Matrix> {
        match &self.first {
            FirstLayer::Wavelet(l) => l.materialize(),
            FirstLayer::Plain(l) => Matrix::new(l.out_channels(), l.kernel_len(), l.weights.clone()),
        }
    }

    /// First-layer output for one sample before the activation, `F × (len − L + 1)`.
    pub fn export_feature_map(&self, x: &[f64]) -> Result<Matrix> {
        self.check_sample(x)?;
        let bank = self.bank()?;
        let mut h1 = vec![0.0; self.config.filters * self.lengths[0]];
        self.first_forward(bank.as_ref(), x, &mut h1);
        Matrix::new(self.config.filters, self.lengths[0], h1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_inference_matches_single_sample_forward() {
        for kind in [FirstLayerKind::Wavelet(WaveletFamily::Laplace), FirstLayerKind::Plain] {
            let cfg = ModelConfig {
                first_layer: kind,
                filters: 5,
                kernel_len: 8,
                num_classes: 3,
                input_length: 80,
            };
            let net = Network::build(cfg, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            // 21 samples: one full chunk plus a ragged tail
            let samples: Vec<Vec<f64>> =
                (0..21).map(|_| (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let xs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
            let bank = net.bank().unwrap();
            for (x, got) in xs.iter().zip(net.infer(&xs).unwrap()) {
                let t = net.forward_sample(bank.as_ref(), x).unwrap();
                assert_eq!(got.logits, t.logits);
                assert_eq!(got.features, t.r2);
            }
        }
    }
}
