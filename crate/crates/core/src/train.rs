//! Optimizers, the mini-batch training loop, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{argmax, Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments mirroring a network's parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update of raw arrays; shapes must match the state.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam step", format!("{} arrays", self.m.len()), format!("{} params / {} grads", params.len(), grads.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::shape("adam step", m.len(), format!("param {} / grad {}", p.len(), g.len())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// One Adam step on every network parameter, then the scale clamp.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let grads: Vec<&[f64]> = grads.arrays().iter().map(Vec::as_slice).collect();
        let mut params: Vec<&mut [f64]> = net.params_mut().into_iter().map(|(_, p)| p).collect();
        self.update(&mut params, &grads)?;
        net.project_params();
        Ok(())
    }
}

/// Plain gradient descent `p ← p − lr·g` on raw arrays.
pub fn sgd_update(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("sgd step", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::shape("sgd step", p.len(), g.len()));
        }
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

/// One gradient-descent step on every network parameter, then the scale clamp.
pub fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
    let grads: Vec<&[f64]> = grads.arrays().iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut [f64]> = net.params_mut().into_iter().map(|(_, p)| p).collect();
    sgd_update(&mut params, &grads, lr)?;
    net.project_params();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam(AdamConfig),
    Sgd { lr: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch, measured before each update.
    pub loss: f64,
    /// Training accuracy over the epoch, measured before each update.
    pub accuracy: f64,
}

enum OptState {
    Adam(AdamState),
    Sgd(f64),
}

pub fn train(net: &mut Network, data: &Dataset, opts: &TrainOptions) -> Result<Vec<EpochStats>> {
    train_with(net, data, opts, |_, _| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    net: &mut Network,
    data: &Dataset,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats, &Network),
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if data.window_length() != net.config().input_length {
        return Err(Error::shape(
            "train",
            format!("windows of length {}", net.config().input_length),
            format!("length {}", data.window_length()),
        ));
    }
    if data.num_classes() > net.config().num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes but the model predicts {}",
            data.num_classes(),
            net.config().num_classes
        )));
    }
    let mut state = match opts.optimizer {
        Optimizer::Adam(cfg) => OptState::Adam(AdamState::new(net, cfg)),
        Optimizer::Sgd { lr } => OptState::Sgd(lr),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(opts.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.window(i)).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let out = net.loss_and_gradients(&xs, &ys)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            match &mut state {
                OptState::Adam(s) => s.step(net, &out.grads)?,
                OptState::Sgd(lr) => sgd_step(net, &out.grads, *lr)?,
            }
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats, net);
        history.push(stats);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy per true class; `None` for classes absent from the set.
    pub per_class: Vec<Option<f64>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let xs: Vec<&[f64]> = data.windows().collect();
    let predictions: Vec<usize> = net.infer(&xs)?.iter().map(|r| argmax(&r.logits)).collect();
    Ok(score(&predictions, data.labels(), net.config().num_classes.max(data.num_classes())))
}

/// Accuracy and confusion matrix from predicted and true labels.
pub fn score(predictions: &[usize], labels: &[usize], num_classes: usize) -> Evaluation {
    let mut confusion = vec![vec![0; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Evaluation {
        accuracy: correct as f64 / labels.len().max(1) as f64,
        confusion,
        per_class,
        predictions: predictions.to_vec(),
    }
}
