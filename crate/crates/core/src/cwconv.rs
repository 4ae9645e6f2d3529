//! Continuous wavelet convolution: a first layer whose F kernels are sampled
//! wavelet atoms `ψ_{u_k,s_k}(t_i)`, so only the translation `u_k` and scale
//! `s_k` of each filter are learned.
//!
//! The tap grid maps kernel index `i` to wavelet time `t_i = i − (L − 1)/2`,
//! in sample units. Scales are kept inside `[S_MIN, 2L]`.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Matrix, Shape, SignalBatch};
use crate::wavelets::{self, WaveletFamily};

pub const S_MIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct CWConvLayer {
    family: WaveletFamily,
    /// Per-filter translation, in taps.
    pub u: Vec<f64>,
    /// Per-filter scale, in taps.
    pub s: Vec<f64>,
    tap_grid: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    bank: Matrix,
    input: SignalBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CWConvGrads {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub input: SignalBatch,
}

/// `t_i = i − (L − 1)/2`.
pub fn centered_tap_grid(kernel_len: usize) -> Vec<f64> {
    let center = (kernel_len as f64 - 1.0) / 2.0;
    (0..kernel_len).map(|i| i as f64 - center).collect()
}

impl CWConvLayer {
    /// Multi-resolution starting bank: every `u_k = 0`, and scales spaced
    /// geometrically from 0.5 to `L/2`.
    pub fn init(family: WaveletFamily, filters: usize, kernel_len: usize) -> Result<Self> {
        if filters == 0 || kernel_len < 2 {
            return Err(Error::invalid(format!(
                "CWConv needs at least 1 filter and kernel length >= 2 (got F={filters}, L={kernel_len})"
            )));
        }
        let (lo, hi) = (0.5f64, kernel_len as f64 / 2.0);
        let s = (0..filters)
            .map(|k| {
                if filters == 1 {
                    lo
                } else {
                    let frac = k as f64 / (filters - 1) as f64;
                    (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
                }
            })
            .collect();
        Self::new(family, vec![0.0; filters], s, centered_tap_grid(kernel_len))
    }

    pub fn new(family: WaveletFamily, u: Vec<f64>, s: Vec<f64>, tap_grid: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != s.len() {
            return Err(Error::shape(
                "CWConvLayer::new",
                "equal, non-empty translation and scale vectors",
                format!("{} translations, {} scales", u.len(), s.len()),
            ));
        }
        if tap_grid.is_empty() {
            return Err(Error::invalid("CWConv tap grid must be non-empty"));
        }
        let layer = Self {
            family,
            u,
            s,
            tap_grid,
            cache: None,
        };
        layer.check_scales()?;
        Ok(layer)
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn filters(&self) -> usize {
        self.u.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.tap_grid.len()
    }

    pub fn tap_grid(&self) -> &[f64] {
        &self.tap_grid
    }

    /// Always `2F`: one translation and one scale per filter.
    pub fn learnable_count(&self) -> usize {
        self.u.len() + self.s.len()
    }

    pub fn scale_bounds(&self) -> (f64, f64) {
        (S_MIN, 2.0 * self.kernel_len() as f64)
    }

    pub fn clamp_scales(&mut self) {
        let (lo, hi) = self.scale_bounds();
        for s in &mut self.s {
            *s = s.clamp(lo, hi);
        }
    }

    fn check_scales(&self) -> Result<()> {
        match self.s.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            Some(k) => Err(Error::invalid(format!(
                "CWConv filter {k} has non-positive scale {}",
                self.s[k]
            ))),
            None => Ok(()),
        }
    }

    /// `bank[k][i] = ψ_{u_k, s_k}(t_i)`.
    pub fn materialize(&self) -> Result<Matrix> {
        self.check_scales()?;
        let (f, l) = (self.filters(), self.kernel_len());
        let mut bank = Matrix::zeros(f, l);
        for k in 0..f {
            let (u, s) = (self.u[k], self.s[k]);
            for (b, &t) in bank.row_mut(k).iter_mut().zip(&self.tap_grid) {
                *b = wavelets::atom(self.family, t, u, s);
            }
        }
        if !bank.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "cwconv bank".into(),
            });
        }
        Ok(bank)
    }

    fn output_len(&self, op: &'static str, shape: Shape) -> Result<usize> {
        if shape.channels != 1 {
            return Err(Error::shape(
                op,
                "single-channel raw signal",
                format!("input {shape}"),
            ));
        }
        kernels::output_len(shape.length, self.kernel_len(), 1).ok_or_else(|| {
            Error::shape(
                op,
                format!("input length >= {}", self.kernel_len()),
                format!("input {shape}"),
            )
        })
    }

    /// Correlates every sample with the current bank and caches both for
    /// [`CWConvLayer::backward`].
    pub fn forward(&mut self, x: &SignalBatch) -> Result<SignalBatch> {
        let n = self.output_len("cwconv forward", x.shape())?;
        let bank = self.materialize()?;
        let mut y = SignalBatch::zeros(Shape::new(x.batch(), self.filters(), n));
        for b in 0..x.batch() {
            correlate_bank(&bank, x.sample(b), y.sample_mut(b));
        }
        self.cache = Some(Cache {
            bank,
            input: x.clone(),
        });
        Ok(y)
    }

    pub fn backward(&self, grad_out: &SignalBatch) -> Result<CWConvGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("cwconv backward called before forward".into()))?;
        let x = &cache.input;
        let n = self.output_len("cwconv backward", x.shape())?;
        let expected = Shape::new(x.batch(), self.filters(), n);
        if grad_out.shape() != expected {
            return Err(Error::shape(
                "cwconv backward",
                format!("grad_out {expected}"),
                format!("grad_out {}", grad_out.shape()),
            ));
        }
        let mut grad_bank = Matrix::zeros(self.filters(), self.kernel_len());
        let mut input = SignalBatch::zeros(x.shape());
        for b in 0..x.batch() {
            bank_grad_acc(grad_out.sample(b), x.sample(b), &mut grad_bank);
            input_grad_acc(&cache.bank, grad_out.sample(b), input.sample_mut(b));
        }
        let (u, s) = self.chain_bank_grad(&grad_bank);
        Ok(CWConvGrads { u, s, input })
    }

    /// Maps `∂loss/∂bank[k][i]` onto `(∂loss/∂u_k, ∂loss/∂s_k)` through the
    /// analytic atom derivatives.
    pub fn chain_bank_grad(&self, grad_bank: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let mut gu = vec![0.0; self.filters()];
        let mut gs = vec![0.0; self.filters()];
        for k in 0..self.filters() {
            let (u, s) = (self.u[k], self.s[k]);
            for (&g, &t) in grad_bank.row(k).iter().zip(&self.tap_grid) {
                let d = wavelets::atom_grad(self.family, t, u, s);
                gu[k] += g * d.d_du;
                gs[k] += g * d.d_ds;
            }
        }
        (gu, gs)
    }
}

/// One sample: `y[k][j] = Σ_i bank[k][i]·x[j + i]`.
pub(crate) fn correlate_bank(bank: &Matrix, x: &[f64], y: &mut [f64]) {
    kernels::correlate_multi(x, x.len(), bank.data(), bank.cols(), None, 1, y);
}

pub(crate) fn bank_grad_acc(g: &[f64], x: &[f64], grad_bank: &mut Matrix) {
    let k = grad_bank.cols();
    kernels::kernel_grad_multi(g, x, x.len(), k, 1, grad_bank.data_mut());
}

pub(crate) fn input_grad_acc(bank: &Matrix, g: &[f64], gx: &mut [f64]) {
    kernels::input_grad_multi(g, bank.data(), bank.cols(), 1, gx, gx.len());
}
