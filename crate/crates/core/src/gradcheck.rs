//! Finite-difference gradient verification.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cwconv::CWConvLayer;
use crate::error::Result;
use crate::network::{FirstLayer, FirstLayerKind, ModelConfig, Network};
use crate::tensor::{Shape, SignalBatch};
use crate::wavelets::{self, WaveletFamily};

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Which analytic gradient to corrupt, to prove the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates every analytic derivative with respect to a scale `s`.
    FlipScaleGrad,
}

/// Worst relative error of one suite for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub subject: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} {:<8} cases={:<4} worst={:.3e} tol={:.0e} {}",
            self.suite,
            self.subject,
            self.cases,
            self.worst,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub const WAVELET_TOL: f64 = 1e-5;
pub const LAYER_TOL: f64 = 1e-6;
pub const NETWORK_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn flip_if(fault: Fault, v: f64) -> f64 {
    if fault == Fault::FlipScaleGrad {
        -v
    } else {
        v
    }
}

/// `dictionary_grad` against central differences at `cases` random
/// `(t, u, s)` with `s` log-uniform in `[0.1, 50]`. Laplace points keep
/// `|t − u| ≥ 1e-3` so the difference stencil never straddles its onset.
pub fn wavelet_suite(family: WaveletFamily, cases: usize, seed: u64, fault: Fault) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = (rng.random_range(0.1f64.ln()..50f64.ln())).exp();
        let u = rng.random_range(-8.0..8.0);
        let mut t = rng.random_range(-8.0..8.0);
        if family == WaveletFamily::Laplace {
            // half the draws land on the causal side, where the atom is non-zero
            let gap = rng.random_range(1e-3..3.0 * s);
            t = if rng.random_bool(0.5) { u + gap } else { u - gap };
        }
        let g = wavelets::dictionary_grad(family, t, u, s)?;
        let analytic = [g.d_du, flip_if(fault, g.d_ds)];
        let du = central_difference(&[u], STEP, |p| wavelets::atom(family, t, p[0], s))[0];
        let ds = central_difference(&[s], STEP * s.min(1.0), |p| wavelets::atom(family, t, u, p[0]))[0];
        worst = worst.max(relative_error(&analytic, &[du, ds]));
    }
    Ok(SuiteReport {
        suite: "wavelet",
        subject: family.name().into(),
        cases,
        worst,
        tolerance: WAVELET_TOL,
    })
}

/// CWConv layer gradients of `Σ y²/2` with respect to `u` and `s`.
pub fn layer_suite(family: WaveletFamily, seed: u64, fault: Fault) -> Result<SuiteReport> {
    let (filters, kernel_len, batch, len) = (5, 9, 2, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = CWConvLayer::init(family, filters, kernel_len)?;
    for k in 0..filters {
        layer.u[k] = rng.random_range(-2.0..2.0);
        layer.s[k] = rng.random_range(0.5..4.0);
    }
    let x = SignalBatch::new(
        Shape::new(batch, 1, len),
        (0..batch * len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let y = layer.forward(&x)?;
    let grads = layer.backward(&y)?;
    let mut analytic = grads.u.clone();
    analytic.extend(grads.s.iter().map(|&g| flip_if(fault, g)));

    let loss = |u: &[f64], s: &[f64]| -> f64 {
        let mut probe = layer.clone();
        probe.u.copy_from_slice(u);
        probe.s.copy_from_slice(s);
        let y = probe.forward(&x).expect("forward on a valid probe");
        y.data().iter().map(|v| v * v / 2.0).sum()
    };
    let mut numeric = central_difference(&layer.u, STEP, |u| loss(u, &layer.s));
    numeric.extend(central_difference(&layer.s, STEP, |s| loss(&layer.u, s)));
    Ok(SuiteReport {
        suite: "layer",
        subject: family.name().into(),
        cases: analytic.len(),
        worst: relative_error(&analytic, &numeric),
        tolerance: LAYER_TOL,
    })
}

/// Every parameter of a shrunken network (input 64, F=4, L=8, 3 classes)
/// against central differences of the mean batch loss. The reported error is
/// the worst over parameter arrays, each compared norm-wise.
pub fn network_suite(kind: FirstLayerKind, seed: u64, fault: Fault) -> Result<SuiteReport> {
    let config = ModelConfig {
        first_layer: kind,
        filters: 4,
        kernel_len: 8,
        num_classes: 3,
        input_length: 64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::build(config, seed)?;
    if let FirstLayer::Wavelet(l) = net.first_layer_mut() {
        for k in 0..l.filters() {
            l.u[k] = rng.random_range(-1.5..1.5);
            l.s[k] = rng.random_range(0.5..3.0);
        }
    }
    // two samples keep the batch-mean path covered; the sweep over every
    // parameter is dominated by the fc layers, so each extra sample costs
    // about a third more time
    let samples: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..config.input_length).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let xs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    let labels = [0, 2];
    let grads = net.loss_and_gradients(&xs, &labels)?.grads;

    let mut worst = 0.0f64;
    let mut cases = 0;
    for (a, (name, analytic)) in grads.iter().enumerate() {
        let analytic: Vec<f64> = if name == "first.s" {
            analytic.iter().map(|&g| flip_if(fault, g)).collect()
        } else {
            analytic.to_vec()
        };
        // perturb one entry at a time in place; copying whole arrays per
        // probe would be quadratic in the array size
        let mut probe = net.clone();
        let start = net.params()[a].1;
        let numeric: Vec<f64> = start
            .iter()
            .enumerate()
            .map(|(i, &orig)| {
                let mut loss_with = |v: f64| {
                    probe.params_mut()[a].1[i] = v;
                    probe.batch_loss(&xs, &labels).expect("forward on a valid probe")
                };
                let plus = loss_with(orig + STEP);
                let minus = loss_with(orig - STEP);
                probe.params_mut()[a].1[i] = orig;
                (plus - minus) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
        cases += start.len();
    }
    Ok(SuiteReport {
        suite: "network",
        subject: kind.name().into(),
        cases,
        worst,
        tolerance: NETWORK_TOL,
    })
}

/// Every suite for every family, plus the network suite for both baselines.
pub fn run_all(seed: u64, fault: Fault) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    for family in WaveletFamily::ALL {
        out.push(wavelet_suite(family, 100, seed, fault)?);
        out.push(layer_suite(family, seed, fault)?);
    }
    for kind in [
        FirstLayerKind::Wavelet(WaveletFamily::Morlet),
        FirstLayerKind::Wavelet(WaveletFamily::MexicanHat),
        FirstLayerKind::Wavelet(WaveletFamily::Laplace),
        FirstLayerKind::Plain,
        FirstLayerKind::Sin,
    ] {
        out.push(network_suite(kind, seed, fault)?);
    }
    Ok(out)
}
