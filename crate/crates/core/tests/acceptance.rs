//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 6 and 7 share one comparison run whose epoch budget is
//! `WKN_ACCEPT_EPOCHS` (default 10, at most 50).

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wkn::compare::{compare, CompareOptions, VariantSummary};
use wkn::cwconv::centered_tap_grid;
use wkn::data::synthesize;
use wkn::gradcheck::{network_suite, relative_error, wavelet_suite, Fault, NETWORK_TOL, WAVELET_TOL};
use wkn::network::mean_cross_entropy;
use wkn::ops::softmax;
use wkn::wavelets::dictionary;
use wkn::{
    checkpoint, CWConvLayer, Dataset, FirstLayerKind, ModelConfig, Network, SignalBatch, SyntheticSpec,
    TrainOptions, WaveletFamily,
};

const DEFAULT_EPOCHS: usize = 10;
const MAX_EPOCHS: usize = 50;
const RUNS: usize = 5;
const TARGET_ACCURACY: f64 = 0.95;

const WAVELETS: [WaveletFamily; 3] = [WaveletFamily::Morlet, WaveletFamily::MexicanHat, WaveletFamily::Laplace];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()))
}

fn parameter_accounting() -> Outcome {
    let t = Instant::now();
    let expected = [1700, 3006, 496, 0, 30840, 10164, 595];
    let counts = |kind| -> Vec<usize> {
        Network::build(ModelConfig::default().with_first_layer(kind), 0)
            .expect("default model builds")
            .layer_params()
            .iter()
            .map(|l| l.params)
            .collect()
    };
    let plain = counts(FirstLayerKind::Plain);
    let mut ok = plain == expected;
    let mut detail = format!("cnn {plain:?}");
    for kind in WAVELETS.map(FirstLayerKind::Wavelet).into_iter().chain([FirstLayerKind::Sin]) {
        let c = counts(kind);
        ok &= c[0] == 200 && c[1..] == expected[1..];
        detail += &format!("; {kind} first={}", c[0]);
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    outcome(ok && fast, format!("{detail}; {time}"))
}

fn wavelet_gradients() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for family in WaveletFamily::ALL {
        let r = wavelet_suite(family, 100, 2024, Fault::None).expect("suite runs");
        ok &= r.cases == 100 && r.worst <= WAVELET_TOL;
        parts.push(format!("{family} {:.1e}", r.worst));
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    outcome(ok && fast, format!("worst rel err {} (tol {WAVELET_TOL:.0e}); {time}", parts.join(", ")))
}

fn network_gradients() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let kinds = WAVELETS.map(FirstLayerKind::Wavelet).into_iter().chain([FirstLayerKind::Plain, FirstLayerKind::Sin]);
    for kind in kinds {
        let r = network_suite(kind, 3, Fault::None).expect("suite runs");
        ok &= r.worst <= NETWORK_TOL;
        parts.push(format!("{kind} {:.1e}", r.worst));
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(30));
    outcome(ok && fast, format!("worst rel err {} (tol {NETWORK_TOL:.0e}); {time}", parts.join(", ")))
}

fn cwt_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let family = WAVELETS[case % 3];
        let filters = rng.random_range(1..6);
        let kernel_len = rng.random_range(1..24);
        let len = kernel_len + rng.random_range(0..80);
        let u: Vec<f64> = (0..filters).map(|_| rng.random_range(-4.0..4.0)).collect();
        let s: Vec<f64> = (0..filters).map(|_| rng.random_range(0.2..12.0)).collect();
        let grid = centered_tap_grid(kernel_len);
        let mut layer = CWConvLayer::new(family, u.clone(), s.clone(), grid.clone()).expect("valid layer");
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = layer.forward(&SignalBatch::from_signal(&x)).expect("forward");
        let n = len - kernel_len + 1;
        let mut got = Vec::new();
        let mut want = Vec::new();
        for k in 0..filters {
            got.extend_from_slice(y.row(0, k));
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..kernel_len {
                    acc += dictionary(family, grid[i], u[k], s[k]).expect("s > 0") * x[j + i];
                }
                want.push(acc);
            }
        }
        worst = worst.max(relative_error(&got, &want));
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    outcome(worst <= 1e-12 && fast, format!("10 cases, worst rel err {worst:.1e} (tol 1e-12); {time}"))
}

fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

fn dictionary_identity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_id, mut worst_shift) = (0, 0);
    for n in 0..1000 {
        let family = WaveletFamily::ALL[n % 4];
        // dyadic lattice: every difference and quotient below is exact
        let t_ = rng.random_range(-256i32..256) as f64 / 8.0;
        let u = rng.random_range(-256i32..256) as f64 / 8.0;
        let shift = rng.random_range(-256i32..256) as f64 / 8.0;
        let s = 2f64.powi(rng.random_range(-3..6));
        let d = dictionary(family, t_, u, s).expect("s > 0");
        let direct = (1.0 / s.sqrt()) * family.mother((t_ - u) / s);
        worst_id = worst_id.max(ulps(d, direct));
        let moved = dictionary(family, t_ + shift, u + shift, s).expect("s > 0");
        worst_shift = worst_shift.max(ulps(d, moved));
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    outcome(
        worst_id <= 1 && worst_shift <= 1 && fast,
        format!("1000 tuples, identity {worst_id} ulp, translation {worst_shift} ulp (limit 1); {time}"),
    )
}

fn epoch_budget() -> usize {
    std::env::var("WKN_ACCEPT_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_EPOCHS)
        .clamp(1, MAX_EPOCHS)
}

struct Comparison {
    summaries: Vec<VariantSummary>,
    epochs: usize,
    classes: usize,
    elapsed: Duration,
}

fn comparison() -> &'static Comparison {
    static RESULT: OnceLock<Comparison> = OnceLock::new();
    RESULT.get_or_init(|| {
        let t = Instant::now();
        let spec = SyntheticSpec::default();
        let (train, test) = synthesize(&spec).expect("default spec is valid");
        assert_eq!((train.len(), test.len()), (1600, 400));
        let epochs = epoch_budget();
        let opts = CompareOptions {
            variants: vec![
                FirstLayerKind::Wavelet(WaveletFamily::Laplace),
                FirstLayerKind::Plain,
                FirstLayerKind::Sin,
            ],
            runs: RUNS,
            seed: 0,
            model: ModelConfig {
                num_classes: spec.num_classes(),
                input_length: spec.window_length,
                ..ModelConfig::default()
            },
            train: TrainOptions {
                epochs,
                ..TrainOptions::default()
            },
            parallel: rayon::current_num_threads() > 1,
        };
        Comparison {
            summaries: compare(&train, &test, &opts).expect("comparison runs"),
            epochs,
            classes: spec.num_classes(),
            elapsed: t.elapsed(),
        }
    })
}

fn classification() -> Outcome {
    let c = comparison();
    let [laplace, cnn, sin] = &c.summaries[..] else { unreachable!() };
    let first = laplace.runs[0].test_accuracy;
    let ok = first >= TARGET_ACCURACY && laplace.mean_accuracy() >= cnn.mean_accuracy();
    let fmt = |s: &VariantSummary| {
        format!(
            "{} mean {:.4} var {:.1e} {:?}",
            s.variant,
            s.mean_accuracy(),
            s.accuracy_variance(),
            s.accuracies().iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
        )
    };
    outcome(
        ok,
        format!(
            "{} epochs, R={RUNS}: laplace seed0 {first:.4} (need >= {TARGET_ACCURACY}); {}; {}; {} (reported); {:.0}s",
            c.epochs,
            fmt(laplace),
            fmt(cnn),
            fmt(sin),
            c.elapsed.as_secs_f64()
        ),
    )
}

fn convergence() -> Outcome {
    let c = comparison();
    let target = (c.classes as f64).ln() / 2.0;
    let reach = |s: &VariantSummary| s.epochs_to_loss(target);
    let (laplace, cnn) = (&c.summaries[0], &c.summaries[1]);
    let ok = match (reach(laplace), reach(cnn)) {
        (Some(l), Some(p)) => l <= p,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let show = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
    let mut detail = format!(
        "target loss {target:.4}: laplace epoch {}, cnn epoch {}",
        show(reach(laplace)),
        show(reach(cnn))
    );
    for s in &c.summaries {
        let curve: Vec<String> = s.mean_loss_curve().iter().map(|l| format!("{l:.3}")).collect();
        detail += &format!("\n      {:<8} mean loss [{}]", s.variant.name(), curve.join(", "));
    }
    outcome(ok, detail)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn determinism_and_serialization() -> Outcome {
    let t = Instant::now();
    let spec = SyntheticSpec {
        train_per_class: 24,
        test_per_class: 4,
        window_length: 300,
        ..SyntheticSpec::default()
    };
    let (train, _) = synthesize(&spec).expect("valid spec");
    let cfg = ModelConfig {
        filters: 12,
        num_classes: 4,
        input_length: 300,
        ..ModelConfig::default()
    };
    let opts = TrainOptions {
        epochs: 3,
        batch_size: 16,
        ..TrainOptions::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool").install(|| {
            let mut net = Network::build(cfg, 11).expect("builds");
            let history = wkn::train(&mut net, &train, &TrainOptions { seed: 11, ..opts }).expect("trains");
            (history, net)
        })
    };
    let (h1, n1) = run(1);
    let (h2, n2) = run(1);
    let (h3, n3) = run(3);
    let hist_bits = |h: &[wkn::train::EpochStats]| h.iter().flat_map(|s| [s.loss.to_bits(), s.accuracy.to_bits()]).collect::<Vec<_>>();
    let param_bits = |n: &Network| n.params().iter().flat_map(|(_, p)| bits(p)).collect::<Vec<_>>();
    let same_history = hist_bits(&h1) == hist_bits(&h2) && hist_bits(&h1) == hist_bits(&h3);
    let same_params = param_bits(&n1) == param_bits(&n2) && param_bits(&n1) == param_bits(&n3);

    let mut ckpt_ok = true;
    for kind in WAVELETS.map(FirstLayerKind::Wavelet).into_iter().chain([FirstLayerKind::Plain, FirstLayerKind::Sin]) {
        let mut net = Network::build(cfg.with_first_layer(kind), 3).expect("builds");
        let _ = wkn::train(&mut net, &train, &TrainOptions { epochs: 1, ..opts });
        let bytes = checkpoint::to_bytes(&net).expect("serializes");
        let back = checkpoint::from_bytes(&bytes).expect("parses");
        ckpt_ok &= back.config() == net.config()
            && param_bits(&back) == param_bits(&net)
            && checkpoint::to_bytes(&back).expect("serializes") == bytes;
    }

    let bytes = train.to_bytes().expect("serializes");
    let back = Dataset::from_bytes(&bytes, "copy").expect("parses");
    let data_ok = back.labels() == train.labels()
        && back.class_names() == train.class_names()
        && back.windows().zip(train.windows()).all(|(a, b)| bits(a) == bits(b))
        && back.to_bytes().expect("serializes") == bytes;

    let (fast, time) = within(t.elapsed(), Duration::from_secs(60));
    outcome(
        same_history && same_params && ckpt_ok && data_ok && fast,
        format!(
            "histories identical {same_history} (1 and 3 threads), params identical {same_params}, \
             checkpoints bit-exact {ckpt_ok}, dataset bit-exact {data_ok}; {time}"
        ),
    )
}

fn loss_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_loss = 0.0f64;
    for k in 2..=12 {
        let c = rng.random_range(-50.0..50.0);
        let logits = vec![vec![c; k]; 5];
        let labels: Vec<usize> = (0..5).map(|i| i % k).collect();
        let loss = mean_cross_entropy(&logits, &labels).expect("valid");
        worst_loss = worst_loss.max((loss - (k as f64).ln()).abs());
    }
    // through the network: a zeroed output layer predicts uniformly
    let mut net = Network::build(ModelConfig { num_classes: 7, input_length: 200, filters: 6, ..ModelConfig::default() }, 1)
        .expect("builds");
    let fc = net.output_layer_mut();
    fc.weights.iter_mut().for_each(|w| *w = 0.0);
    fc.bias.iter_mut().for_each(|b| *b = 0.0);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..200).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let net_loss = net.batch_loss(&refs, &[0, 3, 6]).expect("loss");
    worst_loss = worst_loss.max((net_loss - 7f64.ln()).abs());

    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..20);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        worst_sum = worst_sum.max((softmax(&z).iter().sum::<f64>() - 1.0).abs());
    }
    outcome(
        worst_loss <= 1e-9 && worst_sum <= 1e-12,
        format!("|loss - ln K| {worst_loss:.1e} (tol 1e-9), |sum softmax - 1| {worst_sum:.1e} (tol 1e-12)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parameter accounting", parameter_accounting),
        ("wavelet gradients", wavelet_gradients),
        ("network gradients", network_gradients),
        ("CWT oracle equivalence", cwt_oracle),
        ("dictionary identity", dictionary_identity),
        ("desk-scale classification", classification),
        ("convergence speed", convergence),
        ("determinism and serialization", determinism_and_serialization),
        ("loss sanity", loss_sanity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.passed);
        println!("[{}] {}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
