//! Synthetic vibration data, windowing, normalization, splitting, and the
//! `WKND` dataset file format.
//!
//! Fault classes are trains of damped resonance impulses
//! `A·e^{−β(t−t_j)}·sin(ω(t−t_j))` repeating every `P` samples (with a small
//! integer jitter); the healthy class is a low-frequency sinusoid. Every class
//! gets additive white Gaussian noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"WKND";
pub const DATASET_VERSION: u32 = 1;
/// Bytes before the first record: magic, version, classes, window length, count.
pub const DATASET_HEADER_LEN: u64 = 24;

/// Impulse envelopes are evaluated until they fall below this fraction of
/// their peak; past that point they are below f64 resolution of the peak.
const ENVELOPE_CUTOFF: f64 = 1e-17;

#[derive(Debug, Clone, PartialEq)]
pub enum ClassSignature {
    /// `amplitude·sin(omega·t)`.
    Healthy { amplitude: f64, omega: f64 },
    /// Damped impulses every `period` samples, the first at `offset`.
    Impulses {
        period: usize,
        offset: usize,
        omega: f64,
        damping: f64,
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub signature: ClassSignature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub window_length: usize,
    pub noise_std: f64,
    /// Impulse times move uniformly by up to this many samples either way.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The desk-scale 4-class task: a healthy sinusoid plus three impulse
    /// signatures that differ in repetition period and resonance.
    fn default() -> Self {
        use std::f64::consts::PI;
        let imp = |period, omega, damping| ClassSignature::Impulses {
            period,
            offset: 0,
            omega,
            damping,
            amplitude: 1.0,
        };
        Self {
            classes: vec![
                ClassSpec {
                    name: "healthy".into(),
                    signature: ClassSignature::Healthy {
                        amplitude: 1.0,
                        omega: 2.0 * PI / 100.0,
                    },
                },
                ClassSpec {
                    name: "inner".into(),
                    signature: imp(83, 2.0 * PI * 0.30, 0.08),
                },
                ClassSpec {
                    name: "outer".into(),
                    signature: imp(127, 2.0 * PI * 0.18, 0.06),
                },
                ClassSpec {
                    name: "ball".into(),
                    signature: imp(101, 2.0 * PI * 0.08, 0.04),
                },
            ],
            train_per_class: 400,
            test_per_class: 100,
            window_length: 1000,
            noise_std: 0.4,
            jitter: 2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The default task resized to `classes` classes. The first four keep the
    /// default signatures; extra classes get further impulse signatures with
    /// distinct periods and resonances.
    pub fn with_classes(classes: usize) -> Result<Self> {
        use std::f64::consts::PI;
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        let mut spec = Self::default();
        spec.classes.truncate(classes);
        for j in spec.classes.len()..classes {
            let k = (j - 3) as f64;
            spec.classes.push(ClassSpec {
                name: format!("fault{j}"),
                signature: ClassSignature::Impulses {
                    period: 60 + 17 * (j - 3),
                    offset: 0,
                    omega: 2.0 * PI * (0.05 + (0.0618 * k).fract() * 0.4),
                    damping: 0.05,
                    amplitude: 1.0,
                },
            });
        }
        Ok(spec)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn windows_per_class(&self) -> usize {
        self.train_per_class + self.test_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("synthetic spec needs at least 2 classes"));
        }
        if self.classes.len() > usize::from(u16::MAX) {
            return Err(Error::invalid("too many classes for 16-bit labels"));
        }
        if self.window_length == 0 || self.windows_per_class() == 0 {
            return Err(Error::invalid("window length and per-class counts must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        for (c, class) in self.classes.iter().enumerate() {
            match class.signature {
                ClassSignature::Impulses {
                    period,
                    omega,
                    damping,
                    amplitude,
                    ..
                } => {
                    if period < 2 {
                        return Err(Error::invalid(format!("class {c}: impulse period must be >= 2, got {period}")));
                    }
                    if !(damping > 0.0 && damping.is_finite()) {
                        return Err(Error::invalid(format!("class {c}: damping must be > 0, got {damping}")));
                    }
                    if !omega.is_finite() || !amplitude.is_finite() {
                        return Err(Error::invalid(format!("class {c}: non-finite signature")));
                    }
                }
                ClassSignature::Healthy { amplitude, omega } => {
                    if !omega.is_finite() || !amplitude.is_finite() {
                        return Err(Error::invalid(format!("class {c}: non-finite signature")));
                    }
                }
            }
            for (d, other) in self.classes.iter().enumerate().skip(c + 1) {
                if other.signature == class.signature {
                    return Err(Error::invalid(format!("classes {c} and {d} share a signature")));
                }
            }
        }
        Ok(())
    }

    /// Human-readable description, also hashed into dataset provenance.
    pub fn manifest(&self) -> String {
        let mut m = String::new();
        let _ = writeln!(m, "classes = {}", self.num_classes());
        let _ = writeln!(m, "train_per_class = {}", self.train_per_class);
        let _ = writeln!(m, "test_per_class = {}", self.test_per_class);
        let _ = writeln!(m, "window_length = {}", self.window_length);
        let _ = writeln!(m, "noise_std = {:?}", self.noise_std);
        let _ = writeln!(m, "jitter = {}", self.jitter);
        let _ = writeln!(m, "seed = {}", self.seed);
        for (c, class) in self.classes.iter().enumerate() {
            let sig = match &class.signature {
                ClassSignature::Healthy { amplitude, omega } => {
                    format!("healthy amplitude={amplitude:?} omega={omega:?}")
                }
                ClassSignature::Impulses {
                    period,
                    offset,
                    omega,
                    damping,
                    amplitude,
                } => format!(
                    "impulses period={period} offset={offset} omega={omega:?} damping={damping:?} amplitude={amplitude:?}"
                ),
            };
            let _ = writeln!(m, "class.{c} = {} : {sig}", class.name);
        }
        m
    }

    pub fn provenance(&self) -> String {
        let digest = Sha256::digest(self.manifest().as_bytes());
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("synthetic:{hex}")
    }
}

/// Noise-free damped impulse `A·e^{−β·τ}·sin(ω·τ)` at delay `τ ≥ 0`.
pub fn impulse_response(tau: f64, omega: f64, damping: f64, amplitude: f64) -> f64 {
    amplitude * (-damping * tau).exp() * (omega * tau).sin()
}

/// One long raw signal per class, each `windows_per_class · window_length`
/// samples. Every class draws from its own stream seeded from `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let len = spec.windows_per_class() * spec.window_length;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.num_classes());
    for (c, class) in spec.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(c as u64 + 1);
        let mut signal = vec![0.0; len];
        match class.signature {
            ClassSignature::Healthy { amplitude, omega } => {
                for (t, v) in signal.iter_mut().enumerate() {
                    *v = amplitude * (omega * t as f64).sin();
                }
            }
            ClassSignature::Impulses {
                period,
                offset,
                omega,
                damping,
                amplitude,
            } => {
                let horizon = (-ENVELOPE_CUTOFF.ln() / damping).ceil() as usize;
                let jitter = spec.jitter as i64;
                let mut base = offset;
                while base < len {
                    let shift = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
                    let t0 = (base as i64 + shift).max(0) as usize;
                    let end = (t0 + horizon).min(len);
                    for (t, v) in signal.iter_mut().enumerate().take(end).skip(t0) {
                        *v += impulse_response((t - t0) as f64, omega, damping, amplitude);
                    }
                    base += period;
                }
            }
        }
        if spec.noise_std > 0.0 {
            for v in signal.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        out.push(signal);
    }
    Ok(out)
}

/// Cuts `signal` into consecutive windows of `length` samples starting every
/// `length − overlap` samples; a trailing partial window is dropped.
pub fn window(signal: &[f64], length: usize, overlap: usize) -> Result<Vec<Vec<f64>>> {
    if length == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if overlap >= length {
        return Err(Error::invalid(format!("overlap {overlap} must be smaller than window length {length}")));
    }
    if signal.len() < length {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one window of {length}",
            signal.len()
        )));
    }
    let step = length - overlap;
    let count = (signal.len() - length) / step + 1;
    Ok((0..count).map(|i| signal[i * step..i * step + length].to_vec()).collect())
}

/// Affine map of `[min, max]` onto `[−1, 1]`; a constant window becomes zeros.
pub fn normalize(window: &[f64]) -> Vec<f64> {
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; window.len()];
    }
    let span = hi - lo;
    window
        .iter()
        .map(|&v| {
            // pin the extremes so they land exactly on ±1
            if v == lo {
                -1.0
            } else if v == hi {
                1.0
            } else {
                (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Labeled fixed-length windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<f64>,
    window_length: usize,
    labels: Vec<usize>,
    class_names: Vec<String>,
    provenance: String,
}

impl Dataset {
    pub fn new(
        windows: Vec<f64>,
        window_length: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if window_length == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        if windows.len() != labels.len() * window_length {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} values for {} windows of {window_length}", labels.len() * window_length, labels.len()),
                format!("{} values", windows.len()),
            ));
        }
        if class_names.is_empty() || class_names.len() > usize::from(u16::MAX) + 1 {
            return Err(Error::invalid(format!("unsupported class count {}", class_names.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        Ok(Self {
            windows,
            window_length,
            labels,
            class_names,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.windows[i * self.window_length..(i + 1) * self.window_length]
    }

    pub fn windows(&self) -> impl Iterator<Item = &[f64]> {
        self.windows.chunks_exact(self.window_length)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// A new dataset holding the listed windows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} windows", self.len())));
        }
        let mut windows = Vec::with_capacity(indices.len() * self.window_length);
        for &i in indices {
            windows.extend_from_slice(self.window(i));
        }
        Ok(Self {
            windows,
            window_length: self.window_length,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Encodes the dataset in the `WKND` format. Values are stored as `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(self.num_classes() as u32);
        w.u32(u32::try_from(self.window_length).map_err(|_| Error::invalid("window length exceeds u32"))?);
        w.u64(self.len() as u64);
        for (x, &y) in self.windows().zip(&self.labels) {
            w.u16(y as u16);
            for &v in x {
                w.f32(v as f32);
            }
        }
        w.u32(self.num_classes() as u32);
        for name in &self.class_names {
            w.str(name)?;
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8], provenance: impl Into<String>) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.header(DATASET_MAGIC, DATASET_VERSION)?;
        let at = r.offset();
        let num_classes = r.u32("class count")? as usize;
        if num_classes == 0 {
            return Err(r.error_at(at, "class count is zero"));
        }
        let at = r.offset();
        let window_length = r.u32("window length")? as usize;
        if window_length == 0 {
            return Err(r.error_at(at, "window length is zero"));
        }
        let at = r.offset();
        let count = r.u64("window count")?;
        let record = 2 + 4 * window_length as u64;
        let left = bytes.len() as u64 - r.offset();
        if count.checked_mul(record).is_none_or(|need| need > left) {
            return Err(r.error_at(at, format!("{count} windows of {record} bytes do not fit in the {left} remaining bytes")));
        }
        let count = count as usize;
        let mut windows = Vec::with_capacity(count * window_length);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let y = r.u16("label")? as usize;
            if y >= num_classes {
                return Err(r.error_at(at, format!("label {y} out of range for {num_classes} classes")));
            }
            labels.push(y);
            for _ in 0..window_length {
                windows.push(f64::from(r.f32("window value")?));
            }
        }
        let at = r.offset();
        let names = r.u32("class name count")? as usize;
        if names != num_classes {
            return Err(r.error_at(at, format!("{names} class names for {num_classes} classes")));
        }
        let class_names = (0..names).map(|_| r.str("class name")).collect::<Result<Vec<_>>>()?;
        if !r.at_end() {
            return Err(r.error_at(r.offset(), "trailing bytes after class-name table"));
        }
        Dataset::new(windows, window_length, labels, class_names, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path.display().to_string())
    }

    /// Reads one window per CSV row with the integer label in the last column.
    /// Each window is min-max normalized. A header row is skipped if its
    /// label field is not an integer.
    pub fn import_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, path.display().to_string())
    }

    pub fn parse_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut windows = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for (n, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::invalid(format!("CSV: {e}")))?;
            let line_no = record.position().map_or(n as u64 + 1, |p| p.line());
            if record.iter().all(str::is_empty) {
                continue;
            }
            let fields: Vec<&str> = record.iter().collect();
            let (label, values) = fields.split_last().expect("non-empty record");
            let Ok(label) = label.parse::<usize>() else {
                if n == 0 {
                    continue;
                }
                return Err(Error::invalid(format!("line {line_no}: label {label:?} is not an integer")));
            };
            let row = values
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::invalid(format!("line {line_no}: {e}")))?;
            if row.is_empty() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("line {line_no}: need finite samples before the label")));
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::invalid(format!(
                        "line {line_no}: {} samples, previous rows had {w}",
                        row.len()
                    )))
                }
                _ => {}
            }
            windows.extend(normalize(&row));
            labels.push(label);
        }
        let width = width.ok_or_else(|| Error::invalid("CSV contains no windows"))?;
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
        let names = (0..num_classes).map(|c| format!("class{c}")).collect();
        Dataset::new(windows, width, labels, names, provenance)
    }
}

/// Per-class stratified split: each class's windows are shuffled with `seed`
/// and the first `round(fraction · count)` go to training. Both halves keep
/// the original window order.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid(format!("train fraction must lie in [0, 1], got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let cut = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Generates, windows, and normalizes every class, then splits per class.
///
/// Normalized values are rounded to `f32` so the in-memory dataset equals
/// what [`Dataset::save`] writes and [`Dataset::load`] reads back.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let signals = generate(spec)?;
    let w = spec.window_length;
    let mut windows = Vec::with_capacity(signals.len() * spec.windows_per_class() * w);
    let mut labels = Vec::new();
    for (c, signal) in signals.iter().enumerate() {
        for win in window(signal, w, 0)? {
            windows.extend(normalize(&win).into_iter().map(|v| f64::from(v as f32)));
            labels.push(c);
        }
    }
    let names = spec.classes.iter().map(|c| c.name.clone()).collect();
    let all = Dataset::new(windows, w, labels, names, spec.provenance())?;
    let fraction = spec.train_per_class as f64 / spec.windows_per_class() as f64;
    split(&all, fraction, spec.seed)
}
