//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wkn::network::FirstLayerKind;
use wkn::train::{AdamConfig, Optimizer};
use wkn::wavelets::WaveletFamily;
use wkn::ModelConfig;

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Wavelet,
    Cnn,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub family: WaveletFamily,
    pub filters: usize,
    pub kernel_len: usize,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: usize,
    pub runs: usize,
    pub variants: Vec<FirstLayerKind>,
    pub index: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub window_length: usize,
    pub noise_std: f64,
    pub jitter: usize,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "model",
    "family",
    "filters",
    "kernel_len",
    "classes",
    "epochs",
    "batch_size",
    "lr",
    "optimizer",
    "seed",
    "train_data",
    "test_data",
    "checkpoint",
    "out",
    "threads",
    "runs",
    "variants",
    "index",
    "train_per_class",
    "test_per_class",
    "window_length",
    "noise_std",
    "jitter",
];

impl Default for RunConfig {
    fn default() -> Self {
        let synth = wkn::SyntheticSpec::default();
        let model = ModelConfig::default();
        Self {
            model: ModelKind::Wavelet,
            family: WaveletFamily::Laplace,
            filters: model.filters,
            kernel_len: model.kernel_len,
            classes: synth.num_classes(),
            epochs: 50,
            batch_size: 64,
            lr: AdamConfig::default().lr,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            train_data: None,
            test_data: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            threads: 0,
            runs: 5,
            variants: ["morlet", "mexhat", "laplace", "cnn", "sin"]
                .iter()
                .map(|v| v.parse().expect("built-in variant"))
                .collect(),
            index: 0,
            train_per_class: synth.train_per_class,
            test_per_class: synth.test_per_class,
            window_length: synth.window_length,
            noise_std: synth.noise_std,
            jitter: synth.jitter,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, Usage>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Usage> {
        let value = value.trim();
        match key {
            "model" => {
                self.model = match value.to_ascii_lowercase().as_str() {
                    "wavelet" | "wkn" => ModelKind::Wavelet,
                    "cnn" | "plain" => ModelKind::Cnn,
                    "sin" => ModelKind::Sin,
                    _ => return Err(Usage(format!("model: expected wavelet, cnn or sin, got {value:?}"))),
                }
            }
            "family" => {
                let family: WaveletFamily = value.parse().map_err(|e| Usage(format!("family: {e}")))?;
                if family == WaveletFamily::Sin {
                    return Err(Usage("family: use model = sin for sin atoms".into()));
                }
                self.family = family;
            }
            "filters" => self.filters = num(key, value)?,
            "kernel_len" => self.kernel_len = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "optimizer" => {
                self.optimizer = match value.to_ascii_lowercase().as_str() {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Usage(format!("optimizer: expected adam or sgd, got {value:?}"))),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "train_data" => self.train_data = path(value),
            "test_data" => self.test_data = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "out" => {
                self.out = path(value).ok_or_else(|| Usage("out: must not be empty".into()))?;
            }
            "threads" => self.threads = num(key, value)?,
            "runs" => self.runs = num(key, value)?,
            "variants" => {
                self.variants = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| v.parse::<FirstLayerKind>().map_err(|e| Usage(format!("variants: {e}"))))
                    .collect::<Result<_, _>>()?;
            }
            "index" => self.index = num(key, value)?,
            "train_per_class" => self.train_per_class = num(key, value)?,
            "test_per_class" => self.test_per_class = num(key, value)?,
            "window_length" => self.window_length = num(key, value)?,
            "noise_std" => self.noise_std = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            _ => return Err(Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "model" => match self.model {
                ModelKind::Wavelet => "wavelet",
                ModelKind::Cnn => "cnn",
                ModelKind::Sin => "sin",
            }
            .into(),
            "family" => self.family.name().into(),
            "filters" => self.filters.to_string(),
            "kernel_len" => self.kernel_len.to_string(),
            "classes" => self.classes.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => format!("{:?}", self.lr),
            "optimizer" => match self.optimizer {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
            "seed" => self.seed.to_string(),
            "train_data" => show(&self.train_data),
            "test_data" => show(&self.test_data),
            "checkpoint" => show(&self.checkpoint),
            "out" => self.out.display().to_string(),
            "threads" => self.threads.to_string(),
            "runs" => self.runs.to_string(),
            "variants" => self.variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","),
            "index" => self.index.to_string(),
            "train_per_class" => self.train_per_class.to_string(),
            "test_per_class" => self.test_per_class.to_string(),
            "window_length" => self.window_length.to_string(),
            "noise_std" => format!("{:?}", self.noise_std),
            "jitter" => self.jitter.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), Usage> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(key.trim(), value).map_err(|e| Usage(format!("{origin}:{}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, file: &Path) -> Result<(), Usage> {
        let text = std::fs::read_to_string(file)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", file.display())))?;
        self.apply_text(&text, &file.display().to_string())
    }

    /// The effective configuration in the same format it is read from.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    pub fn first_layer(&self) -> FirstLayerKind {
        match self.model {
            ModelKind::Wavelet => FirstLayerKind::Wavelet(self.family),
            ModelKind::Cnn => FirstLayerKind::Plain,
            ModelKind::Sin => FirstLayerKind::Sin,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            }),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Usage> {
        value
            .as_deref()
            .ok_or_else(|| Usage(format!("`{key}` is required (set it in the config or pass --{})", key.replace('_', "-"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("family = morlet\nlr=0.01 # faster\n\nvariants = laplace, cnn\ntrain_data = a/b.wknd\n", "t")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.first_layer(), FirstLayerKind::Wavelet(WaveletFamily::Morlet));
        assert_eq!(back.variants.len(), 2);
    }

    #[test]
    fn every_key_is_gettable_and_settable() {
        let cfg = RunConfig::default();
        for key in KEYS {
            let mut c = RunConfig::default();
            c.set(key, &cfg.get(key)).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("colour = blue", "t").unwrap_err().0.contains("unknown config key"));
        assert!(cfg.apply_text("epochs = many", "t").unwrap_err().0.contains("t:1"));
        assert!(cfg.apply_text("just words", "t").is_err());
        assert!(cfg.set("family", "sin").is_err());
        assert!(cfg.set("variants", "laplace,bogus").is_err());
    }
}
