//! `wkn`: generate data, train and compare wavelet-kernel networks, check
//! gradients and export filters, feature maps and PCA embeddings as CSV.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Bad flags, config or inputs; exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

/// A check that ran and failed; exit code 2.
#[derive(Debug)]
pub struct Failure(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
impl std::error::Error for Usage {}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
impl std::error::Error for Failure {}

#[derive(Parser)]
#[command(name = "wkn", version, about = "Wavelet kernel networks for 1-D signal classification")]
struct Cli {
    /// key = value config file; flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize train/test datasets and a manifest.
    GenData,
    /// Train one model; writes a checkpoint and per-epoch history.
    Train,
    /// Score a checkpoint on a dataset.
    Eval,
    /// Train every variant several times and summarize.
    Compare,
    /// Finite-difference gradient suites.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// First-layer filters as CSV, one row per filter.
    ExportFilters,
    /// First-layer feature map of one window as CSV.
    ExportFmap,
    /// 2-D PCA of penultimate features.
    Pca,
}

/// One flag per config key.
#[derive(Args, Default)]
struct Overrides {
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Seed for data synthesis, initialization and shuffling.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<String>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<String>,
    /// First layer: wavelet, cnn or sin.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Wavelet family: laplace, morlet or mexhat.
    #[arg(long, global = true)]
    family: Option<String>,
    #[arg(long, global = true)]
    filters: Option<String>,
    #[arg(long, global = true)]
    kernel_len: Option<String>,
    /// Classes to synthesize (gen-data).
    #[arg(long, global = true)]
    classes: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    /// adam or sgd.
    #[arg(long, global = true)]
    optimizer: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    train_data: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    test_data: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<String>,
    /// Runs per variant (compare).
    #[arg(long, global = true)]
    runs: Option<String>,
    /// Comma-separated variants (compare).
    #[arg(long, global = true)]
    variants: Option<String>,
    /// Window index (export-fmap).
    #[arg(long, global = true)]
    index: Option<String>,
    #[arg(long, global = true)]
    train_per_class: Option<String>,
    #[arg(long, global = true)]
    test_per_class: Option<String>,
    #[arg(long, global = true)]
    window_length: Option<String>,
    #[arg(long, global = true)]
    noise_std: Option<String>,
    #[arg(long, global = true)]
    jitter: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 23] {
        [
            ("out", &self.out),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("model", &self.model),
            ("family", &self.family),
            ("filters", &self.filters),
            ("kernel_len", &self.kernel_len),
            ("classes", &self.classes),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("optimizer", &self.optimizer),
            ("train_data", &self.train_data),
            ("test_data", &self.test_data),
            ("checkpoint", &self.checkpoint),
            ("runs", &self.runs),
            ("variants", &self.variants),
            ("index", &self.index),
            ("train_per_class", &self.train_per_class),
            ("test_per_class", &self.test_per_class),
            ("window_length", &self.window_length),
            ("noise_std", &self.noise_std),
            ("jitter", &self.jitter),
        ]
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Usage> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in cli.keys.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| Usage(format!("--{}: {}", key.replace('_', "-"), e.0)))?;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = effective_config(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Compare => commands::compare_cmd(&cfg),
        Command::Gradcheck { inject_fault } => commands::gradcheck(&cfg, *inject_fault),
        Command::ExportFilters => commands::export_filters(&cfg),
        Command::ExportFmap => commands::export_fmap(&cfg),
        Command::Pca => commands::pca(&cfg),
    }
}

/// 1 for bad input, 2 for anything that failed while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<Failure>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<wkn::Error>() {
            return if e.is_validation() || matches!(e, wkn::Error::Format { .. }) { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
