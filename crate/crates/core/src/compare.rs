//! Repeated seeded training of several model variants on the same data.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::Result;
use crate::network::{FirstLayerKind, ModelConfig, Network};
use crate::train::{evaluate, train, EpochStats, TrainOptions};

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub variants: Vec<FirstLayerKind>,
    /// Runs per variant; run `r` uses seed `seed + r` for both the model
    /// initialization and the batch shuffles.
    pub runs: usize,
    pub seed: u64,
    /// Template for every variant; `first_layer` is overwritten.
    pub model: ModelConfig,
    /// Template for every run; `seed` is overwritten.
    pub train: TrainOptions,
    /// Train independent runs on the rayon pool.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub history: Vec<EpochStats>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: FirstLayerKind,
    pub runs: Vec<RunResult>,
}

impl VariantSummary {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_accuracy).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracies())
    }

    /// Population variance of the per-run test accuracies.
    pub fn accuracy_variance(&self) -> f64 {
        let acc = self.accuracies();
        let m = mean(&acc);
        mean(&acc.iter().map(|a| (a - m) * (a - m)).collect::<Vec<_>>())
    }

    /// Per-epoch training loss averaged over runs.
    pub fn mean_loss_curve(&self) -> Vec<f64> {
        let epochs = self.runs.iter().map(|r| r.history.len()).min().unwrap_or(0);
        (0..epochs)
            .map(|e| mean(&self.runs.iter().map(|r| r.history[e].loss).collect::<Vec<_>>()))
            .collect()
    }

    /// First epoch (1-based) at which the mean loss curve is at or below
    /// `threshold`.
    pub fn epochs_to_loss(&self, threshold: f64) -> Option<usize> {
        first_at_or_below(&self.mean_loss_curve(), threshold)
    }
}

pub fn first_at_or_below(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&l| l <= threshold).map(|i| i + 1)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains one variant with one seed and scores it on `test`.
pub fn single_run(
    kind: FirstLayerKind,
    seed: u64,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &CompareOptions,
) -> Result<RunResult> {
    let mut net = Network::build(opts.model.with_first_layer(kind), seed)?;
    let train_opts = TrainOptions { seed, ..opts.train };
    let history = train(&mut net, train_set, &train_opts)?;
    let test_accuracy = evaluate(&net, test_set)?.accuracy;
    Ok(RunResult {
        seed,
        history,
        test_accuracy,
    })
}

/// Runs every variant `opts.runs` times. Results are ordered by variant and
/// then seed regardless of scheduling, and each run is itself deterministic.
pub fn compare(train_set: &Dataset, test_set: &Dataset, opts: &CompareOptions) -> Result<Vec<VariantSummary>> {
    let jobs: Vec<(usize, u64)> = (0..opts.variants.len())
        .flat_map(|v| (0..opts.runs as u64).map(move |r| (v, r)))
        .collect();
    let run = |&(v, r): &(usize, u64)| single_run(opts.variants[v], opts.seed + r, train_set, test_set, opts);
    let results: Vec<RunResult> = if opts.parallel {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let mut results = results.into_iter();
    Ok(opts
        .variants
        .iter()
        .map(|&variant| VariantSummary {
            variant,
            runs: results.by_ref().take(opts.runs).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(acc: &[f64], losses: &[&[f64]]) -> VariantSummary {
        VariantSummary {
            variant: FirstLayerKind::Plain,
            runs: acc
                .iter()
                .zip(losses)
                .enumerate()
                .map(|(i, (&a, l))| RunResult {
                    seed: i as u64,
                    history: l
                        .iter()
                        .enumerate()
                        .map(|(e, &loss)| EpochStats {
                            epoch: e + 1,
                            loss,
                            accuracy: 0.0,
                        })
                        .collect(),
                    test_accuracy: a,
                })
                .collect(),
        }
    }

    #[test]
    fn statistics() {
        let s = summary(&[0.9, 1.0, 0.8], &[&[1.0, 0.5], &[1.2, 0.3], &[0.8, 0.1]]);
        assert!((s.mean_accuracy() - 0.9).abs() < 1e-15);
        assert!((s.accuracy_variance() - 0.02 / 3.0).abs() < 1e-15);
        assert_eq!(s.mean_loss_curve().len(), 2);
        assert_eq!(s.epochs_to_loss(0.5), Some(2));
        assert_eq!(s.epochs_to_loss(1.0), Some(1));
        assert_eq!(s.epochs_to_loss(0.1), None);
    }
}
