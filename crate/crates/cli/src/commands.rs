use anyhow::{Context, Result};
use wkn::checkpoint;
use wkn::compare::{compare, CompareOptions};
use wkn::data::synthesize;
use wkn::gradcheck::{run_all, Fault};
use wkn::pca::project_2d;
use wkn::train::train_with;
use wkn::{evaluate, Dataset, ModelConfig, Network, SyntheticSpec, TrainOptions};

use crate::config::RunConfig;
use crate::output::{f, numbered, OutDir};
use crate::{Failure, Usage};

/// Class count and window length come from the training data; the echoed
/// config records them.
fn with_data_shape(cfg: &RunConfig, data: &Dataset) -> RunConfig {
    RunConfig {
        classes: data.num_classes(),
        window_length: data.window_length(),
        ..cfg.clone()
    }
}

fn prepare(cfg: &RunConfig) -> Result<OutDir> {
    let out = OutDir::create(&cfg.out)?;
    out.write_text("config.txt", &cfg.to_text())?;
    Ok(out)
}

fn load_data(cfg: &RunConfig, key: &str) -> Result<Dataset> {
    let path = match key {
        "train_data" => cfg.require(&cfg.train_data, key)?,
        _ => cfg.require(&cfg.test_data, key)?,
    };
    Dataset::load(path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_model(cfg: &RunConfig) -> Result<Network> {
    let path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn class_name(data: &Dataset, c: usize) -> String {
    data.class_names().get(c).cloned().unwrap_or_else(|| format!("class{c}"))
}

fn model_for(cfg: &RunConfig, data: &Dataset) -> ModelConfig {
    ModelConfig {
        first_layer: cfg.first_layer(),
        filters: cfg.filters,
        kernel_len: cfg.kernel_len,
        num_classes: data.num_classes(),
        input_length: data.window_length(),
    }
}

fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer(),
        seed: cfg.seed,
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let spec = SyntheticSpec {
        train_per_class: cfg.train_per_class,
        test_per_class: cfg.test_per_class,
        window_length: cfg.window_length,
        noise_std: cfg.noise_std,
        jitter: cfg.jitter,
        seed: cfg.seed,
        ..SyntheticSpec::with_classes(cfg.classes)?
    };
    let (train, test) = synthesize(&spec)?;
    let out = prepare(cfg)?;
    train.save(out.path("train.wknd"))?;
    test.save(out.path("test.wknd"))?;
    out.write_text("manifest.txt", &spec.manifest())?;
    println!(
        "wrote {} training and {} test windows ({} classes, length {}) to {}",
        train.len(),
        test.len(),
        spec.num_classes(),
        spec.window_length,
        cfg.out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg, "train_data")?;
    let mut net = Network::build(model_for(cfg, &data), cfg.seed)?;
    let out = prepare(&with_data_shape(cfg, &data))?;
    let history = train_with(&mut net, &data, &train_options(cfg), |s, _| {
        println!("epoch {:>3}  loss {:.6}  acc {:.4}", s.epoch, s.loss, s.accuracy);
    })?;
    let mut csv = out.csv("history.csv", &["epoch", "train_loss", "train_acc"])?;
    for s in &history {
        csv.row(&[s.epoch.to_string(), f(s.loss), f(s.accuracy)])?;
    }
    csv.finish()?;
    checkpoint::save(&net, out.path("model.wknm"))?;
    if cfg.test_data.is_some() {
        let test = load_data(cfg, "test_data")?;
        println!("test accuracy {:.4}", evaluate(&net, &test)?.accuracy);
    }
    println!("wrote {}", out.path("model.wknm").display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let net = load_model(cfg)?;
    let data = load_data(cfg, "test_data")?;
    let ev = evaluate(&net, &data)?;
    let out = prepare(cfg)?;
    let k = ev.confusion.len();

    println!("accuracy {:.4} ({} windows)", ev.accuracy, data.len());
    let mut metrics = out.csv("metrics.csv", &["class", "name", "count", "correct", "accuracy"])?;
    for c in 0..k {
        let count: usize = ev.confusion[c].iter().sum();
        let acc = ev.per_class[c].map(f).unwrap_or_default();
        println!("  {:<10} {:>6}  {}", class_name(&data, c), count, if acc.is_empty() { "-" } else { &acc });
        metrics.row(&[c.to_string(), class_name(&data, c), count.to_string(), ev.confusion[c][c].to_string(), acc])?;
    }
    let correct: usize = (0..k).map(|c| ev.confusion[c][c]).sum();
    metrics.row(&["all".into(), "all".into(), data.len().to_string(), correct.to_string(), f(ev.accuracy)])?;
    metrics.finish()?;

    let mut header = vec!["true".to_string()];
    header.extend(numbered("pred", k));
    let mut confusion = out.csv("confusion.csv", &header)?;
    for (c, row) in ev.confusion.iter().enumerate() {
        let mut fields = vec![c.to_string()];
        fields.extend(row.iter().map(|n| n.to_string()));
        confusion.row(&fields)?;
    }
    confusion.finish()?;
    Ok(())
}

pub fn compare_cmd(cfg: &RunConfig) -> Result<()> {
    let train = load_data(cfg, "train_data")?;
    let test = load_data(cfg, "test_data")?;
    if cfg.variants.is_empty() || cfg.runs == 0 {
        return Err(Usage("compare needs at least one variant and one run".into()).into());
    }
    let opts = CompareOptions {
        variants: cfg.variants.clone(),
        runs: cfg.runs,
        seed: cfg.seed,
        model: model_for(cfg, &train),
        train: train_options(cfg),
        parallel: rayon::current_num_threads() > 1,
    };
    let out = prepare(&with_data_shape(cfg, &train))?;
    let summaries = compare(&train, &test, &opts)?;
    let target = (train.num_classes() as f64).ln() / 2.0;

    let mut summary = out.csv(
        "summary.csv",
        &["variant", "runs", "mean_accuracy", "variance", "epochs_to_target_loss"],
    )?;
    let mut runs = out.csv("runs.csv", &["variant", "seed", "test_accuracy", "final_loss"])?;
    println!("{:<8} {:>5} {:>10} {:>12} {:>8}", "variant", "runs", "mean_acc", "variance", "epochs");
    for s in &summaries {
        let name = s.variant.name();
        let reach = s.epochs_to_loss(target).map(|e| e.to_string()).unwrap_or_default();
        println!(
            "{name:<8} {:>5} {:>10.4} {:>12.3e} {:>8}",
            s.runs.len(),
            s.mean_accuracy(),
            s.accuracy_variance(),
            if reach.is_empty() { "-" } else { &reach }
        );
        summary.row(&[name.into(), s.runs.len().to_string(), f(s.mean_accuracy()), f(s.accuracy_variance()), reach])?;
        for r in &s.runs {
            let last = r.history.last().map(|h| f(h.loss)).unwrap_or_default();
            runs.row(&[name.into(), r.seed.to_string(), f(r.test_accuracy), last])?;
        }

        let mut header = vec!["epoch".to_string()];
        header.extend(s.runs.iter().map(|r| format!("seed{}", r.seed)));
        header.push("mean".into());
        let mut curve = out.csv(&format!("loss_{name}.csv"), &header)?;
        for (e, mean) in s.mean_loss_curve().iter().enumerate() {
            let mut row = vec![(e + 1).to_string()];
            row.extend(s.runs.iter().map(|r| f(r.history[e].loss)));
            row.push(f(*mean));
            curve.row(&row)?;
        }
        curve.finish()?;
    }
    summary.finish()?;
    runs.finish()?;
    println!("target loss ln(K)/2 = {target:.4}; results in {}", cfg.out.display());
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, inject_fault: bool) -> Result<()> {
    let fault = if inject_fault { Fault::FlipScaleGrad } else { Fault::None };
    let reports = run_all(cfg.seed, fault)?;
    let out = prepare(cfg)?;
    let mut csv = out.csv("gradcheck.csv", &["suite", "subject", "cases", "worst_rel_error", "tolerance", "passed"])?;
    for r in &reports {
        println!("{r}");
        csv.row(&[
            r.suite.to_string(),
            r.subject.clone(),
            r.cases.to_string(),
            f(r.worst),
            f(r.tolerance),
            r.passed().to_string(),
        ])?;
    }
    csv.finish()?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure(format!("{failed} of {} gradient suites failed", reports.len())).into());
    }
    println!("all {} suites passed", reports.len());
    Ok(())
}

fn write_rows(out: &OutDir, name: &str, prefix: &str, m: &wkn::Matrix) -> Result<()> {
    let mut header = vec!["filter".to_string()];
    header.extend(numbered(prefix, m.cols()));
    let mut csv = out.csv(name, &header)?;
    for (i, row) in m.iter_rows().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(row.iter().map(|&v| f(v)));
        csv.row(&fields)?;
    }
    let path = csv.finish()?;
    println!("wrote {}x{} values to {}", m.rows(), m.cols(), path.display());
    Ok(())
}

pub fn export_filters(cfg: &RunConfig) -> Result<()> {
    let net = load_model(cfg)?;
    let bank = net.export_first_layer()?;
    let out = prepare(cfg)?;
    write_rows(&out, "filters.csv", "tap", &bank)
}

pub fn export_fmap(cfg: &RunConfig) -> Result<()> {
    let net = load_model(cfg)?;
    let data = load_data(cfg, "test_data")?;
    if cfg.index >= data.len() {
        return Err(Usage(format!("index {} out of range for {} windows", cfg.index, data.len())).into());
    }
    let fmap = net.export_feature_map(data.window(cfg.index))?;
    let out = prepare(cfg)?;
    write_rows(&out, "fmap.csv", "x", &fmap)
}

pub fn pca(cfg: &RunConfig) -> Result<()> {
    let net = load_model(cfg)?;
    let data = load_data(cfg, "test_data")?;
    let xs: Vec<&[f64]> = data.windows().collect();
    let features: Vec<Vec<f64>> = net.infer(&xs)?.into_iter().map(|r| r.features).collect();
    let p = project_2d(&features)?;
    let out = prepare(cfg)?;
    let mut csv = out.csv("pca.csv", &["x", "y", "label"])?;
    for (pt, &label) in p.points.iter().zip(data.labels()) {
        csv.row(&[f(pt[0]), f(pt[1]), label.to_string()])?;
    }
    let path = csv.finish()?;
    let mut var = out.csv("pca_variance.csv", &["component", "variance"])?;
    for (i, v) in p.explained.iter().enumerate() {
        var.row(&[(i + 1).to_string(), f(*v)])?;
    }
    var.finish()?;
    println!(
        "projected {} feature vectors; component variances {:.4e}, {:.4e}; wrote {}",
        features.len(),
        p.explained[0],
        p.explained[1],
        path.display()
    );
    Ok(())
}
