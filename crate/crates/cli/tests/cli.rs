use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wkn::network::FirstLayerKind;
use wkn::train::{evaluate, train, TrainOptions};
use wkn::{checkpoint, Dataset, ModelConfig, Network, WaveletFamily};

fn wkn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wkn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wkn(args);
    assert!(
        out.status.success(),
        "wkn {args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'), "CSV must use LF line endings");
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().expect("header row");
    (header, lines.collect())
}

/// Small dataset: 3 classes, 8+4 windows each, length `len`.
fn small_data(dir: &Path, len: usize) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "gen-data", "--out", s(&out), "--classes", "3", "--train-per-class", "8", "--test-per-class", "4",
        "--window-length", &len.to_string(), "--seed", "5",
    ]);
    out
}

#[test]
fn gen_data_defaults_write_two_files_and_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    ok(&["gen-data", "--out", s(&out)]);
    let train = Dataset::load(out.join("train.wknd")).unwrap();
    let test = Dataset::load(out.join("test.wknd")).unwrap();
    assert_eq!((train.len(), test.len(), train.window_length()), (1600, 400, 1000));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("classes = 4"));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("class.")).count(), 4);
    assert!(out.join("config.txt").exists());
}

#[test]
fn gen_data_is_reproducible_and_honours_class_count() {
    let tmp = TempDir::new().unwrap();
    let args = |dir: &Path, seed: &str| {
        ok(&["gen-data", "--out", s(dir), "--classes", "7", "--train-per-class", "5", "--test-per-class", "3",
            "--window-length", "120", "--seed", seed]);
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    args(&a, "3");
    args(&b, "3");
    args(&c, "4");
    for file in ["train.wknd", "test.wknd"] {
        let bytes = std::fs::read(a.join(file)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(file)).unwrap());
        assert_ne!(bytes, std::fs::read(c.join(file)).unwrap());
        let data = Dataset::load(a.join(file)).unwrap();
        let mut labels = data.labels().to_vec();
        labels.dedup();
        assert_eq!(labels, (0..7).collect::<Vec<_>>());
    }
}

#[test]
fn train_history_matches_library_run() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 150);
    let out = tmp.path().join("m");
    ok(&[
        "train", "--out", s(&out), "--train-data", s(&data.join("train.wknd")), "--epochs", "3", "--filters", "6",
        "--batch-size", "8", "--seed", "2",
    ]);
    let (header, rows) = read_csv(&out.join("history.csv"));
    assert_eq!(header, ["epoch", "train_loss", "train_acc"]);
    assert_eq!(rows.len(), 3);

    let set = Dataset::load(data.join("train.wknd")).unwrap();
    let cfg = ModelConfig { filters: 6, num_classes: 3, input_length: 150, ..ModelConfig::default() };
    let mut net = Network::build(cfg, 2).unwrap();
    let history = train(&mut net, &set, &TrainOptions { epochs: 3, batch_size: 8, seed: 2, ..Default::default() }).unwrap();
    for (row, h) in rows.iter().zip(&history) {
        assert_eq!(row[1].parse::<f64>().unwrap().to_bits(), h.loss.to_bits());
        assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), h.accuracy.to_bits());
    }
    assert_eq!(std::fs::read(out.join("model.wknm")).unwrap(), checkpoint::to_bytes(&net).unwrap());
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("epochs = 3") && echoed.contains("classes = 3"));
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 100);
    let out = tmp.path().join("m");
    ok(&[
        "train", "--out", s(&out), "--train-data", s(&data.join("train.wknd")), "--epochs", "0", "--model", "cnn",
        "--filters", "5", "--seed", "9",
    ]);
    let cfg = ModelConfig {
        first_layer: FirstLayerKind::Plain,
        filters: 5,
        num_classes: 3,
        input_length: 100,
        ..ModelConfig::default()
    };
    let init = checkpoint::to_bytes(&Network::build(cfg, 9).unwrap()).unwrap();
    assert_eq!(std::fs::read(out.join("model.wknm")).unwrap(), init);
    let (_, rows) = read_csv(&out.join("history.csv"));
    assert!(rows.is_empty());
}

#[test]
fn eval_reports_recounted_metrics() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 120);
    let model = tmp.path().join("m");
    ok(&["train", "--out", s(&model), "--train-data", s(&data.join("train.wknd")), "--epochs", "2", "--filters", "4"]);
    let out = tmp.path().join("e");
    let stdout = ok(&[
        "eval", "--out", s(&out), "--checkpoint", s(&model.join("model.wknm")), "--test-data",
        s(&data.join("test.wknd")),
    ]);
    assert!(stdout.starts_with("accuracy "));

    let net = checkpoint::load(model.join("model.wknm")).unwrap();
    let test = Dataset::load(data.join("test.wknd")).unwrap();
    let ev = evaluate(&net, &test).unwrap();
    let (header, rows) = read_csv(&out.join("confusion.csv"));
    assert_eq!(header, ["true", "pred0", "pred1", "pred2"]);
    for (c, row) in rows.iter().enumerate() {
        let counts: Vec<usize> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(counts, ev.confusion[c]);
        // recount from predictions
        for (p, &n) in counts.iter().enumerate() {
            let direct = test.labels().iter().zip(&ev.predictions).filter(|&(&y, &q)| y == c && q == p).count();
            assert_eq!(n, direct);
        }
    }
    let (_, metrics) = read_csv(&out.join("metrics.csv"));
    let all = metrics.last().unwrap();
    assert_eq!(all[0], "all");
    assert_eq!(all[4].parse::<f64>().unwrap(), ev.accuracy);
}

#[test]
fn compare_identical_variants_give_identical_rows() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 100);
    let out = tmp.path().join("c");
    ok(&[
        "compare", "--out", s(&out), "--train-data", s(&data.join("train.wknd")), "--test-data",
        s(&data.join("test.wknd")), "--variants", "laplace,laplace,cnn", "--runs", "1", "--epochs", "2",
        "--filters", "4",
    ]);
    let (header, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(header[..4], ["variant", "runs", "mean_accuracy", "variance"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[1]);
    for v in ["laplace", "cnn"] {
        let (header, curve) = read_csv(&out.join(format!("loss_{v}.csv")));
        assert_eq!(header, ["epoch", "seed0", "mean"]);
        assert_eq!(curve.len(), 2);
    }
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let stdout = ok(&["gradcheck", "--out", s(&out)]);
    let lines: Vec<&str> = stdout.lines().filter(|l| l.ends_with("PASS") || l.ends_with("FAIL")).collect();
    // wavelet and layer suites per family, network suite per model kind
    assert_eq!(lines.len(), 4 + 4 + 5);
    assert!(lines.iter().all(|l| l.ends_with("PASS")));

    let bad = wkn(&["gradcheck", "--out", s(&out), "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn exported_filters_and_feature_maps() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--out", s(&data), "--train-per-class", "1", "--test-per-class", "1"]);
    let cfg = ModelConfig { num_classes: 4, ..ModelConfig::default() };
    let mut net = Network::build(cfg, 0).unwrap();
    for (name, p) in net.params_mut() {
        match name {
            "first.u" => p.fill(0.0),
            "first.s" => p.fill(1.0),
            _ => {}
        }
    }
    let ckpt = tmp.path().join("unit.wknm");
    checkpoint::save(&net, &ckpt).unwrap();

    let out = tmp.path().join("x");
    ok(&["export-filters", "--out", s(&out), "--checkpoint", s(&ckpt)]);
    let (header, rows) = read_csv(&out.join("filters.csv"));
    assert_eq!((header.len(), rows.len()), (1 + 16, 100));
    let grid = wkn::cwconv::centered_tap_grid(16);
    for row in &rows {
        for (v, t) in row[1..].iter().zip(&grid) {
            assert_eq!(v.parse::<f64>().unwrap(), WaveletFamily::Laplace.mother(*t));
        }
    }

    ok(&[
        "export-fmap", "--out", s(&out), "--checkpoint", s(&ckpt), "--test-data", s(&data.join("test.wknd")),
        "--index", "2",
    ]);
    let (header, rows) = read_csv(&out.join("fmap.csv"));
    assert_eq!((header.len(), rows.len()), (1 + 985, 100));
    let test = Dataset::load(data.join("test.wknd")).unwrap();
    let fmap = net.export_feature_map(test.window(2)).unwrap();
    for (row, want) in rows.iter().zip(fmap.iter_rows()) {
        let got: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(got, want);
    }
    let past_end = wkn(&[
        "export-fmap", "--out", s(&out), "--checkpoint", s(&ckpt), "--test-data", s(&data.join("test.wknd")),
        "--index", "4",
    ]);
    assert_eq!(past_end.status.code(), Some(1));
}

#[test]
fn pca_writes_one_point_per_window() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 100);
    let model = tmp.path().join("m");
    ok(&["train", "--out", s(&model), "--train-data", s(&data.join("train.wknd")), "--epochs", "1", "--filters", "4"]);
    let out = tmp.path().join("p");
    ok(&["pca", "--out", s(&out), "--checkpoint", s(&model.join("model.wknm")), "--test-data", s(&data.join("test.wknd"))]);
    let (header, rows) = read_csv(&out.join("pca.csv"));
    assert_eq!(header, ["x", "y", "label"]);
    let test = Dataset::load(data.join("test.wknd")).unwrap();
    assert_eq!(rows.len(), test.len());
    let labels: Vec<usize> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(labels, test.labels());
    let (_, var) = read_csv(&out.join("pca_variance.csv"));
    assert!(var[0][1].parse::<f64>().unwrap() >= var[1][1].parse::<f64>().unwrap());
}

#[test]
fn config_files_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), 100);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!("# tiny run\nmodel = sin\nfilters = 3\nepochs = 1\ntrain_data = {}\n", s(&data.join("train.wknd"))),
    )
    .unwrap();
    let out = tmp.path().join("m");
    // flags override the file
    ok(&["--config", s(&cfg), "train", "--out", s(&out), "--filters", "4"]);
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("model = sin") && echoed.contains("filters = 4"));
    // the echo is itself a valid config
    let again = tmp.path().join("m2");
    ok(&["--config", s(&out.join("config.txt")), "train", "--out", s(&again)]);
    assert_eq!(std::fs::read(out.join("model.wknm")).unwrap(), std::fs::read(again.join("model.wknm")).unwrap());

    std::fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let bad_key = wkn(&["--config", s(&cfg), "train"]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("learning_rate"));

    assert_eq!(wkn(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(wkn(&["train", "--epochs", "lots"]).status.code(), Some(1));
    assert_eq!(wkn(&["eval", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(wkn(&["--help"]).status.code(), Some(0));

    let garbage = tmp.path().join("garbage.wknm");
    std::fs::write(&garbage, b"WKNMxxxx").unwrap();
    let r = wkn(&["eval", "--out", s(&out), "--checkpoint", s(&garbage), "--test-data", s(&data.join("test.wknd"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("offset"));
}
