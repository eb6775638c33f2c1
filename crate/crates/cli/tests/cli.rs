use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lensless_core::mnist::{write_idx_images, write_idx_labels};
use lensless_core::GrayImage;

fn lensless(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lensless"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("LENSLESS_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A stand-in MNIST: each class is a bar at its own position and angle.
fn fake_mnist(dir: &Path, n_train: usize, n_test: usize) {
    fs::create_dir_all(dir).unwrap();
    let make = |n: usize, offset: usize| {
        let mut imgs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = ((i + offset) % 3) as u8;
            let jitter = ((i * 7 + offset) % 3) as f64 - 1.0;
            imgs.push(GrayImage::from_clamped(
                28,
                28,
                (0..784).map(|p| {
                    let (x, y) = ((p % 28) as f64, (p / 28) as f64);
                    let on = match c {
                        0 => (x - 9.0 - jitter).abs() < 2.0 && y > 4.0 && y < 24.0,
                        1 => (y - 14.0 - jitter).abs() < 2.0 && x > 4.0 && x < 24.0,
                        _ => (x - y - jitter).abs() < 2.5 && x > 4.0 && x < 24.0,
                    };
                    if on { 1.0 } else { 0.0 }
                }),
            ));
            labels.push(c);
        }
        (imgs, labels)
    };
    let (a, b) = make(n_train, 0);
    fs::write(dir.join("train-images-idx3-ubyte"), write_idx_images(&a).unwrap()).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), write_idx_labels(&b)).unwrap();
    let (a, b) = make(n_test, 1);
    fs::write(dir.join("t10k-images-idx3-ubyte"), write_idx_images(&a).unwrap()).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), write_idx_labels(&b)).unwrap();
}

#[test]
fn unknown_config_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "vocab.kk = 3\n").unwrap();
    let out = lensless(&["--config", "bad.cfg", "experiment"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab.kk"));
}

#[test]
fn invalid_value_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "experiment.val_fraction = 1.5\n").unwrap();
    let out = lensless(&["--config", "bad.cfg", "experiment"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "data.dir = nowhere\n").unwrap();
    let out = lensless(&["--config", "c.cfg", "simulate"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn usage_error_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = lensless(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn staged_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fake_mnist(&d.join("mnist"), 90, 60);
    fs::write(
        d.join("c.cfg"),
        "data.dir = mnist\nvocab.k = 12\nvocab.subset = 60\nclassifiers.knn_k = 3\n",
    )
    .unwrap();
    let cfg = ["--config", "c.cfg"];
    let run = |extra: &[&str]| lensless(&[&cfg[..], extra].concat(), d);

    ok(&run(&["--out", "train_frames", "simulate", "--split", "train", "--count", "90"]));
    ok(&run(&["--out", "test_frames", "simulate", "--split", "test", "--count", "60"]));
    assert_eq!(fs::read_dir(d.join("train_frames")).unwrap().count(), 91);

    ok(&run(&["--out", "feats", "features", "--frames", "train_frames"]));
    ok(&run(&["--out", "voc", "vocab", "--features", "feats"]));
    assert!(d.join("voc/vocabulary.bin").is_file());

    ok(&run(&["--out", "model", "train", "--frames", "train_frames", "--vocab", "voc/vocabulary.bin"]));
    let out = run(&["--out", "eval", "eval", "--bundle", "model", "--frames", "test_frames"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let acc: f64 = text.split("accuracy ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(acc > 0.8, "{text}");
    let preds = fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 61);

    // a damaged bundle is reported, not trusted
    fs::write(d.join("model/manifest"), "format_version=999\n").unwrap();
    let out = run(&["--out", "eval2", "eval", "--bundle", "model", "--frames", "test_frames"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn experiment_is_reproducible_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fake_mnist(&d.join("mnist"), 150, 60);
    fs::write(
        d.join("c.cfg"),
        "data.dir = mnist\n\
         vocab.k = 10\nvocab.subset = 40\n\
         experiment.tasks = 0-1; 0-2\n\
         experiment.train_sizes = 20, 40\n\
         experiment.n_test = 30\n\
         experiment.n_repeats = 2\n",
    )
    .unwrap();
    ok(&lensless(&["--config", "c.cfg", "--out", "a", "experiment"], d));
    ok(&lensless(&["--config", "c.cfg", "--out", "b", "experiment"], d));
    let a = fs::read(d.join("a/results.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/results.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 1 + 2 * 2 * 2);
    assert!(fs::read_to_string(d.join("a/results.svg")).unwrap().contains("<polyline"));

    // the recorded config reproduces the run
    ok(&lensless(&["--config", "a/config.used", "--out", "c", "experiment"], d));
    assert_eq!(a, fs::read(d.join("c/results.csv")).unwrap());

    ok(&lensless(&["--out", "p", "plot", "--results", "a/results.csv"], d));
    let svg = fs::read_to_string(d.join("p/results.svg")).unwrap();
    assert_eq!(svg.matches("class=\"curve\"").count(), 2);

    // a different seed changes the splits
    ok(&lensless(&["--config", "c.cfg", "--seed", "7", "--out", "s", "experiment"], d));
    assert_ne!(a, fs::read(d.join("s/results.csv")).unwrap());
}
