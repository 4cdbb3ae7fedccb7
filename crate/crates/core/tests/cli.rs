use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cxr_core::image::GrayImage;
use cxr_core::synthetic::write_pattern_dataset;

fn cxr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("cxr runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(path: &Path, root: &Path, out: &Path, extra_train: &str) {
    let text = format!(
        r#"{{
  "dataset": {{ "root": {root:?} }},
  "model": {{ "input_size": [32, 32], "width_divisor": 8 }},
  "train": {{ "batch_size": 4, "epochs": 1{extra_train} }},
  "output": {{ "dir": {out:?} }}
}}"#,
        root = root.to_str().unwrap(),
        out = out.to_str().unwrap(),
    );
    fs::write(path, text).unwrap();
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn histeq_leaves_ramp_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("ramp.png");
    let ramp = GrayImage::new(256, 1, (0..=255).collect()).unwrap();
    ramp.save_png(&src).unwrap();
    let out = tmp.path().join("out");
    let res = cxr(&[
        "preprocess",
        "--input",
        path_str(&src),
        "--operator",
        "histeq",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(GrayImage::open(out.join("ramp.png")).unwrap(), ramp);
    let log = fs::read_to_string(out.join("preprocess.csv")).unwrap();
    assert!(log.starts_with("source,output,operator\n"), "{log}");
    assert!(log.contains(",histeq"));
}

#[test]
fn threshold_and_ltp_over_a_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pattern_dataset(&data, 2, 32, 1).unwrap();

    let bin = tmp.path().join("bin");
    let res = cxr(&[
        "preprocess",
        "--input",
        path_str(&data),
        "--operator",
        "threshold",
        "--block",
        "7",
        "--c",
        "3",
        "--out",
        path_str(&bin),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let img = GrayImage::open(bin.join("disk").join("000.png")).unwrap();
    assert!(img.data().iter().all(|&v| v == 0 || v == 255));

    let ltp = tmp.path().join("ltp");
    let res = cxr(&[
        "preprocess",
        "--input",
        path_str(&data),
        "--operator",
        "ltp",
        "--t",
        "5",
        "--out",
        path_str(&ltp),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(ltp.join("checker").join("000_upper.png").is_file());
    assert!(ltp.join("checker").join("000_lower.png").is_file());
}

#[test]
fn unknown_operator_lists_valid_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let res = cxr(&[
        "preprocess",
        "--input",
        path_str(tmp.path()),
        "--operator",
        "sharpen",
        "--out",
        "x",
    ]);
    assert!(!res.status.success());
    let err = stderr(&res);
    assert!(err.contains("sharpen"), "{err}");
    for name in [
        "identity",
        "augment",
        "histeq",
        "ltp",
        "threshold",
        "hybrid",
    ] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn invalid_block_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("a.png");
    GrayImage::filled(8, 8, 3).unwrap().save_png(&src).unwrap();
    let res = cxr(&[
        "preprocess",
        "--input",
        path_str(&src),
        "--operator",
        "threshold",
        "--block",
        "4",
        "--out",
        path_str(&tmp.path().join("o")),
    ]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("block"), "{}", stderr(&res));
}

#[test]
fn config_error_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"dataset": {"root": "x"}, "train": {"batch": 3}}"#).unwrap();
    let res = cxr(&["train", "--config", path_str(&cfg)]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("train.batch"), "{}", stderr(&res));
    assert!(!stderr(&res).contains("panicked"));
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pattern_dataset(&data, 4, 32, 2).unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    write_config(&cfg, &data, &run, r#", "lr": 0.0"#);
    let res = cxr(&["train", "--config", path_str(&cfg), "--seed", "3"]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        fs::read(run.join("model_init.ckpt")).unwrap(),
        fs::read(run.join("model.ckpt")).unwrap()
    );
    let effective = fs::read_to_string(run.join("effective_config.json")).unwrap();
    assert!(effective.contains("\"seed\": 3"), "{effective}");
    assert!(effective.contains("\"num_classes\": 4"), "{effective}");
}

#[test]
fn train_then_eval_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pattern_dataset(&data, 5, 32, 4).unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    write_config(&cfg, &data, &run, "");
    let res = cxr(&["train", "--config", path_str(&cfg)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(
        log.starts_with("epoch,mean_loss,train_accuracy,val_accuracy\n"),
        "{log}"
    );
    let manifest = fs::read_to_string(run.join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("path,class,split\n"), "{manifest}");

    let res = cxr(&["eval", "--config", path_str(&cfg), "--split", "train"]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(String::from_utf8_lossy(&res.stdout).contains("accuracy"));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("class,support,recall,precision,f1,auc"));
    assert_eq!(metrics.lines().count(), 1 + 4 + 1, "{metrics}");
    assert!(fs::read_to_string(run.join("roc.csv"))
        .unwrap()
        .starts_with("class,fpr,tpr\n"));
    let svg = fs::read_to_string(run.join("roc_disk.svg")).unwrap();
    assert!(
        svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"),
        "{svg}"
    );
    assert!(!svg.contains("href") && !svg.contains("<script"));
}

#[test]
fn eval_rejects_class_count_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pattern_dataset(&data, 4, 32, 5).unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    write_config(&cfg, &data, &run, "");
    assert!(cxr(&["train", "--config", path_str(&cfg)]).status.success());

    fs::remove_dir_all(data.join("vstripes")).unwrap();
    fs::remove_file(run.join("manifest.csv")).unwrap();
    let res = cxr(&["eval", "--config", path_str(&cfg)]);
    assert!(!res.status.success());
    let err = stderr(&res);
    assert!(err.contains("4 classes") && err.contains("3"), "{err}");
}

#[test]
fn split_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pattern_dataset(&data, 10, 32, 6).unwrap();
    let cfg = tmp.path().join("cfg.json");
    let run = tmp.path().join("run");
    write_config(&cfg, &data, &run, "");
    let res = cxr(&["split", "--config", path_str(&cfg)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(run.join("manifest.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 40);
    for split in ["train", "val", "test"] {
        let n = csv
            .lines()
            .filter(|l| l.ends_with(&format!(",{split}")))
            .count();
        assert_eq!(n, if split == "train" { 32 } else { 4 }, "{split}");
    }
}
