//! End-to-end runs of the `mgcgru` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgcgru::checkpoint;
use mgcgru::pipeline::{Experiment, InputPaths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn mgcgru(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgcgru")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mgcgru(args);
    assert!(out.status.success(), "mgcgru {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_fixture(dir: &Path) -> PathBuf {
    let fx = dir.join("fx");
    ok(&["synth", "--out", s(&fx), "--n-days", "260", "--n-stocks", "12", "--n-industries", "3"]);
    fx
}

/// Parses `header\nrow` CSV output into (column, value) pairs.
fn csv_row(path: &Path) -> Vec<(String, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let values = lines.next().unwrap().split(',').map(|v| v.parse().unwrap());
    header.into_iter().zip(values).collect()
}

fn column(row: &[(String, f64)], name: &str) -> f64 {
    row.iter().find(|(k, _)| k == name).unwrap().1
}

fn dense(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn commands_compose_from_synth_to_evaluate() {
    let tmp = TempDir::new().unwrap();
    let fx = small_fixture(tmp.path());
    let graphs = tmp.path().join("graphs");
    let report = ok(&["build-graphs", "--fixture", s(&fx), "--out", s(&graphs)]);
    assert!(report.contains("shareholding") && report.contains("topicality"));
    for name in ["adjacency_S.csv", "laplacian_I.csv", "density.csv", "manifest.json"] {
        assert!(graphs.join(name).exists(), "{name}");
    }

    let run = tmp.path().join("run");
    ok(&["train", "--fixture", s(&fx), "--out", s(&run), "--mode", "multi", "--epochs", "3", "--lag", "4"]);
    for name in ["checkpoint.txt", "history.csv", "config.txt", "manifest.json", "normalization.csv"] {
        assert!(run.join(name).exists(), "{name}");
    }
    assert_eq!(fs::read_to_string(run.join("history.csv")).unwrap().lines().count(), 4);

    let ev = tmp.path().join("ev");
    let table = ok(&[
        "evaluate",
        "--fixture",
        s(&fx),
        "--checkpoint",
        s(&run.join("checkpoint.txt")),
        "--subset",
        s(&fx.join("followers.txt")),
        "--out",
        s(&ev),
    ]);
    assert!(table.contains("MCC"));
    let text = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(text.starts_with("accuracy,precision,recall,f1,mcc"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["config"]["lag"], 4, "lag comes from config.txt next to the checkpoint");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_epochs_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let fx = small_fixture(tmp.path());
    let out = mgcgru(&["train", "--fixture", s(&fx), "--out", s(&tmp.path().join("r")), "--epochs", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn checkpoint_reproduces_forward_outputs_bit_exactly() {
    let tmp = TempDir::new().unwrap();
    let fx = small_fixture(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--fixture", s(&fx), "--out", s(&run), "--epochs", "2", "--mode", "single-I"]);
    let ckpt = run.join("checkpoint.txt");
    let ev = tmp.path().join("ev");
    ok(&["evaluate", "--fixture", s(&fx), "--checkpoint", s(&ckpt), "--out", s(&ev)]);

    let params = checkpoint::load(&ckpt).unwrap();
    let exp = Experiment::load(&InputPaths::fixture(&fx), 5).unwrap();
    let expected = exp.predictions(&params, 1, &exp.prepared.samples.test).unwrap();
    let written = mgcgru::metrics::read_predictions(ev.join("predictions.csv")).unwrap();
    assert_eq!(written.len(), expected.len());
    for (a, b) in written.iter().zip(&expected) {
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        assert_eq!((&a.day, &a.stock_id, a.label), (&b.day, &b.stock_id, b.label));
    }

    // resuming starts from the checkpoint and must match its mode
    ok(&[
        "train",
        "--fixture",
        s(&fx),
        "--out",
        s(&tmp.path().join("r2")),
        "--epochs",
        "1",
        "--mode",
        "single-I",
        "--resume",
        s(&ckpt),
    ]);
    let bad = mgcgru(&[
        "train",
        "--fixture",
        s(&fx),
        "--out",
        s(&tmp.path().join("r3")),
        "--mode",
        "multi",
        "--resume",
        s(&ckpt),
    ]);
    assert!(!bad.status.success());
}

fn write_predictions(path: &Path, rows: impl Iterator<Item = (f64, u8)>) {
    let mut text = String::from("day,stock_id,probability,label\n");
    for (i, (p, y)) in rows.enumerate() {
        text.push_str(&format!("2020-01-{:02},S{:03},{p},{y}\n", 1 + i / 100 % 28, i % 100));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn perfect_predictions_score_all_ones() {
    let tmp = TempDir::new().unwrap();
    let preds = tmp.path().join("p.csv");
    write_predictions(&preds, (0..200).map(|i| if i % 3 == 0 { (0.9, 1) } else { (0.1, 0) }));
    let out = tmp.path().join("ev");
    ok(&["evaluate", "--predictions", s(&preds), "--out", s(&out)]);
    let row = csv_row(&out.join("metrics.csv"));
    for name in ["accuracy", "precision", "recall", "f1", "mcc"] {
        assert_eq!(column(&row, name), 1.0, "{name}");
    }
}

#[test]
fn random_predictions_score_near_half() {
    let tmp = TempDir::new().unwrap();
    let preds = tmp.path().join("p.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows: Vec<(f64, u8)> =
        (0..2000).map(|_| (rng.random_range(0.0..1.0), u8::from(rng.random_bool(0.5)))).collect();
    write_predictions(&preds, rows.into_iter());
    let out = tmp.path().join("ev");
    ok(&["evaluate", "--predictions", s(&preds), "--out", s(&out)]);
    let acc = column(&csv_row(&out.join("metrics.csv")), "accuracy");
    // binomial sd is about 0.011, so ±0.05 is over four sd
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn gradcheck_passes_and_flags_a_corrupted_tensor() {
    let tmp = TempDir::new().unwrap();
    let good = tmp.path().join("good");
    let report = ok(&["gradcheck", "--out", s(&good)]);
    for name in ["gcn_w1", "gcn_w2", "graph_coeffs", "dynamic_l", "gru_wr", "gru_wu", "gru_wh", "out_w"] {
        assert!(report.contains(name), "{name} missing from report");
    }
    assert!(fs::read_to_string(good.join("gradcheck.txt")).unwrap().contains("PASS"));

    let bad =
        mgcgru(&["gradcheck", "--mode", "multi", "--corrupt-tensor", "gru_wh", "--out", s(&tmp.path().join("bad"))]);
    assert!(!bad.status.success());
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.lines().any(|l| l.contains("gru_wh") && l.contains("FAIL")), "{stdout}");
}

#[test]
fn graph_builder_edge_cases() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let fx = small_fixture(d);
    // leader rows of the industry graph point at followers with weight above one
    let g = d.join("g");
    ok(&["build-graphs", "--fixture", s(&fx), "--out", s(&g)]);
    let ind = dense(&g.join("adjacency_I.csv"));
    let followers = fs::read_to_string(fx.join("followers.txt")).unwrap();
    let n_leaders = 12 - followers.lines().count();
    for leader in ind.iter().take(n_leaders) {
        assert!(leader.iter().filter(|&&w| w > 1.0).count() > 0);
    }

    fs::write(d.join("sh.csv"), "holder_id,held_id,ratio\n").unwrap();
    fs::write(d.join("tp.csv"), "stock_id,topic\nS000,a\nS001,b\nS002,c\n").unwrap();
    fs::write(d.join("u.txt"), "S000\nS001\nS002\n").unwrap();
    let out = d.join("edge");
    ok(&[
        "build-graphs",
        "--prices",
        s(&fx.join("prices.csv")),
        "--universe",
        s(&d.join("u.txt")),
        "--shareholding",
        s(&d.join("sh.csv")),
        "--topicality",
        s(&d.join("tp.csv")),
        "--out",
        s(&out),
    ]);
    for m in ["adjacency_S.csv", "adjacency_T.csv"] {
        assert!(dense(&out.join(m)).iter().flatten().all(|&w| w == 0.0), "{m}");
    }
    let density = fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(density.contains("shareholding,0,0"), "{density}");
}

#[test]
fn identical_runs_write_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let fx = small_fixture(tmp.path());
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for r in &runs {
        ok(&["train", "--fixture", s(&fx), "--out", s(r), "--epochs", "2", "--shuffle", "--seed", "3"]);
    }
    for name in ["checkpoint.txt", "history.csv", "config.txt", "normalization.csv"] {
        assert_eq!(fs::read(runs[0].join(name)).unwrap(), fs::read(runs[1].join(name)).unwrap(), "{name}");
    }
}
