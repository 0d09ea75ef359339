//! Acceptance suite. Runs with `harness = false` so every criterion prints a
//! PASS/FAIL line even when the suite succeeds.
//!
//! A criterion listed in `KNOWN_DEVIATIONS` may fail without failing the
//! suite; its reason is printed next to the result.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use mgcgru::graphs::{normalized_laplacian, AdjacencyMatrix, GraphKind, Laplacian};
use mgcgru::metrics::{compute_metrics, confusion, ConfusionCounts};
use mgcgru::net::{forward_window, gcn_layer, gru_step, Activation, Dims, GraphOperators, Mode, ModelParams};
use mgcgru::optim::cross_entropy_loss;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const KNOWN_DEVIATIONS: &[(u32, &str)] = &[(
    8,
    "the stated MCC target 0.14586 does not follow from the MCC formula; \
     (30*20 - 10*40) / sqrt(40*70*50*60) = 200 / 2244.99 = 0.0890871",
)];

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn mgcgru(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mgcgru")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("mgcgru {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metric(path: &Path, name: &str) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty metrics file")?;
    let row = lines.next().ok_or("no metrics row")?;
    let col = header.split(',').position(|h| h == name).ok_or("missing column")?;
    row.split(',').nth(col).and_then(|v| v.parse().ok()).ok_or_else(|| "bad value".into())
}

/// Trains `mode` with default hyperparameters and returns follower-only test accuracy.
fn follower_accuracy(fixture: &Path, work: &Path, mode: &str) -> Result<f64, String> {
    let run = work.join(format!("train-{mode}"));
    let ev = work.join(format!("eval-{mode}"));
    mgcgru(&["train", "--fixture", s(fixture), "--mode", mode, "--out", s(&run)])?;
    mgcgru(&[
        "evaluate",
        "--fixture",
        s(fixture),
        "--checkpoint",
        s(&run.join("checkpoint.txt")),
        "--subset",
        s(&fixture.join("followers.txt")),
        "--out",
        s(&ev),
    ])?;
    metric(&ev.join("metrics.csv"), "accuracy")
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Array2<f64> {
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                let v = rng.random_range(0.05..3.0);
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
    }
    w
}

fn jittered(dims: Dims, mode: Mode, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(dims, mode, 1, seed).unwrap();
    p.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3)));
    p
}

fn criterion_2(work: &Path) -> Result<(bool, String), String> {
    let t = Instant::now();
    let report = mgcgru(&["gradcheck", "--out", s(&work.join("gradcheck"))]);
    let secs = t.elapsed().as_secs_f64();
    let text = match report {
        Ok(t) => t,
        Err(e) => return Ok((false, e)),
    };
    let worst = text
        .lines()
        .filter_map(|l| l.split("max rel ").nth(1))
        .filter_map(|r| r.split_whitespace().next()?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    let modes = text.lines().filter(|l| l.trim() == "PASS").count();
    Ok((
        modes == Mode::ALL.len() && worst < 1e-4 && secs < 30.0,
        format!("{modes}/{} modes pass, max rel error {worst:.2e}, {secs:.2} s", Mode::ALL.len()),
    ))
}

fn criterion_3() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut gcn_err: f64 = 0.0;
    for trial in 0..50 {
        let n = 1 + trial % 8;
        let (fi, fo) = (rng.random_range(1..6), rng.random_range(1..6));
        let h = rand_matrix(&mut rng, n, fi);
        let p = normalized_laplacian(
            &AdjacencyMatrix::new(GraphKind::Industry, random_symmetric(&mut rng, n, 0.5)).unwrap(),
        )
        .matrix;
        let w = rand_matrix(&mut rng, fi, fo);
        let (_, out) = gcn_layer(h.view(), p.view(), w.view(), Activation::Relu, "acc").map_err(|e| e.to_string())?;
        for i in 0..n {
            for c in 0..fo {
                let mut z = 0.0;
                for j in 0..n {
                    for a in 0..fi {
                        z += p[[i, j]] * h[[j, a]] * w[[a, c]];
                    }
                }
                gcn_err = gcn_err.max((out[[i, c]] - z.max(0.0)).abs());
            }
        }
    }

    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut gru_err: f64 = 0.0;
    for seed in 0..10 {
        let dims = Dims { n: 4, f: 3, c1: 3, c: 2, h: 5, g: 3 };
        let p = jittered(dims, Mode::Multi, seed);
        let h = rand_matrix(&mut rng, dims.n, dims.h);
        let x = rand_matrix(&mut rng, dims.n, dims.f);
        let g = rand_matrix(&mut rng, dims.n, dims.c);
        let (next, _) = gru_step(h.view(), x.view(), Some(g.view()), &p).map_err(|e| e.to_string())?;
        for st in 0..dims.n {
            let v: Vec<f64> = h.row(st).iter().chain(x.row(st)).chain(g.row(st)).copied().collect();
            let lin = |w: &Array2<f64>, b: &Array1<f64>, v: &[f64], c: usize| {
                let mut z = b[c];
                for (a, x) in v.iter().enumerate() {
                    z += x * w[[a, c]];
                }
                z
            };
            let mut reset = v.clone();
            for (c, r) in reset.iter_mut().enumerate().take(dims.h) {
                *r *= sig(lin(&p.gru_wr, &p.gru_br, &v, c));
            }
            for c in 0..dims.h {
                let u = sig(lin(&p.gru_wu, &p.gru_bu, &v, c));
                let want = u * h[[st, c]] + (1.0 - u) * lin(&p.gru_wh, &p.gru_bh, &reset, c).tanh();
                gru_err = gru_err.max((next[[st, c]] - want).abs());
            }
        }
    }

    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..60);
        let preds: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let labels: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let mut brute = ConfusionCounts::default();
        for (&p, &y) in preds.iter().zip(&labels) {
            match (p, y) {
                (1, 1) => brute.tp += 1,
                (0, 0) => brute.tn += 1,
                (1, 0) => brute.fp += 1,
                _ => brute.fn_ += 1,
            }
        }
        let got = compute_metrics(confusion(&preds, &labels).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let hits = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
        if got.counts != brute || got.accuracy != hits as f64 / len as f64 {
            mismatches += 1;
        }
    }
    Ok((
        gcn_err <= 1e-12 && gru_err <= 1e-12 && mismatches == 0,
        format!("gcn max err {gcn_err:.1e}, gru max err {gru_err:.1e}, metric mismatches {mismatches}/1000"),
    ))
}

fn criterion_4() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 9;
    let dims = Dims { n, f: 5, c1: 6, c: 6, h: 8, g: 6 };
    let adjs: Vec<Array2<f64>> = (0..3).map(|_| random_symmetric(&mut rng, n, 0.4)).collect();
    let laps = |perm: &[usize]| -> Vec<Laplacian> {
        GraphKind::ALL
            .iter()
            .zip(&adjs)
            .map(|(&k, a)| {
                let w = Array2::from_shape_fn((n, n), |(i, j)| a[[perm[i], perm[j]]]);
                normalized_laplacian(&AdjacencyMatrix::new(k, w).unwrap())
            })
            .collect()
    };
    let ident: Vec<usize> = (0..n).collect();
    let perm = vec![4, 7, 0, 8, 2, 1, 6, 3, 5];
    let window = Array3::from_shape_simple_fn((5, n, dims.f), || rng.random_range(0.0..1.0));
    let window_p = window.select(Axis(1), &perm);
    let mut equivariant = true;
    for mode in Mode::ALL {
        let p = jittered(dims, mode, 3);
        let mut pp = p.clone();
        if mode == Mode::Dynamic {
            pp.dynamic_l = Array2::from_shape_fn((n, n), |(i, j)| p.dynamic_l[[perm[i], perm[j]]]);
        }
        let a = forward_window(window.view(), &GraphOperators::new(mode, &laps(&ident), 1, n).unwrap(), &p)
            .map_err(|e| e.to_string())?
            .probs;
        let b = forward_window(window_p.view(), &GraphOperators::new(mode, &laps(&perm), 1, n).unwrap(), &pp)
            .map_err(|e| e.to_string())?
            .probs;
        equivariant &= perm.iter().enumerate().all(|(i, &src)| b[i].to_bits() == a[src].to_bits());
    }

    let mut p = jittered(dims, Mode::Dynamic, 5);
    p.dynamic_l = Array2::eye(n);
    let ops = GraphOperators::new(Mode::Dynamic, &[], 1, n).unwrap();
    let base = forward_window(window.view(), &ops, &p).map_err(|e| e.to_string())?.probs;
    let mut local = true;
    for j in 0..n {
        let mut w = window.clone();
        w.index_axis_mut(Axis(1), j).mapv_inplace(|v| 1.0 - v);
        let moved = forward_window(w.view(), &ops, &p).map_err(|e| e.to_string())?.probs;
        local &= (0..n).filter(|&i| i != j).all(|i| moved[i].to_bits() == base[i].to_bits());
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..200 {
        let size = 1 + trial % 16;
        let density = [0.0, 0.2, 0.6, 1.0][trial % 4];
        let l = normalized_laplacian(
            &AdjacencyMatrix::new(GraphKind::Topicality, random_symmetric(&mut rng, size, density)).unwrap(),
        );
        let m = nalgebra::DMatrix::from_fn(size, size, |i, j| l.matrix[[i, j]]);
        for ev in m.symmetric_eigen().eigenvalues.iter() {
            lo = lo.min(*ev);
            hi = hi.max(*ev);
        }
    }
    let spectrum_ok = lo >= -1e-9 && hi <= 2.0 + 1e-9;
    Ok((
        equivariant && local && spectrum_ok,
        format!(
            "permutation bit-exact {equivariant}, identity locality {local}, spectrum [{lo:.3e}, {hi:.6}] over 200 graphs"
        ),
    ))
}

fn criterion_5(fixture: &Path, work: &Path) -> Result<(bool, String), String> {
    let t = Instant::now();
    let multi = follower_accuracy(fixture, work, "multi")?;
    let none = follower_accuracy(fixture, work, "none")?;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        multi >= 0.70 && multi - none >= 0.05 && secs < 300.0,
        format!(
            "follower test accuracy multi {multi:.4}, none {none:.4}, gap {:.1} points, {secs:.1} s",
            100.0 * (multi - none)
        ),
    ))
}

fn criterion_6(work: &Path) -> Result<(bool, String), String> {
    let fixture = work.join("decoy");
    mgcgru(&["synth", "--out", s(&fixture), "--decoy", "--n-industries", "10"])?;
    let acc = |mode| follower_accuracy(&fixture, work, mode);
    let (sh, ind, top) = (acc("single-S")?, acc("single-I")?, acc("single-T")?);
    let margin = ind - sh.max(top);
    Ok((
        margin >= 0.03,
        format!("single-I {ind:.4}, single-S {sh:.4}, single-T {top:.4}, margin {:.1} points", 100.0 * margin),
    ))
}

fn criterion_7(fixture: &Path, work: &Path) -> Result<(bool, String), String> {
    let t = Instant::now();
    let tables: Vec<String> = (0..2)
        .map(|i| {
            let out = work.join(format!("sweep{i}"));
            mgcgru(&[
                "sweep-lag",
                "--fixture",
                s(fixture),
                "--subset",
                s(&fixture.join("followers.txt")),
                "--out",
                s(&out),
            ])?;
            fs::read_to_string(out.join("sweep.csv")).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<&str> = tables[0].lines().skip(1).collect();
    let lags: Vec<&str> = rows.iter().filter_map(|r| r.split(',').next()).collect();
    let acc = |lag: &str| -> Option<f64> {
        rows.iter().find(|r| r.starts_with(&format!("{lag},"))).and_then(|r| r.split(',').nth(1)?.parse().ok())
    };
    let note = match (acc("3"), acc("7")) {
        (Some(a3), Some(a7)) => format!("; ACC(3) {a3:.4} vs ACC(7) {a7:.4}"),
        _ => String::new(),
    };
    Ok((
        lags == ["3", "5", "7", "9", "11"] && tables[0] == tables[1],
        format!(
            "{} rows, identical across invocations {}{note}, {:.0} s",
            rows.len(),
            tables[0] == tables[1],
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn criterion_8() -> Result<(bool, String), String> {
    let half = Array1::from_elem(8, 0.5);
    let labels = Array1::from_vec(vec![1u8, 0, 0, 1, 1, 0, 1, 0]);
    let loss = cross_entropy_loss(half.view(), labels.view()).map_err(|e| e.to_string())?;
    let loss_ok = (loss - std::f64::consts::LN_2).abs() <= 1e-12;
    let counts = ConfusionCounts { tp: 30, tn: 20, fp: 10, fn_: 40 };
    let mcc = compute_metrics(counts).map_err(|e| e.to_string())?.mcc;
    let mcc_ok = (mcc - 0.14586).abs() <= 1e-4;
    Ok((
        loss_ok && mcc_ok,
        format!("loss(0.5) - ln 2 = {:.1e}; MCC hand case {mcc:.7} (target 0.14586)", loss - std::f64::consts::LN_2),
    ))
}

fn criterion_9(fixture: &Path, work: &Path) -> Result<(bool, String), String> {
    let runs: Vec<PathBuf> = (0..2).map(|i| work.join(format!("det{i}"))).collect();
    for r in &runs {
        mgcgru(&["train", "--fixture", s(fixture), "--epochs", "5", "--shuffle", "--out", s(r)])?;
    }
    let same = |name: &str| fs::read(runs[0].join(name)).ok() == fs::read(runs[1].join(name)).ok();
    let (ck, hist) = (same("checkpoint.txt"), same("history.csv"));
    Ok((ck && hist, format!("checkpoint identical {ck}, history identical {hist}")))
}

fn main() -> ExitCode {
    let tmp = TempDir::new().expect("temp dir");
    let work = tmp.path();
    let fixture = work.join("planted");
    let started = Instant::now();

    println!("acceptance suite");
    println!(
        "criterion 1: REFERENCE  large-market accuracy/MCC reference figures 0.5754/0.2171 and 0.5885/0.2377 need proprietary market data; \
         not reproduced, replaced by criteria 2-9"
    );
    let synth = mgcgru(&[
        "synth",
        "--out",
        s(&fixture),
        "--n-stocks",
        "20",
        "--n-industries",
        "4",
        "--beta",
        "0.8",
        "--sigma",
        "0.01",
        "--n-days",
        "1000",
        "--seed",
        "7",
    ]);
    if let Err(e) = synth {
        println!("fixture generation failed: {e}");
        return ExitCode::FAILURE;
    }

    type Check<'a> = Box<dyn FnOnce() -> Result<(bool, String), String> + 'a>;
    let checks: Vec<(u32, &str, Check)> = vec![
        (2, "gradient check", Box::new(|| criterion_2(work))),
        (3, "oracle equivalence", Box::new(criterion_3)),
        (4, "structural invariants", Box::new(criterion_4)),
        (5, "cross effect", Box::new(|| criterion_5(&fixture, work))),
        (6, "relationship ordering", Box::new(|| criterion_6(work))),
        (7, "lag sweep", Box::new(|| criterion_7(&fixture, work))),
        (8, "loss arithmetic", Box::new(criterion_8)),
        (9, "determinism", Box::new(|| criterion_9(&fixture, work))),
    ];
    let mut outcomes = Vec::new();
    for (id, name, check) in checks {
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let known = KNOWN_DEVIATIONS.iter().find(|(k, _)| *k == id);
        print!("criterion {id}: {}  {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        match (passed, known) {
            (false, Some((_, why))) => println!(" [known deviation: {why}]"),
            _ => println!(),
        }
        outcomes.push(Outcome { id, passed, detail });
    }

    let unexpected: Vec<&Outcome> =
        outcomes.iter().filter(|o| !o.passed && !KNOWN_DEVIATIONS.iter().any(|(k, _)| *k == o.id)).collect();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!(
        "{passed}/{} criteria pass, {} known deviation(s), {:.0} s total",
        outcomes.len(),
        outcomes.len() - passed - unexpected.len(),
        started.elapsed().as_secs_f64()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for o in unexpected {
            println!("unexpected failure of criterion {}: {}", o.id, o.detail);
        }
        ExitCode::FAILURE
    }
}
