use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mgcgru::graphs::{graph_density, write_dense_csv};
use mgcgru::metrics::{read_predictions, write_predictions, MetricsReport};
use mgcgru::optim::{gradcheck as run_gradcheck, GradcheckConfig, StopReason};
use mgcgru::pipeline::{evaluate_records, load_graphs, read_id_list, resolve_universe, Experiment, InputPaths};
use mgcgru::synth::{self, SynthConfig};
use mgcgru::{checkpoint, Mode, ModelParams, TrainConfig};
use serde_json::{json, Value};

use crate::manifest::Recorder;
use crate::{BuildGraphsArgs, DataArgs, EvaluateArgs, GradcheckArgs, ModelArgs, SweepArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const CONFIG_FILE: &str = "config.txt";

impl DataArgs {
    fn paths(&self) -> Result<InputPaths> {
        let from_fixture = |name: &str| self.fixture.as_ref().map(|d| d.join(name)).filter(|p| p.exists());
        let prices = self
            .prices
            .clone()
            .or_else(|| from_fixture(synth::PRICES_FILE))
            .context("no prices file: pass --prices or --fixture")?;
        Ok(InputPaths {
            prices,
            shareholding: self.shareholding.clone().or_else(|| from_fixture(synth::SHAREHOLDING_FILE)),
            industry: self.industry.clone().or_else(|| from_fixture(synth::INDUSTRY_FILE)),
            topicality: self.topicality.clone().or_else(|| from_fixture(synth::TOPICALITY_FILE)),
            universe: self.universe.clone(),
        })
    }
}

impl ModelArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainConfig::from_kv(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        macro_rules! apply {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        apply!(lag => lag, k => k, lr => learning_rate, batch => batch_size, epochs => max_epochs,
               patience => patience, seed => seed, c1 => c1, c => c, h => h, g => g);
        if self.shuffle {
            cfg.shuffle = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key = value` lines as a JSON object.
fn kv_json(text: &str) -> Value {
    let map = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| {
            let v = v.trim();
            let value = v
                .parse::<i64>()
                .map(Value::from)
                .or_else(|_| v.parse::<f64>().map(Value::from))
                .or_else(|_| v.parse::<bool>().map(Value::from))
                .unwrap_or_else(|_| Value::from(v));
            (k.trim().to_string(), value)
        })
        .collect();
    Value::Object(map)
}

fn read_subset(path: Option<&Path>) -> Result<Option<HashSet<String>>> {
    path.map(|p| read_id_list(p).map(|ids| ids.into_iter().collect()).map_err(Into::into)).transpose()
}

fn load_experiment(paths: &InputPaths, lag: usize) -> Result<Experiment> {
    let exp = Experiment::load(paths, lag)?;
    if !exp.unknown_ids.is_empty() {
        log::warn!(
            "{} price-file ids are outside the universe and were ignored: {}",
            exp.unknown_ids.len(),
            exp.unknown_ids.join(" ")
        );
    }
    let s = &exp.prepared.samples;
    log::info!(
        "{} stocks, lag {lag}: {} train / {} val / {} test windows, graphs {}",
        exp.universe.len(),
        s.train.len(),
        s.val.len(),
        s.test.len(),
        exp.graphs.adjacency.iter().map(|a| a.kind.letter()).collect::<String>()
    );
    Ok(exp)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines().map(|l| l.split('#').next().unwrap_or("").trim()) {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("bad config line `{line}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
    }
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    apply!(n_stocks => n_stocks, n_days => n_days, n_industries => n_industries,
           leaders_per_industry => leaders_per_industry, beta => lead_strength, sigma => noise_sigma,
           leader_sigma => leader_sigma, topic_count => topic_count, seed => seed);
    if args.decoy {
        cfg.decoy_graphs = true;
    }
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    let mut rec = Recorder::new("synth", &args.out, &inputs)?;
    let (market, paths) = synth::generate(&cfg, &args.out)?;
    for p in [paths.prices, paths.shareholding, paths.industry, paths.topicality, paths.followers, paths.manifest] {
        rec.track(p);
    }
    println!(
        "{} stocks, {} days, {} followers; oracle follower accuracy {:.4}",
        market.ids.len(),
        market.calendar.len(),
        market.followers().len(),
        synth::oracle_accuracy(&market)
    );
    rec.finish(Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    Ok(())
}

pub fn build_graphs(args: BuildGraphsArgs) -> Result<()> {
    let paths = args.data.paths()?;
    let universe = resolve_universe(&paths)?;
    let graphs = load_graphs(&paths, &universe)?;
    if graphs.adjacency.is_empty() {
        bail!("no relationship files given (--shareholding, --industry, --topicality or --fixture)");
    }
    let mut rec = Recorder::new("build-graphs", &args.out, &paths.all())?;
    let mut density = String::from("graph,density,edges\n");
    println!("{:<14} {:>8} {:>6}", "graph", "density", "edges");
    for (adj, lap) in graphs.adjacency.iter().zip(&graphs.laplacians) {
        let letter = adj.kind.letter();
        let a_path = rec.path(&format!("adjacency_{letter}.csv"));
        write_dense_csv(&a_path, adj.weights.view(), &universe)?;
        rec.track(a_path);
        let l_path = rec.path(&format!("laplacian_{letter}.csv"));
        write_dense_csv(&l_path, lap.matrix.view(), &universe)?;
        rec.track(l_path);
        let d = graph_density(adj);
        let edges = adj.weights.iter().filter(|&&w| w != 0.0).count();
        println!("{:<14} {:>8.4} {:>6}", adj.kind.name(), d, edges);
        density.push_str(&format!("{},{d},{edges}\n", adj.kind.name()));
    }
    rec.write("density.csv", density)?;
    rec.finish(None, json!({ "stocks": universe.len() }))?;
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.model.resolve()?;
    let paths = args.data.paths()?;
    let mut inputs = paths.all();
    inputs.extend(args.model.config.as_deref());
    inputs.extend(args.resume.as_deref());
    let mut rec = Recorder::new("train", &args.out, &inputs)?;

    let exp = load_experiment(&paths, cfg.lag)?;
    let init = match &args.resume {
        Some(p) => {
            let params = checkpoint::load(p)?;
            if params.mode != cfg.mode {
                bail!("checkpoint {} is mode {}, config asks for {}", p.display(), params.mode, cfg.mode);
            }
            Some(params)
        }
        None => None,
    };
    let outcome = exp.train(&cfg, init)?;

    rec.write(CONFIG_FILE, cfg.to_kv())?;
    rec.write("history.csv", outcome.history.to_csv())?;
    let timing: String = std::iter::once("epoch,seconds\n".to_string())
        .chain(outcome.history.epochs.iter().enumerate().map(|(i, e)| format!("{},{:.3}\n", i + 1, e.seconds)))
        .collect();
    rec.write("timing.csv", timing)?;
    let norm = rec.path("normalization.csv");
    exp.prepared.normalization.write_csv(&norm, &exp.universe)?;
    rec.track(norm);
    rec.write(CHECKPOINT_FILE, checkpoint::to_string(&outcome.params))?;

    let h = &outcome.history;
    let stop = outcome.stop.clone();
    rec.finish(Some(cfg.seed), kv_json(&cfg.to_kv()))?;
    if let StopReason::Diverged { epoch } = stop {
        bail!("training diverged at epoch {epoch}; history written to {}", args.out.display());
    }
    let best = h.best_epoch.map(|b| &h.epochs[b]);
    println!(
        "{} epochs ({:?}); best epoch {} val loss {:.5} val accuracy {:.4}",
        h.epochs.len(),
        stop,
        h.best_epoch.map_or(0, |b| b + 1),
        best.map_or(f64::NAN, |e| e.val_loss),
        best.map_or(f64::NAN, |e| e.val_accuracy)
    );
    println!("checkpoint written to {}", args.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn checkpoint_lag(checkpoint: &Path) -> Result<Option<usize>> {
    let cfg_path = checkpoint.with_file_name(CONFIG_FILE);
    if !cfg_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&cfg_path)?;
    Ok(Some(TrainConfig::from_kv(&text)?.lag))
}

fn print_report(report: &MetricsReport) {
    println!("{report}");
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let subset = read_subset(args.subset.as_deref())?;
    let (records, mut rec, inputs_cfg) = match (&args.predictions, &args.checkpoint) {
        (Some(p), _) => {
            let mut inputs = vec![p.as_path()];
            inputs.extend(args.subset.as_deref());
            let rec = Recorder::new("evaluate", &args.out, &inputs)?;
            (read_predictions(p)?, rec, json!({ "predictions": p.display().to_string() }))
        }
        (None, Some(ckpt)) => {
            let params: ModelParams = checkpoint::load(ckpt)?;
            let lag = match args.lag {
                Some(l) => l,
                None => checkpoint_lag(ckpt)?.unwrap_or(TrainConfig::default().lag),
            };
            let paths = args.data.paths()?;
            let mut inputs = paths.all();
            inputs.push(ckpt.as_path());
            inputs.extend(args.subset.as_deref());
            let mut rec = Recorder::new("evaluate", &args.out, &inputs)?;
            let exp = load_experiment(&paths, lag)?;
            let records = exp.predictions(&params, params.k.max(1), exp.split(&args.split)?)?;
            let path = rec.path("predictions.csv");
            write_predictions(&path, &records)?;
            rec.track(path);
            let cfg = json!({
                "checkpoint": ckpt.display().to_string(),
                "mode": params.mode.to_string(),
                "lag": lag,
                "split": args.split,
            });
            (records, rec, cfg)
        }
        (None, None) => bail!("pass --checkpoint or --predictions"),
    };
    let report = evaluate_records(&records, subset.as_ref(), args.threshold)?;
    print_report(&report);
    rec.write("metrics.csv", report.to_csv())?;
    let mut cfg = inputs_cfg;
    cfg["threshold"] = json!(args.threshold);
    cfg["subset"] = json!(args.subset.as_ref().map(|p| p.display().to_string()));
    rec.finish(None, cfg)?;
    Ok(())
}

pub fn sweep_lag(args: SweepArgs) -> Result<()> {
    let base = args.model.resolve()?;
    if args.lags.is_empty() {
        bail!("no lags given");
    }
    let paths = args.data.paths()?;
    let subset = read_subset(args.subset.as_deref())?;
    let mut inputs = paths.all();
    inputs.extend(args.model.config.as_deref());
    inputs.extend(args.subset.as_deref());
    let mut rec = Recorder::new("sweep-lag", &args.out, &inputs)?;

    let mut table = String::from("lag,accuracy,mcc\n");
    println!("{:>4} {:>9} {:>9}", "lag", "ACC", "MCC");
    for &lag in &args.lags {
        let cfg = TrainConfig { lag, ..base.clone() };
        cfg.validate()?;
        let exp = load_experiment(&paths, lag)?;
        let outcome = exp.train(&cfg, None)?;
        if let StopReason::Diverged { epoch } = outcome.stop {
            bail!("lag {lag}: training diverged at epoch {epoch}");
        }
        let records = exp.predictions(&outcome.params, cfg.k, &exp.prepared.samples.test)?;
        let m = evaluate_records(&records, subset.as_ref(), args.threshold)?;
        println!("{lag:>4} {:>9.4} {:>9.4}", m.accuracy, m.mcc);
        table.push_str(&format!("{lag},{:.6},{:.6}\n", m.accuracy, m.mcc));
    }
    rec.write("sweep.csv", table)?;
    let mut cfg = kv_json(&base.to_kv());
    cfg["lags"] = json!(args.lags);
    cfg["threshold"] = json!(args.threshold);
    rec.finish(Some(base.seed), cfg)?;
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let modes: Vec<Mode> = match args.mode {
        Some(m) => vec![m],
        None => Mode::ALL.to_vec(),
    };
    let mut rec = Recorder::new("gradcheck", &args.out, &[])?;
    let mut text = String::new();
    let mut failed = Vec::new();
    let mut corrupted_any = false;
    for mode in modes {
        let mut cfg = GradcheckConfig::new(mode);
        cfg.k = args.k;
        cfg.tolerance = args.tolerance;
        if let Some(name) = &args.corrupt_tensor {
            let has = ModelParams::init(cfg.dims, mode, cfg.k, 0)?.tensors().iter().any(|t| t.name == name);
            if has {
                cfg.corrupt = Some((name.clone(), 1e-3));
                corrupted_any = true;
            }
        }
        let report = run_gradcheck(&cfg, args.seed)?;
        println!("{report}");
        text.push_str(&format!("{report}\n"));
        if !report.passed() {
            failed.push(mode.to_string());
        }
    }
    if let Some(name) = &args.corrupt_tensor {
        if !corrupted_any {
            bail!("no checked mode has a tensor named `{name}`");
        }
    }
    rec.write("gradcheck.txt", text)?;
    rec.finish(
        Some(args.seed),
        json!({
            "k": args.k,
            "tolerance": args.tolerance,
            "corrupt_tensor": args.corrupt_tensor,
        }),
    )?;
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
