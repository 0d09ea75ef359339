//! File-to-metrics glue shared by the command-line tool, the tests and the
//! benchmarks.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_prices, prepare, Prepared, StockUniverse, WindowSample, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::graphs::{
    build_industry_graph, build_shareholding_graph, build_topicality_graph, read_industry, read_shareholding,
    read_topicality, GraphKind, GraphSet,
};
use crate::metrics::{score_records, MetricsReport, PredictionRecord};
use crate::net::{GraphOperators, Mode, ModelParams};
use crate::optim::{predict_samples, train, TrainConfig, TrainOutcome};

/// Input files of one experiment.
#[derive(Debug, Clone, Default)]
pub struct InputPaths {
    pub prices: PathBuf,
    pub shareholding: Option<PathBuf>,
    pub industry: Option<PathBuf>,
    pub topicality: Option<PathBuf>,
    /// Optional file with one stock id per line fixing the node order.
    pub universe: Option<PathBuf>,
}

impl InputPaths {
    /// The conventional file names inside a fixture directory.
    pub fn fixture(dir: impl AsRef<Path>) -> Self {
        let p = crate::synth::FixturePaths::in_dir(dir);
        Self {
            prices: p.prices,
            shareholding: Some(p.shareholding),
            industry: Some(p.industry),
            topicality: Some(p.topicality),
            universe: None,
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.prices.as_path()];
        for p in [&self.shareholding, &self.industry, &self.topicality, &self.universe].into_iter().flatten() {
            v.push(p.as_path());
        }
        v
    }

    fn graph_path(&self, kind: GraphKind) -> Option<&Path> {
        match kind {
            GraphKind::Shareholding => self.shareholding.as_deref(),
            GraphKind::Industry => self.industry.as_deref(),
            GraphKind::Topicality => self.topicality.as_deref(),
        }
    }
}

/// Reads ids listed one per line; blank lines and `#` comments are skipped.
pub fn read_id_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ids: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(Error::NoRows { path: path.to_path_buf() });
    }
    Ok(ids)
}

fn first_appearance(ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.into_iter().filter(|id| seen.insert(id.clone())).collect()
}

fn price_file_ids(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?.clone();
    let col = headers.iter().position(|h| h == "stock_id").ok_or_else(|| Error::Malformed {
        path: path.to_path_buf(),
        line: 1,
        msg: "missing column `stock_id`".into(),
    })?;
    let mut ids = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        if let Some(id) = rec.get(col) {
            ids.push(id.to_string());
        }
    }
    Ok(first_appearance(ids))
}

/// Node order: an explicit universe file, else the industry file order, else
/// the order in which ids first appear in the prices file.
pub fn resolve_universe(paths: &InputPaths) -> Result<StockUniverse> {
    if let Some(u) = &paths.universe {
        return StockUniverse::new(read_id_list(u)?);
    }
    if let Some(ind) = &paths.industry {
        return StockUniverse::new(first_appearance(read_industry(ind)?.into_iter().map(|r| r.stock_id)));
    }
    StockUniverse::new(price_file_ids(&paths.prices)?)
}

/// Builds the graphs whose files are present.
pub fn load_graphs(paths: &InputPaths, universe: &StockUniverse) -> Result<GraphSet> {
    let mut adjacency = Vec::new();
    for kind in GraphKind::ALL {
        let Some(path) = paths.graph_path(kind) else {
            continue;
        };
        adjacency.push(match kind {
            GraphKind::Shareholding => build_shareholding_graph(&read_shareholding(path)?, universe)?,
            GraphKind::Industry => build_industry_graph(&read_industry(path)?, universe)?,
            GraphKind::Topicality => build_topicality_graph(&read_topicality(path)?, universe)?,
        });
    }
    Ok(GraphSet::from_adjacency(adjacency))
}

/// Loaded, aligned and windowed data plus whatever graphs were supplied.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub universe: StockUniverse,
    pub prepared: Prepared,
    pub graphs: GraphSet,
    pub unknown_ids: Vec<String>,
}

impl Experiment {
    pub fn load(paths: &InputPaths, lag: usize) -> Result<Self> {
        let universe = resolve_universe(paths)?;
        let loaded = load_prices(&paths.prices, &universe)?;
        let prepared = prepare(&loaded.series, &universe, lag)?;
        let graphs = load_graphs(paths, &universe)?;
        Ok(Self { universe, prepared, graphs, unknown_ids: loaded.unknown_ids })
    }

    pub fn operators(&self, mode: Mode, k: usize) -> Result<GraphOperators> {
        GraphOperators::new(mode, &self.graphs.laplacians, k, self.universe.len())
    }

    pub fn train(&self, config: &TrainConfig, init: Option<ModelParams>) -> Result<TrainOutcome> {
        let ops = self.operators(config.mode, config.k)?;
        let s = &self.prepared.samples;
        train(&s.train, &s.val, &ops, config, init)
    }

    pub fn split(&self, name: &str) -> Result<&[WindowSample]> {
        let s = &self.prepared.samples;
        match name {
            "train" => Ok(&s.train),
            "val" => Ok(&s.val),
            "test" => Ok(&s.test),
            other => Err(Error::Invalid(format!("unknown split `{other}` (train, val or test)"))),
        }
    }

    /// One record per stock and target day.
    pub fn predictions(
        &self,
        params: &ModelParams,
        k: usize,
        samples: &[WindowSample],
    ) -> Result<Vec<PredictionRecord>> {
        let ops = self.operators(params.mode, k)?;
        let probs = predict_samples(samples, &ops, params)?;
        let calendar = &self.prepared.panel.calendar;
        let mut out = Vec::with_capacity(samples.len() * self.universe.len());
        for (s, p) in samples.iter().zip(probs) {
            let day = calendar[s.day].format(DATE_FORMAT).to_string();
            for (i, (&prob, &label)) in p.iter().zip(&s.labels).enumerate() {
                out.push(PredictionRecord {
                    day: day.clone(),
                    stock_id: self.universe.id(i).to_string(),
                    probability: prob,
                    label,
                });
            }
        }
        Ok(out)
    }
}

/// Pooled metrics over the records whose stock is in `subset` (all when
/// `None`).
pub fn evaluate_records(
    records: &[PredictionRecord],
    subset: Option<&HashSet<String>>,
    threshold: f64,
) -> Result<MetricsReport> {
    let chosen: Vec<PredictionRecord> =
        records.iter().filter(|r| subset.is_none_or(|s| s.contains(&r.stock_id))).cloned().collect();
    if chosen.is_empty() {
        return Err(Error::Invalid("no predictions left after subsetting".into()));
    }
    score_records(&chosen, threshold)
}
